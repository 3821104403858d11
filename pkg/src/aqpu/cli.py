"""Experiment runner: reproduces the evolution/sweep/statistics/trade-off/
switch/reversible experiments from a config file or flags, writing CSV data
and a JSON summary with deterministic, byte-stable output.

Exit codes: 0 success, 1 solver failure (message carries the failure time),
2 configuration errors (message names the offending field).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .clock import make_erlang_clock, tick_density, tick_statistics, concentration_check
from .compiling import (
    compile_bruteforce,
    rotation_z,
    standard_ht_gateset,
    tradeoff_curve,
)
from .engine import (
    SolverConfig,
    evolve_block,
    evolve_full,
    evolve_iid_erlang,
    evolve_reversible,
    program_fidelity,
    switch_reference,
)
from .model import make_gateset, standard_bell_example, superposed_punchcard
from .numerics import IntegrationError, state_metrics, trace_distance
from .thermo import entropy_lower_bound_for_accuracy

EXPERIMENTS = ("bell", "sweep", "clock-stats", "tradeoff", "switch", "reversible")

EVOLUTION_HEADER = "t,p_n0,p_n1,p_n2,p_n3,fid_plus0,fid_bell,ticks_mean"
SWEEP_HEADER = "accuracy,infidelity,entropy_lower_bound"
TRADEOFF_HEADER = "length,epsilon,clock_term,total"
CLOCK_STATS_HEADER = "t,density"
SWITCH_HEADER = "accuracy,trace_distance"
REVERSIBLE_HEADER = "t,tick_rate_forward,tick_rate_backward,fid_bell"


class ConfigError(ValueError):
    pass


def _thread_count() -> int:
    raw = os.environ.get("AQPU_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ConfigError(f"AQPU_THREADS must be an integer, got {raw!r}") from exc
        return max(1, n)
    return os.cpu_count() or 1


def _parallel_map(fn, items):
    """Deterministic map over experiment points; worker count from AQPU_THREADS."""
    n = min(_thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: str, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary(path: str, experiment: str, config: "ExperimentConfig", metrics: dict) -> None:
    payload = {
        "experiment": experiment,
        "seed": config.seed,
        "solver": config.solver,
        "metrics": metrics,
        "versions": {"spec": "1", "package": __version__},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclasses.dataclass
class ExperimentConfig:
    experiment: str
    accuracy: int = 80
    accuracies: tuple[int, ...] = (25, 50, 100, 200, 400, 800, 1600)
    gamma: float = 1.0
    dsigma_tick: float = 2.0
    solver: str = "block"
    target: str = "rz:0.1"
    l_max: int = 12
    rtol: float = 1e-8
    atol: float = 1e-11
    t_end: float | None = None
    samples: int = 161
    seed: int = 0
    trajectories: int = 10000
    out: str = "out.csv"
    summary: str | None = None

    def summary_path(self) -> str:
        if self.summary:
            return self.summary
        base, _, _ = self.out.rpartition(".")
        return (base or self.out) + ".summary.json"


def _check(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{field}: {message}")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config: file not found: {args.config}")
        with open(args.config) as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config: invalid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise ConfigError("config: top level must be an object")
    values["experiment"] = args.experiment
    # flags win over file values
    for field in (
        "accuracy",
        "gamma",
        "dsigma_tick",
        "solver",
        "target",
        "l_max",
        "rtol",
        "atol",
        "t_end",
        "samples",
        "seed",
        "trajectories",
        "out",
        "summary",
    ):
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    if getattr(args, "accuracies", None) is not None:
        values["accuracies"] = args.accuracies
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown configuration field")
    if "accuracies" in values and not isinstance(values["accuracies"], tuple):
        try:
            values["accuracies"] = tuple(int(a) for a in values["accuracies"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("accuracies: must be a list of integers") from exc
    if values["experiment"] == "tradeoff":
        values.setdefault("accuracy", 1000)
    if values["experiment"] == "switch":
        values.setdefault("accuracies", (16, 64, 256))
    cfg = ExperimentConfig(**values)
    _check(cfg.experiment in EXPERIMENTS, "experiment", f"must be one of {EXPERIMENTS}")
    _check(cfg.accuracy >= 1, "accuracy", "must be a positive integer")
    _check(cfg.gamma > 0, "gamma", "must be positive")
    _check(cfg.rtol > 0 and cfg.atol > 0, "rtol", "tolerances must be positive")
    _check(cfg.samples >= 2, "samples", "need at least two sample times")
    _check(cfg.seed >= 0, "seed", "must be non-negative")
    _check(all(a >= 1 for a in cfg.accuracies), "accuracies", "must be positive integers")
    _check(cfg.dsigma_tick > 0, "dsigma_tick", "must be positive (inf = irreversible)")
    solvers = {
        "bell": ("block", "full"),
        "sweep": ("block", "iid"),
        "clock-stats": ("block",),
        "tradeoff": ("iid",),
        "switch": ("full",),
        "reversible": ("reversible",),
    }
    allowed = solvers[cfg.experiment]
    if cfg.experiment in ("clock-stats", "tradeoff", "switch", "reversible"):
        # fixed solver per experiment; default or matching value accepted
        if cfg.solver not in allowed + ("block",):
            raise ConfigError(f"solver: experiment {cfg.experiment} uses {allowed[0]}")
        cfg.solver = allowed[0]
    else:
        _check(
            cfg.solver in allowed,
            "solver",
            f"experiment {cfg.experiment} supports {allowed}",
        )
    return cfg


# ---------------------------------------------------------------------------
# experiments


def _bell_rows(config: ExperimentConfig):
    ex = standard_bell_example()
    t_end = config.t_end if config.t_end is not None else 4.0
    ts = np.linspace(0.0, t_end, config.samples)
    solver_cfg = SolverConfig(
        rtol=config.rtol,
        atol=config.atol,
        t_end=t_end,
        sample_times=tuple(ts),
        rng_seed=config.seed,
        trajectory_count=config.trajectories,
    )
    spec = make_erlang_clock(config.accuracy, config.gamma, max_ticks=ex.punchcard.slots)
    if config.solver == "block":
        traj = evolve_block(spec, ex.gateset, ex.punchcard, ex.initial_state, solver_cfg)
    else:
        traj = evolve_full(spec, ex.gateset, ex.punchcard, ex.initial_state, solver_cfg)
    plus0 = np.kron(np.array([1.0, 1.0]) / math.sqrt(2.0), np.array([1.0, 0.0])).astype(complex)
    probs = traj.tick_probabilities()
    nb = probs.shape[1]
    rows = []
    for i, t in enumerate(ts):
        rho = traj.target_at(float(t))
        _, f_plus = state_metrics(plus0, rho)
        _, f_bell = state_metrics(ex.target_state, rho)
        p = probs[i]
        ticks_mean = float(p @ np.arange(nb))
        rows.append([t, *p[:4], f_plus, f_bell, ticks_mean])
    fid4 = program_fidelity(traj, ex.gateset, ex.program, ex.initial_state, t_eval=t_end)
    metrics = {
        "final_fid_bell": fid4,
        "final_infidelity": 1.0 - fid4,
        "accuracy": config.accuracy,
        "entropy_lower_bound": entropy_lower_bound_for_accuracy(config.accuracy),
    }
    return rows, metrics


def _sweep_point(config: ExperimentConfig, N: int) -> float:
    ex = standard_bell_example()
    t_end = config.t_end if config.t_end is not None else 4.0
    if config.solver == "iid":
        rho = evolve_iid_erlang(ex.gateset, ex.program, N, config.gamma, ex.initial_state)
        fid = program_fidelity(rho, ex.gateset, ex.program, ex.initial_state)
    else:
        spec = make_erlang_clock(N, config.gamma, max_ticks=ex.punchcard.slots)
        solver_cfg = SolverConfig(
            rtol=config.rtol, atol=config.atol, t_end=t_end, sample_times=(0.0, t_end)
        )
        traj = evolve_block(spec, ex.gateset, ex.punchcard, ex.initial_state, solver_cfg)
        fid = program_fidelity(traj, ex.gateset, ex.program, ex.initial_state, t_eval=t_end)
    return 1.0 - fid


def fit_loglog_slope(xs, ys, x_min: float = 100.0) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    mask = xs >= x_min
    if mask.sum() < 2:
        mask = np.ones_like(xs, dtype=bool)
    coeffs = np.polyfit(np.log(xs[mask]), np.log(ys[mask]), 1)
    return float(coeffs[0])


def _sweep_rows(config: ExperimentConfig):
    infids = _parallel_map(lambda N: _sweep_point(config, N), list(config.accuracies))
    rows = [
        [N, infid, entropy_lower_bound_for_accuracy(N)]
        for N, infid in zip(config.accuracies, infids)
    ]
    slope = fit_loglog_slope(config.accuracies, infids)
    metrics = {
        "loglog_slope": slope,
        "infidelities": {str(n): v for n, v in zip(config.accuracies, infids)},
    }
    return rows, metrics


def _clock_stats_rows(config: ExperimentConfig):
    spec = make_erlang_clock(config.accuracy, config.gamma, max_ticks=3)
    grid, density = tick_density(spec, 1)
    stats = tick_statistics(spec)
    report = concentration_check(stats)
    rows = [[t, d] for t, d in zip(grid, density)]
    metrics = {
        "mean": stats.mean,
        "variance": stats.variance,
        "resolution": stats.resolution,
        "accuracy": stats.accuracy,
        "iid": stats.iid,
        "concentration": {
            "alpha": report.alpha,
            "c": report.c,
            "pass_tail": report.pass_tail,
            "pass_moments": report.pass_moments,
            "pass_bernstein": report.pass_bernstein,
        },
    }
    return rows, metrics


def _parse_target(spec_str: str, seed: int) -> np.ndarray:
    kind, _, arg = spec_str.partition(":")
    if kind == "rz":
        return rotation_z(float(arg))
    if kind == "rx":
        th = float(arg)
        c, s = math.cos(th / 2.0), math.sin(th / 2.0)
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "haar":
        rng = np.random.default_rng(int(arg) if arg else seed)
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        q, r = np.linalg.qr(a)
        return q * (np.diag(r) / np.abs(np.diag(r)))
    raise ConfigError(f"target: unknown target spec {spec_str!r} (use rz:θ, rx:θ, haar:seed)")


def _tradeoff_rows(config: ExperimentConfig):
    gateset = standard_ht_gateset()
    target = _parse_target(config.target, config.seed)
    result = compile_bruteforce(target, gateset, config.l_max)
    curve = tradeoff_curve(target, gateset, float(config.accuracy), config.l_max, result)
    rows = [
        [int(L), e, c, tot]
        for L, e, c, tot in zip(curve.lengths, curve.epsilon, curve.clock_term, curve.total)
    ]
    k = curve.argmin_length
    prog = curve.best_programs[k]
    rho0 = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    simulated = evolve_iid_erlang(gateset, prog, config.accuracy, config.gamma, rho0)
    ideal = target @ rho0 @ target.conj().T
    metrics = {
        "argmin_length": k,
        "best_program": list(prog),
        "total_at_argmin": float(curve.total[k]),
        "interior_minimum": curve.has_interior_minimum,
        "end_to_end_error": trace_distance(simulated, ideal),
    }
    return rows, metrics


def _switch_point(config: ExperimentConfig, D: int, gateset, punchcard, reference) -> float:
    t_end = config.t_end if config.t_end is not None else 4.0
    spec = make_erlang_clock(D, config.gamma, max_ticks=2)
    solver_cfg = SolverConfig(
        rtol=config.rtol, atol=config.atol, t_end=t_end, sample_times=(0.0, t_end)
    )
    rho0 = np.eye(2, dtype=complex) / 2.0
    traj = evolve_full(spec, gateset, punchcard, rho0, solver_cfg)
    return trace_distance(traj.states[-1].register_target(), reference)


def _switch_rows(config: ExperimentConfig):
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    z = np.diag([1.0, -1.0]).astype(complex)
    gateset = make_gateset(
        1.0,
        [(np.pi / 2) * (np.eye(2) - x), (np.pi / 2) * (np.eye(2) - z)],
        labels=("X", "Z"),
    )
    punchcard = superposed_punchcard(
        [(1 / math.sqrt(2), (1, 2)), (1 / math.sqrt(2), (2, 1))], 2
    )
    amps = np.array([1.0, 1.0]) / math.sqrt(2.0)
    rho0 = np.eye(2, dtype=complex) / 2.0
    reference = switch_reference(x, z, amps, rho0)
    accuracies = config.accuracies if config.accuracies else (16, 64, 256)
    dists = _parallel_map(
        lambda D: _switch_point(config, D, gateset, punchcard, reference), list(accuracies)
    )
    # ideal-clock substitution: per-branch ideal evolution, coherently recombined
    joint = np.zeros((4, 4), dtype=complex)
    branch_unitaries = []
    for branch in punchcard.branches:
        u = np.eye(2, dtype=complex)
        for a in branch.steps:
            u = gateset.gate(a) @ u
        branch_unitaries.append(u)
    for i, (ai, ui) in enumerate(zip(punchcard.amplitudes(), branch_unitaries)):
        for j, (aj, uj) in enumerate(zip(punchcard.amplitudes(), branch_unitaries)):
            joint[i * 2 : i * 2 + 2, j * 2 : j * 2 + 2] = (
                ai * np.conj(aj) * (ui @ rho0 @ uj.conj().T)
            )
    ideal_dist = trace_distance(joint, reference)
    rows = [[D, d] for D, d in zip(accuracies, dists)]
    metrics = {
        "distances": {str(d): v for d, v in zip(accuracies, dists)},
        "monotone_decreasing": bool(np.all(np.diff(dists) < 0)),
        "ideal_substitution_distance": ideal_dist,
    }
    return rows, metrics


def _reversible_rows(config: ExperimentConfig):
    ex = standard_bell_example()
    t_end = config.t_end if config.t_end is not None else 6.0
    ts = np.linspace(0.0, t_end, config.samples)
    solver_cfg = SolverConfig(
        rtol=config.rtol, atol=config.atol, t_end=t_end, sample_times=tuple(ts)
    )
    spec = make_erlang_clock(
        config.accuracy, config.gamma, max_ticks=ex.punchcard.slots,
        tick_entropy=config.dsigma_tick,
    )
    traj = evolve_reversible(spec, ex.gateset, ex.punchcard, ex.initial_state, solver_cfg)
    spec_irr = make_erlang_clock(config.accuracy, config.gamma, max_ticks=ex.punchcard.slots)
    irr = evolve_block(spec_irr, ex.gateset, ex.punchcard, ex.initial_state, solver_cfg)
    rows = []
    for i, t in enumerate(ts):
        rho = traj.target_at(float(t))
        _, f_bell = state_metrics(ex.target_state, rho)
        rows.append(
            [t, traj.forward_currents[i].sum(), traj.backward_currents[i].sum(), f_bell]
        )
    fid_rev = program_fidelity(traj, ex.gateset, ex.program, ex.initial_state, t_eval=4.0)
    fid_irr = program_fidelity(irr, ex.gateset, ex.program, ex.initial_state, t_eval=4.0)
    metrics = {
        "dsigma_tick": config.dsigma_tick,
        "fid_bell_reversible": fid_rev,
        "fid_bell_irreversible": fid_irr,
        "fidelity_gap": fid_irr - fid_rev,
        "max_backward_current": float(traj.backward_currents.max()),
        "final_distance_to_irreversible": trace_distance(
            traj.target_at(t_end), irr.target_at(t_end)
        ),
    }
    return rows, metrics


RUNNERS = {
    "bell": (_bell_rows, EVOLUTION_HEADER),
    "sweep": (_sweep_rows, SWEEP_HEADER),
    "clock-stats": (_clock_stats_rows, CLOCK_STATS_HEADER),
    "tradeoff": (_tradeoff_rows, TRADEOFF_HEADER),
    "switch": (_switch_rows, SWITCH_HEADER),
    "reversible": (_reversible_rows, REVERSIBLE_HEADER),
}


def run_experiment(config: ExperimentConfig) -> dict:
    runner, header = RUNNERS[config.experiment]
    rows, metrics = runner(config)
    try:
        write_csv(config.out, header, rows)
        write_summary(config.summary_path(), config.experiment, config, metrics)
    except OSError as exc:
        raise IntegrationError(f"cannot write outputs: {exc}", float("nan")) from exc
    return metrics


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aqpu",
        description="Clock-driven autonomous quantum processor experiments",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file (flags override)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--solver", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--summary", default=None)
        p.add_argument("--rtol", type=float, default=None)
        p.add_argument("--atol", type=float, default=None)
        p.add_argument("--t-end", dest="t_end", type=float, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--gamma", type=float, default=None)
        if name in ("bell", "clock-stats", "tradeoff", "reversible"):
            p.add_argument("--accuracy", type=int, default=None)
        if name in ("sweep", "switch"):
            p.add_argument(
                "--accuracies",
                type=lambda s: tuple(int(x) for x in s.split(",")),
                default=None,
            )
        if name == "bell":
            p.add_argument("--trajectories", type=int, default=None)
        if name == "tradeoff":
            p.add_argument("--target", default=None)
            p.add_argument("--l-max", dest="l_max", type=int, default=None)
        if name == "reversible":
            p.add_argument("--dsigma-tick", dest="dsigma_tick", type=float, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        if config.out == "out.csv" and getattr(args, "out", None) is None:
            config.out = f"{config.experiment.replace('-', '_')}.csv"
        run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
