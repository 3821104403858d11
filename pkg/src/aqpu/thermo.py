"""Entropy-production accounting for the clock drive, the ticks, and the
initial-state preparation, plus the accuracy/fidelity cost bounds.

Units: k_B = 1 throughout.  Every O(·) cost expression is evaluated with
constant 1 and should be read as "bound up to an unstated constant"; the
tests only assert scaling and monotonicity.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Sequence

import numpy as np

from .clock import BasisJump, ClockSpec, UnsupportedClockError
from .engine import BlockTrajectory
from .numerics import dagger


@dataclasses.dataclass(frozen=True)
class EntropyLedger:
    """Time-resolved entropy production, split by source."""

    t_grid: np.ndarray
    clockwork_rate: np.ndarray
    clockwork_integral: np.ndarray
    tick_rate: np.ndarray | None = None
    tick_integral: np.ndarray | None = None
    per_tick: float | None = None
    init: float = 0.0

    def totals(self) -> dict[str, float]:
        out = {"clockwork": float(self.clockwork_integral[-1]), "init": self.init}
        if self.tick_integral is not None:
            out["tick"] = float(self.tick_integral[-1])
        out["total"] = sum(out.values())
        return out


def clockwork_entropy_rate_at(jumps: Sequence[BasisJump], populations) -> np.ndarray:
    """Entropy rate for explicit clock populations: sum of dsigma·(fwd − bwd) flux."""
    pops = np.atleast_2d(np.asarray(populations, dtype=float))
    rate = np.zeros(pops.shape[0])
    for j in jumps:
        if j.entropy is None:
            raise ValueError("clockwork jump without declared entropy per jump")
        fwd = j.rate * pops[:, j.src]
        bwd = j.reverse_rate() * pops[:, j.dst] if j.include_reverse else 0.0
        rate += j.entropy * (fwd - bwd)
    return rate


def _active_clock_populations(trajectory: BlockTrajectory, gated: bool) -> np.ndarray:
    """Clock populations restricted to blocks where the drive is active."""
    pops = []
    for st in trajectory.states:
        cb = st.clock_blocks
        if cb.ndim == 3:
            cb = np.einsum("njj->nj", cb).real
        pops.append(cb[:-1].sum(axis=0) if gated else cb.sum(axis=0))
    return np.asarray(pops)


def entropy_rate_clockwork(
    spec: ClockSpec,
    trajectory: BlockTrajectory,
    include_tick_jumps: bool = False,
) -> np.ndarray:
    """Average entropy production rate of the clock drive, in k_B per time.

    Sums dsigma·(forward flux − reverse flux) over the declared jump pairs of
    the clockwork; ``include_tick_jumps`` additionally books the tick-closing
    jump with its per-jump entropy (used by clocks whose whole cycle is biased
    by a single bath, so that one completed tick carries D·dsigma).
    Jumps without a declared entropy are rejected.
    """
    if not spec.classical:
        raise UnsupportedClockError("entropy rates implemented for classical clockworks")
    gated = spec.gate_clockwork_at_cap
    pops_active = _active_clock_populations(trajectory, gated)
    rate = clockwork_entropy_rate_at(spec.clockwork.jumps, pops_active)
    if include_tick_jumps:
        # per-block flux: the tick jump for block n only acts on block n
        for i, st in enumerate(trajectory.states):
            cb = st.clock_blocks
            if cb.ndim == 3:
                cb = np.einsum("njj->nj", cb).real
            total = 0.0
            for n in range(spec.max_ticks):
                jn = spec.ticks.jump_for(n)
                if jn.entropy is None:
                    raise ValueError("tick jump without declared entropy per jump")
                fwd = jn.rate * cb[n, jn.src]
                bwd = 0.0
                if spec.ticks.reversible:
                    bwd = jn.rate * math.exp(-spec.ticks.reverse_entropy) * cb[n + 1, jn.dst]
                total += jn.entropy * (fwd - bwd)
            rate[i] += total
    return rate


@dataclasses.dataclass(frozen=True)
class PerTickIdentity:
    integral: float
    expected_ticks: float
    per_tick: float
    relative_deviation: float

    @property
    def holds_within(self) -> float:
        return abs(self.relative_deviation)


def integrate_entropy(
    t_grid: np.ndarray,
    rate: np.ndarray,
    per_tick: float | None = None,
    expected_ticks: np.ndarray | None = None,
) -> tuple[np.ndarray, PerTickIdentity | None]:
    """Cumulative trapezoidal integral of an entropy rate.

    When the clock declares a uniform per-tick entropy, also evaluates the
    bookkeeping identity <Sigma(T)> = <N(T)>·Sigma_per_tick at the final time.
    """
    t = np.asarray(t_grid, dtype=float)
    r = np.asarray(rate, dtype=float)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(t))])
    check = None
    if per_tick is not None and expected_ticks is not None:
        n_t = float(np.asarray(expected_ticks).ravel()[-1])
        predicted = n_t * per_tick
        dev = (integral[-1] - predicted) / predicted if predicted != 0 else math.inf
        check = PerTickIdentity(
            integral=float(integral[-1]),
            expected_ticks=n_t,
            per_tick=per_tick,
            relative_deviation=float(dev),
        )
    return integral, check


def tick_entropy_rate(
    trajectory: BlockTrajectory, dsigma_tick: float
) -> np.ndarray:
    """Entropy rate of the tick register writes: dsigma·(forward − backward flux).

    Works from the current traces of a reversible run; for irreversible runs
    the forward currents alone enter (reverse term zero).
    """
    if dsigma_tick is None or dsigma_tick < 0:
        raise ValueError("tick entropy must be declared and non-negative")
    if trajectory.forward_currents is None:
        raise ValueError("trajectory carries no tick currents")
    fwd = trajectory.forward_currents.sum(axis=1)
    bwd = (
        trajectory.backward_currents.sum(axis=1)
        if trajectory.backward_currents is not None
        else 0.0
    )
    return dsigma_tick * (fwd - bwd)


def forward_currents_from_block_run(
    spec: ClockSpec, trajectory: BlockTrajectory
) -> BlockTrajectory:
    """Attach forward tick currents to an irreversible block run."""
    m = spec.max_ticks
    fwd = np.zeros((len(trajectory.times), m))
    for i, st in enumerate(trajectory.states):
        cb = st.clock_blocks
        if cb.ndim == 3:
            cb = np.einsum("njj->nj", cb).real
        for n in range(m):
            jn = spec.ticks.jump_for(n)
            fwd[i, n] = jn.rate * cb[n, jn.src]
    return dataclasses.replace(trajectory, forward_currents=fwd)


def default_accuracy_cost(x: float) -> float:
    """Two-level engine benchmark: accuracy at most half the per-tick entropy."""
    return x / 2.0


def accuracy_entropy_bound(
    N: float, sigma_per_tick: float, f: Callable[[float], float] | None = None
) -> tuple[bool, float]:
    """Check N <= f(Sigma_per_tick); returns (passed, slack = f(Sigma) − N)."""
    f = f or default_accuracy_cost
    slack = f(sigma_per_tick) - N
    return slack >= 0.0, slack


def entropy_lower_bound_for_accuracy(N: float) -> float:
    """Inverse of the default cost function: per-tick entropy at least 2N."""
    return 2.0 * N


@dataclasses.dataclass(frozen=True)
class FidelityBound:
    clock_term: float
    init_term: float
    bound: float


def fidelity_entropy_bound(
    M: int,
    phi_max: float,
    sigma_per_tick: float,
    f: Callable[[float], float] | None = None,
    sigma_init: float = math.inf,
    prep_steps: int = 1,
    dim: int = 2,
) -> FidelityBound:
    """Upper bound on achievable program fidelity from finite entropy budgets.

    clock term: M·phi_max²/f(Sigma_per_tick) (convention constant 1);
    init term: exp(−L_prep·Sigma_init + 2W)/Sigma_init with W = log(dim − 1)
    qubit equivalents.  The bound is 1 − clock_term − init_term.
    """
    if sigma_init <= 0:
        raise ValueError("initialization entropy must be positive")
    f = f or default_accuracy_cost
    denom = f(sigma_per_tick)
    clock_term = M * phi_max**2 / denom if denom > 0 else math.inf
    w = math.log(dim - 1) if dim > 1 else 0.0
    if math.isinf(sigma_init):
        init_term = 0.0
    else:
        init_term = math.exp(-prep_steps * sigma_init + 2.0 * w) / sigma_init
    return FidelityBound(
        clock_term=clock_term, init_term=init_term, bound=1.0 - clock_term - init_term
    )
