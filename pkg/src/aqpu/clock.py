"""Ticking-clock models: tick densities, accuracy/resolution statistics,
concentration diagnostics, trajectory sampling, and coarse-graining.

A clock is a dissipative clockwork (dimension D) plus a tick generator that
advances a counter register each time a designated jump fires.  Classical
clockworks (no coherent part, basis-to-basis jumps) are stored structurally
as rate triples and evolved as probability vectors — the quadratic saving
that makes desk-scale accuracies of a few thousand cheap.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from typing import Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.special import gammaln

from .model import GateSet
from .numerics import (
    DensityMatrix,
    HermitianOperator,
    as_square_matrix,
    dagger,
    integrate_ode,
    max_abs,
)


class UnsupportedClockError(ValueError):
    """Raised when an operation needs structure the clock does not declare."""


# --------------------------------------------------------------------------
# jump operators and spec types


@dataclasses.dataclass(frozen=True)
class BasisJump:
    """Classical jump sqrt(rate)·|dst><src| between clockwork basis states."""

    src: int
    dst: int
    rate: float
    entropy: float | None = None
    include_reverse: bool = False

    def matrix(self, dim: int) -> np.ndarray:
        m = np.zeros((dim, dim), dtype=complex)
        m[self.dst, self.src] = math.sqrt(self.rate)
        return m

    def reverse_rate(self) -> float:
        # local detailed balance: reverse operator e^{-dsigma/2} L† has rate e^{-dsigma}·rate
        if self.entropy is None:
            raise UnsupportedClockError("jump has no declared entropy, reverse undefined")
        return self.rate * math.exp(-self.entropy)


@dataclasses.dataclass(frozen=True)
class MatrixJump:
    op: np.ndarray
    entropy: float | None = None
    include_reverse: bool = False

    def __post_init__(self):
        object.__setattr__(self, "op", as_square_matrix(self.op, "jump operator"))

    def matrix(self, dim: int) -> np.ndarray:
        if self.op.shape[0] != dim:
            raise ValueError("jump operator dimension mismatch")
        return self.op

    def reverse_matrix(self) -> np.ndarray:
        if self.entropy is None:
            raise UnsupportedClockError("jump has no declared entropy, reverse undefined")
        return math.exp(-self.entropy / 2.0) * dagger(self.op)


Jump = BasisJump | MatrixJump


@dataclasses.dataclass(frozen=True)
class Clockwork:
    """Internal clock dynamics: optional coherent part plus jump channels."""

    dim: int
    hamiltonian: HermitianOperator | None
    jumps: tuple[Jump, ...]

    def __post_init__(self):
        for j in self.jumps:
            if isinstance(j, BasisJump):
                if not (0 <= j.src < self.dim and 0 <= j.dst < self.dim):
                    raise ValueError("jump endpoints outside clockwork")
            elif j.op.shape[0] != self.dim:
                raise ValueError("jump operator dimension mismatch")
        if self.hamiltonian is not None and self.hamiltonian.dim != self.dim:
            raise ValueError("clockwork Hamiltonian dimension mismatch")

    @property
    def classical(self) -> bool:
        return self.hamiltonian is None and all(isinstance(j, BasisJump) for j in self.jumps)


@dataclasses.dataclass(frozen=True)
class TickGenerator:
    """Tick jumps per tick index (or one uniform jump); the register caps at max_ticks."""

    jumps: tuple[Jump, ...]
    max_ticks: int
    reverse_entropy: float = math.inf

    def __post_init__(self):
        if self.max_ticks < 1:
            raise ValueError("need at least one tick")
        if len(self.jumps) not in (1, self.max_ticks):
            raise ValueError("provide one uniform tick jump or one per tick index")
        if not self.reverse_entropy > 0:
            raise ValueError("tick reverse entropy must be positive (inf = irreversible)")

    @property
    def uniform(self) -> bool:
        return len(self.jumps) == 1

    def jump_for(self, n: int) -> Jump:
        if not 0 <= n < self.max_ticks:
            raise IndexError(f"tick index {n} outside 0..{self.max_ticks - 1}")
        return self.jumps[0] if self.uniform else self.jumps[n]

    @property
    def reversible(self) -> bool:
        return math.isfinite(self.reverse_entropy)


@dataclasses.dataclass(frozen=True)
class ClockSpec:
    """Clockwork + tick generator + initial clock state; fixes all tick statistics."""

    clockwork: Clockwork
    ticks: TickGenerator
    initial: DensityMatrix
    tick_time_hint: float | None = None
    entropy_per_tick: float | None = None
    gate_clockwork_at_cap: bool = False

    def __post_init__(self):
        if self.initial.dim != self.clockwork.dim:
            raise ValueError("initial state dimension mismatch")

    @property
    def dim(self) -> int:
        return self.clockwork.dim

    @property
    def max_ticks(self) -> int:
        return self.ticks.max_ticks

    @property
    def classical(self) -> bool:
        return self.clockwork.classical and all(
            isinstance(j, BasisJump) for j in self.ticks.jumps
        )

    def reset_level(self, n: int) -> int | None:
        """Basis state the clockwork is left in after tick jump n (classical reset clocks)."""
        j = self.ticks.jump_for(n)
        if isinstance(j, BasisJump):
            return j.dst
        return None

    @property
    def is_reset(self) -> bool:
        """Every tick jump is rank-one, so each tick erases the clock's memory."""
        for n in range(1 if self.ticks.uniform else self.max_ticks):
            j = self.ticks.jump_for(n)
            if isinstance(j, BasisJump):
                continue
            if np.linalg.matrix_rank(j.op, tol=1e-12) != 1:
                return False
        return True

    @property
    def iid(self) -> bool:
        """Uniform reset tick whose reset state equals the initial clock state."""
        if not (self.is_reset and self.ticks.uniform):
            return False
        j = self.ticks.jump_for(0)
        if isinstance(j, BasisJump):
            target = np.zeros(self.dim)
            target[j.dst] = 1.0
            return np.allclose(np.diag(self.initial.matrix).real, target, atol=1e-12) and bool(
                max_abs(self.initial.matrix - np.diag(np.diag(self.initial.matrix))) < 1e-12
            )
        u, s, vh = np.linalg.svd(j.op)
        reset = np.outer(u[:, 0], u[:, 0].conj())
        return max_abs(self.initial.matrix - reset) < 1e-10


# --------------------------------------------------------------------------
# constructors


def make_erlang_clock(
    D: int,
    Gamma: float = 1.0,
    max_ticks: int = 3,
    tick_entropy: float = math.inf,
) -> ClockSpec:
    """D-step unidirectional ladder at per-jump rate D·Gamma; the closing
    D-1 -> 0 jump is the tick.  Inter-tick times are Erlang(D, D·Gamma):
    mean 1/Gamma, variance 1/(D·Gamma²), accuracy N = D.
    """
    if D < 1:
        raise ValueError("clockwork dimension must be at least 1")
    if Gamma <= 0:
        raise ValueError("Gamma must be positive")
    rate = D * Gamma
    ladder = tuple(BasisJump(k, k + 1, rate) for k in range(D - 1))
    tick = BasisJump(D - 1, 0, rate)
    init = np.zeros((D, D), dtype=complex)
    init[0, 0] = 1.0
    return ClockSpec(
        clockwork=Clockwork(dim=D, hamiltonian=None, jumps=ladder),
        ticks=TickGenerator(jumps=(tick,), max_ticks=max_ticks, reverse_entropy=tick_entropy),
        initial=DensityMatrix(init),
        tick_time_hint=1.0 / Gamma,
    )


def make_biased_erlang_clock(
    D: int,
    Gamma: float,
    dsigma: float,
    max_ticks: int,
) -> ClockSpec:
    """Erlang ladder with every jump (the D-1 internal ones and the closing
    tick) biased by a per-jump entropy production dsigma: forward rate D·Gamma,
    reverse rate D·Gamma·e^{-dsigma}.  The drive is gated off once the tick
    register saturates, so entropy production is booked per completed tick
    (D·dsigma each, declared in ``entropy_per_tick``).
    """
    if dsigma <= 0:
        raise ValueError("per-jump entropy must be positive")
    rate = D * Gamma
    ladder = tuple(
        BasisJump(k, k + 1, rate, entropy=dsigma, include_reverse=True) for k in range(D - 1)
    )
    tick = BasisJump(D - 1, 0, rate, entropy=dsigma, include_reverse=True)
    init = np.zeros((D, D), dtype=complex)
    init[0, 0] = 1.0
    return ClockSpec(
        clockwork=Clockwork(dim=D, hamiltonian=None, jumps=ladder),
        ticks=TickGenerator(jumps=(tick,), max_ticks=max_ticks, reverse_entropy=dsigma),
        initial=DensityMatrix(init),
        tick_time_hint=1.0 / Gamma,
        entropy_per_tick=D * dsigma,
        gate_clockwork_at_cap=True,
    )


# --------------------------------------------------------------------------
# classical chain evolution (probability vectors per tick block)


@dataclasses.dataclass(frozen=True)
class _ClassicalRates:
    dim: int
    srcs: np.ndarray
    dsts: np.ndarray
    rates: np.ndarray
    outflow: np.ndarray  # per-level total clockwork outflow


def _classical_rates(spec: ClockSpec, include_reverse: bool = True) -> _ClassicalRates:
    srcs, dsts, rates = [], [], []
    for j in spec.clockwork.jumps:
        assert isinstance(j, BasisJump)
        srcs.append(j.src)
        dsts.append(j.dst)
        rates.append(j.rate)
        if include_reverse and j.include_reverse:
            srcs.append(j.dst)
            dsts.append(j.src)
            rates.append(j.reverse_rate())
    srcs = np.asarray(srcs, dtype=int)
    dsts = np.asarray(dsts, dtype=int)
    rates = np.asarray(rates, dtype=float)
    outflow = np.zeros(spec.dim)
    np.add.at(outflow, srcs, rates)
    return _ClassicalRates(spec.dim, srcs, dsts, rates, outflow)


def _tick_jump_arrays(spec: ClockSpec, n_jumps: int):
    srcs = np.empty(n_jumps, dtype=int)
    dsts = np.empty(n_jumps, dtype=int)
    rates = np.empty(n_jumps, dtype=float)
    for n in range(n_jumps):
        j = spec.ticks.jump_for(n)
        if not isinstance(j, BasisJump):
            raise UnsupportedClockError("classical chain requires basis-jump ticks")
        srcs[n], dsts[n], rates[n] = j.src, j.dst, j.rate
    return srcs, dsts, rates


def _evolve_classical_blocks(
    spec: ClockSpec,
    t_samples: np.ndarray,
    n_blocks: int,
    feed: bool = True,
    start: np.ndarray | None = None,
    start_block: int = 0,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> np.ndarray:
    """Tick-resolved clock populations P[t, n, level].

    With ``feed`` the mass leaving block n through its tick jump enters block
    n+1 (blocks beyond n_blocks-1 are absent: the last block only accumulates
    if it has no tick jump, i.e. n_blocks-1 == max_ticks).  Without ``feed``
    the run is absorbing: outflow just disappears (no-feeding boundary).
    """
    if not spec.classical:
        raise UnsupportedClockError("classical chain evolution needs a classical clock")
    D = spec.dim
    cw = _classical_rates(spec)
    n_tickjumps = min(n_blocks, spec.max_ticks)
    tsrc, tdst, trate = _tick_jump_arrays(spec, n_tickjumps)
    rev = spec.ticks.reversible
    rev_rate = trate * math.exp(-spec.ticks.reverse_entropy) if rev else None
    gate = spec.gate_clockwork_at_cap and n_blocks == spec.max_ticks + 1

    p0 = np.zeros((n_blocks, D))
    p0[start_block] = np.diag(spec.initial.matrix).real if start is None else start

    def rhs(t, y):
        p = y.reshape(n_blocks, D)
        dp = np.zeros_like(p)
        active = p[:-1] if gate else p
        dact = dp[:-1] if gate else dp
        if cw.srcs.size:
            flows = cw.rates[None, :] * active[:, cw.srcs]
            np.add.at(dact.T, cw.dsts, flows.T)
            dact -= cw.outflow[None, :] * active
        for n in range(n_tickjumps):
            flux = trate[n] * p[n, tsrc[n]]
            dp[n, tsrc[n]] -= flux
            if feed and n + 1 < n_blocks:
                dp[n + 1, tdst[n]] += flux
            if rev and feed and n + 1 < n_blocks:
                back = rev_rate[n] * p[n + 1, tdst[n]]
                dp[n + 1, tdst[n]] -= back
                dp[n, tsrc[n]] += back
        return dp.ravel()

    sol = integrate_ode(rhs, p0.ravel(), t_samples, rtol=rtol, atol=atol)
    return sol.reshape(len(t_samples), n_blocks, D)


def _evolve_matrix_blocks(
    spec: ClockSpec,
    t_samples: np.ndarray,
    n_blocks: int,
    feed: bool = True,
    start: np.ndarray | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> np.ndarray:
    """Dense fallback of ``_evolve_classical_blocks`` for general clockworks."""
    D = spec.dim
    h = spec.clockwork.hamiltonian.matrix if spec.clockwork.hamiltonian is not None else None
    ls = [j.matrix(D) for j in spec.clockwork.jumps]
    for j in spec.clockwork.jumps:
        if j.include_reverse:
            if isinstance(j, BasisJump):
                ls.append(math.sqrt(j.reverse_rate()) * j.matrix(D).conj().T / math.sqrt(j.rate))
            else:
                ls.append(j.reverse_matrix())
    lsum = sum(dagger(l) @ l for l in ls) if ls else np.zeros((D, D), dtype=complex)
    n_tickjumps = min(n_blocks, spec.max_ticks)
    ticks = [spec.ticks.jump_for(n).matrix(D) for n in range(n_tickjumps)]
    tick_loss = [dagger(j) @ j for j in ticks]

    shape = (n_blocks, D, D)
    b0 = np.zeros(shape, dtype=complex)
    b0[0] = spec.initial.matrix if start is None else start

    def rhs(t, y):
        b = y.view(np.complex128).reshape(shape)
        db = np.zeros_like(b)
        if h is not None:
            db += -1j * (h @ b - b @ h)
        for l in ls:
            db += l @ b @ dagger(l)
        db -= 0.5 * (lsum @ b + b @ lsum)
        for n in range(n_tickjumps):
            db[n] -= 0.5 * (tick_loss[n] @ b[n] + b[n] @ tick_loss[n])
            if feed and n + 1 < n_blocks:
                db[n + 1] += ticks[n] @ b[n] @ dagger(ticks[n])
        return db.view(np.float64).ravel()

    sol = integrate_ode(rhs, b0.view(np.float64).ravel(), t_samples, rtol=rtol, atol=atol)
    return sol.view(np.complex128).reshape(len(t_samples), n_blocks, D, D)


# --------------------------------------------------------------------------
# tick densities and statistics


DEFAULT_DENSITY_POINTS = 4001
DENSITY_MASS_WARN = 0.999


def _auto_horizon(spec: ClockSpec) -> float:
    if spec.tick_time_hint is not None:
        return 10.0 * spec.tick_time_hint
    return 10.0


def _spacing_start(spec: ClockSpec, n: int):
    """State the clock occupies at the start of the n-th inter-tick interval (1-based)."""
    if n == 1:
        if spec.classical:
            return np.diag(spec.initial.matrix).real.copy()
        return spec.initial.matrix.copy()
    prev = spec.ticks.jump_for(n - 2)
    if isinstance(prev, BasisJump):
        if spec.classical:
            v = np.zeros(spec.dim)
            v[prev.dst] = 1.0
            return v
        m = np.zeros((spec.dim, spec.dim), dtype=complex)
        m[prev.dst, prev.dst] = 1.0
        return m
    u, s, vh = np.linalg.svd(prev.op)
    if np.sum(s > 1e-12 * s[0]) != 1:
        raise UnsupportedClockError("spacing densities need reset (rank-one) tick jumps")
    return np.outer(u[:, 0], u[:, 0].conj())


def tick_density(
    spec: ClockSpec,
    n: int,
    t_grid: np.ndarray | None = None,
    points: int = DEFAULT_DENSITY_POINTS,
    min_mass: float = DENSITY_MASS_WARN,
) -> tuple[np.ndarray, np.ndarray]:
    """Density of the n-th inter-tick time (1-based), on its time grid.

    Computed from the absorbing (no-feeding) single-block equations started
    from the clock state that precedes the n-th tick; the density is the flux
    through the n-th tick jump.  Auto grids extend until they hold ``min_mass``
    of the probability; a final shortfall below 99.9% warns.
    """
    if not 1 <= n <= spec.max_ticks:
        raise ValueError(f"tick index {n} outside 1..{spec.max_ticks}")
    auto = t_grid is None
    if auto:
        horizon = _auto_horizon(spec)
        t_grid = np.linspace(0.0, horizon, points)
    else:
        t_grid = np.asarray(t_grid, dtype=float)

    jump = spec.ticks.jump_for(n - 1)
    start = _spacing_start(spec, n)
    for _ in range(6):
        if spec.classical:
            assert isinstance(jump, BasisJump)
            # absorbing single-block run with outflow through this tick jump
            sub = dataclasses.replace(
                spec,
                ticks=TickGenerator(jumps=(jump,), max_ticks=1, reverse_entropy=math.inf),
                gate_clockwork_at_cap=False,
            )
            p = _evolve_classical_blocks(sub, t_grid, n_blocks=1, feed=False, start=start)
            density = jump.rate * p[:, 0, jump.src]
        else:
            sub = dataclasses.replace(
                spec,
                ticks=TickGenerator(jumps=(jump,), max_ticks=1, reverse_entropy=math.inf),
                gate_clockwork_at_cap=False,
            )
            blocks = _evolve_matrix_blocks(sub, t_grid, n_blocks=1, feed=False, start=start)
            jmat = jump.matrix(spec.dim)
            jj = dagger(jmat) @ jmat
            density = np.einsum("tij,ji->t", blocks[:, 0], jj).real
        mass = float(np.trapezoid(density, t_grid))
        if mass >= min_mass or not auto:
            break
        t_grid = np.linspace(0.0, 2.0 * t_grid[-1], points)
    if mass < DENSITY_MASS_WARN:
        warnings.warn(
            f"tick density grid captures only {mass:.6f} of the probability mass",
            stacklevel=2,
        )
    return t_grid, np.maximum(density, 0.0)


def tick_time_density(
    spec: ClockSpec, n: int, t_grid: np.ndarray
) -> np.ndarray:
    """Density of the absolute n-th tick time (1-based): flux out of the fed block n-1."""
    if not 1 <= n <= spec.max_ticks:
        raise ValueError(f"tick index {n} outside 1..{spec.max_ticks}")
    t_grid = np.asarray(t_grid, dtype=float)
    jump = spec.ticks.jump_for(n - 1)
    if spec.classical:
        assert isinstance(jump, BasisJump)
        p = _evolve_classical_blocks(spec, t_grid, n_blocks=n, feed=True)
        return jump.rate * p[:, n - 1, jump.src]
    blocks = _evolve_matrix_blocks(spec, t_grid, n_blocks=n, feed=True)
    jmat = jump.matrix(spec.dim)
    jj = dagger(jmat) @ jmat
    return np.einsum("tij,ji->t", blocks[:, n - 1], jj).real


def clock_block_traces(spec: ClockSpec, t_grid: np.ndarray) -> np.ndarray:
    """tr rho_C^(n)(t) for n = 0..max_ticks on the grid (tick-number probabilities)."""
    t_grid = np.asarray(t_grid, dtype=float)
    nb = spec.max_ticks + 1
    if spec.classical:
        p = _evolve_classical_blocks(spec, t_grid, n_blocks=nb, feed=True)
        return p.sum(axis=2)
    blocks = _evolve_matrix_blocks(spec, t_grid, n_blocks=nb, feed=True)
    return np.einsum("tnii->tn", blocks).real


def tick_number_distribution(spec: ClockSpec, t) -> np.ndarray:
    """P[N(t)=n] for n = 0..max_ticks; rows sum to one."""
    scalar = np.isscalar(t)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0):
        raise ValueError("time must be non-negative")
    order = np.argsort(ts)
    sorted_ts = ts[order]
    grid = sorted_ts if sorted_ts[0] == 0.0 else np.concatenate([[0.0], sorted_ts])
    traces = clock_block_traces(spec, grid)
    if sorted_ts[0] != 0.0:
        traces = traces[1:]
    out = np.empty_like(traces)
    out[order] = traces
    return out[0] if scalar else out


@dataclasses.dataclass(frozen=True)
class TickStatistics:
    """Per-tick spacing densities and the derived resolution/accuracy figures."""

    t_grid: np.ndarray
    densities: np.ndarray  # (n_ticks, len(t_grid))
    means: np.ndarray
    variances: np.ndarray
    resolutions: np.ndarray
    accuracies: np.ndarray
    iid: bool

    @property
    def mean(self) -> float:
        return float(self.means[0])

    @property
    def variance(self) -> float:
        return float(self.variances[0])

    @property
    def resolution(self) -> float:
        return float(self.resolutions[0])

    @property
    def accuracy(self) -> float:
        return float(self.accuracies[0])

    @property
    def density(self) -> np.ndarray:
        return self.densities[0]


def _moments(t: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    mass = simpson(p, x=t)
    mean = simpson(p * t, x=t) / mass
    var = simpson(p * (t - mean) ** 2, x=t) / mass
    return float(mean), float(var)


def stats_from_density(t_grid, density, iid: bool = True) -> TickStatistics:
    """Wrap an explicit single-spacing density as TickStatistics."""
    t = np.asarray(t_grid, dtype=float)
    p = np.asarray(density, dtype=float)
    if np.any(p < 0):
        raise ValueError("density must be nonnegative")
    mean, var = _moments(t, p)
    acc = math.inf if var == 0 else mean**2 / var
    return TickStatistics(
        t_grid=t,
        densities=p[None, :],
        means=np.array([mean]),
        variances=np.array([var]),
        resolutions=np.array([1.0 / mean]),
        accuracies=np.array([acc]),
        iid=iid,
    )


def tick_statistics(
    spec: ClockSpec,
    t_grid: np.ndarray | None = None,
    points: int = DEFAULT_DENSITY_POINTS,
) -> TickStatistics:
    """Spacing densities and (resolution, accuracy) per tick.

    Exact for reset clocks (every tick jump rank-one), where the spacings are
    independent; non-reset clockworks are rejected because spacing moments are
    not determined by the marginal tick-time densities.
    """
    if not spec.is_reset:
        raise UnsupportedClockError("tick statistics need a reset clock")
    structural_iid = spec.iid
    n_spacings = 1 if structural_iid else spec.max_ticks
    grids, dens = [], []
    for n in range(1, n_spacings + 1):
        # tight mass requirement: truncated tails bias the variance (and N)
        g, d = tick_density(spec, n, t_grid=t_grid, points=points, min_mass=1.0 - 1e-8)
        grids.append(g)
        dens.append(d)
    # all spacings share the auto grid of the longest one
    ref = max(grids, key=lambda g: g[-1])
    densities = np.vstack(
        [d if g[-1] == ref[-1] else np.interp(ref, g, d, right=0.0) for g, d in zip(grids, dens)]
    )
    if structural_iid and spec.max_ticks > 1:
        densities = np.repeat(densities, spec.max_ticks, axis=0)
    means, variances = [], []
    for d in densities:
        m, v = _moments(ref, d)
        means.append(m)
        variances.append(v)
    means = np.asarray(means)
    variances = np.asarray(variances)
    with np.errstate(divide="ignore"):
        accuracies = np.where(variances > 0, means**2 / np.maximum(variances, 1e-300), np.inf)
    return TickStatistics(
        t_grid=ref,
        densities=densities,
        means=means,
        variances=variances,
        resolutions=1.0 / means,
        accuracies=accuracies,
        iid=structural_iid,
    )


# --------------------------------------------------------------------------
# closed-form and synthetic spacing densities (test oracles and demo inputs)


def erlang_spacing_density(D: int, Gamma: float, t: np.ndarray) -> np.ndarray:
    """Erlang(D, D·Gamma) density, stable at large D via log-gamma."""
    t = np.asarray(t, dtype=float)
    rate = D * Gamma
    out = np.zeros_like(t)
    pos = t > 0
    logp = D * math.log(rate) + (D - 1) * np.log(t[pos]) - rate * t[pos] - gammaln(D)
    out[pos] = np.exp(logp)
    if D == 1:
        out[t == 0] = rate
    return out


def erlang_spacing_cdf(D: int, Gamma: float, t: np.ndarray) -> np.ndarray:
    from scipy.special import gammainc

    t = np.asarray(t, dtype=float)
    return gammainc(D, D * Gamma * np.clip(t, 0.0, None))


def skewed_gamma_spacing_density(
    N: float, tau: float, t: np.ndarray, shape: float = 4.0
) -> np.ndarray:
    """Constant-skewness spacing family: tau + (tau/sqrt(N))·standardized Gamma(shape).

    Mean tau and accuracy N at every N, with third central moment
    (2/sqrt(shape))·tau³/N^{3/2} — the family saturates the generic
    exponential-concentration envelope order, unlike the Erlang family whose
    skewness vanishes with N.
    """
    t = np.asarray(t, dtype=float)
    b = tau / math.sqrt(shape * N)
    a = tau * (1.0 - math.sqrt(shape / N))
    x = (t - a) / b
    out = np.zeros_like(t)
    pos = x > 0
    logp = (shape - 1) * np.log(x[pos]) - x[pos] - gammaln(shape) - math.log(b)
    out[pos] = np.exp(logp)
    return out


def pareto_spacing_density(t: np.ndarray, exponent: float = 3.0, t_min: float = 1.0) -> np.ndarray:
    """Heavy (polynomial) tail: alpha·t_min^alpha / t^(alpha+1) for t >= t_min."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    tail = t >= t_min
    out[tail] = exponent * t_min**exponent / t[tail] ** (exponent + 1)
    return out


# --------------------------------------------------------------------------
# concentration diagnostics


@dataclasses.dataclass(frozen=True)
class ConcentrationReport:
    alpha: float
    c: float
    pass_tail: bool
    pass_moments: bool
    pass_bernstein: bool
    moment_values: np.ndarray
    moment_bounds: np.ndarray

    @property
    def concentrated(self) -> bool:
        return self.pass_tail


SURVIVAL_FLOOR = 1e-10


def _survival_from_density(t: np.ndarray, p: np.ndarray, tau: float):
    """P[|T - tau| >= x] on an x-grid derived from the density grid.

    Survival mass below the quadrature noise floor is treated as zero, or the
    envelope fit would be capped by integration error instead of probability.
    """
    from scipy.integrate import cumulative_simpson

    cdf = np.concatenate([[0.0], cumulative_simpson(p, x=t)])
    total = cdf[-1]

    def cdf_at(x):
        return np.interp(x, t, cdf)

    x_max = max(tau - t[0], t[-1] - tau)
    xs = np.linspace(0.0, x_max, len(t))
    surv = (total - cdf_at(tau + xs)) + cdf_at(tau - xs)
    surv = np.clip(surv, 0.0, None)
    surv[surv < SURVIVAL_FLOOR] = 0.0
    return xs, surv, total


def _min_alpha(xs, surv, lam, c):
    pos = surv > 0
    if not np.any(pos):
        return 0.0
    log_vals = np.log(surv[pos]) + c * lam * xs[pos]
    # capped exponent: anything this large is infeasible for any sane alpha_cap
    return math.exp(min(float(log_vals.max()), 700.0))


def concentration_check(
    stats: TickStatistics,
    N: float | None = None,
    alpha_cap: float = 100.0,
    c_min: float = 1.0,
    moments_up_to: int = 6,
    copies: int = 4,
) -> ConcentrationReport:
    """Fit an exponential tail envelope alpha·exp(-c·sqrt(N)·x/tau) and verify
    the moment and iid-sum bounds it implies.

    The fitted c is the largest decay constant feasible with prefactor
    alpha <= alpha_cap (bisection on the monotone minimal prefactor); the
    clock counts as concentrated when c >= c_min.  Heavy polynomial tails
    push the feasible c to zero as the grid grows and fail the check.
    """
    t, p = stats.t_grid, stats.density
    tau = stats.mean
    if N is None:
        N = stats.accuracy
    lam = math.sqrt(N) / tau
    xs, surv, _ = _survival_from_density(t, p, tau)

    c_hi = 64.0
    if _min_alpha(xs, surv, lam, c_hi) <= alpha_cap:
        c_star = c_hi
    else:
        lo, hi = 0.0, c_hi
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _min_alpha(xs, surv, lam, mid) <= alpha_cap:
                lo = mid
            else:
                hi = mid
        c_star = lo
    alpha = _min_alpha(xs, surv, lam, c_star) if c_star > 0 else float(surv.max())
    pass_tail = c_star >= c_min and alpha <= alpha_cap

    orders = np.arange(1, moments_up_to + 1)
    mvals = np.array([simpson(p * np.abs(t - tau) ** k, x=t) for k in orders])
    with np.errstate(over="ignore"):
        mbounds = np.array(
            [alpha * math.factorial(k) / (c_star * lam) ** k if c_star > 0 else math.inf for k in orders]
        )
    pass_moments = bool(np.all(mvals <= mbounds * (1 + 1e-9)))

    # iid-sum (Bernstein-style) bound on |sum of `copies` centered spacings|
    dt = t[1] - t[0]
    q = p * dt
    conv = q.copy()
    for _ in range(copies - 1):
        conv = np.convolve(conv, q)
    offsets = (np.arange(conv.size) * dt) + copies * t[0] - copies * tau
    order = np.argsort(np.abs(offsets))
    tail_mass = np.concatenate([[np.sum(conv)], np.sum(conv) - np.cumsum(conv[order])])[:-1]
    xs_sum = np.abs(offsets)[order]
    bound = np.exp(np.minimum(alpha * copies / 2.0 - c_star * lam * xs_sum / 2.0, 700.0))
    pass_bernstein = bool(np.all(tail_mass <= bound + 1e-12))

    return ConcentrationReport(
        alpha=alpha,
        c=c_star,
        pass_tail=pass_tail,
        pass_moments=pass_moments,
        pass_bernstein=pass_bernstein,
        moment_values=mvals,
        moment_bounds=mbounds,
    )


# --------------------------------------------------------------------------
# trajectory sampling


def _uniform_ladder(spec: ClockSpec) -> tuple[int, float] | None:
    """(levels per cycle, per-jump rate) when the clock is a uniform reset ladder."""
    if not spec.classical or not spec.ticks.uniform:
        return None
    jumps = sorted(spec.clockwork.jumps, key=lambda j: j.src)
    tick = spec.ticks.jump_for(0)
    if any(j.include_reverse for j in jumps) or tick.include_reverse:
        return None
    D = spec.dim
    if len(jumps) != D - 1 or not isinstance(tick, BasisJump):
        return None
    rate = tick.rate
    expected = [(k, k + 1) for k in range(D - 1)]
    actual = [(j.src, j.dst) for j in jumps]
    if actual != expected or (tick.src, tick.dst) != (D - 1, 0):
        return None
    if any(abs(j.rate - rate) > 1e-12 * rate for j in jumps):
        return None
    init = np.diag(spec.initial.matrix).real
    if abs(init[0] - 1.0) > 1e-12:
        return None
    return D, rate


def sample_ticks(
    spec: ClockSpec,
    rng_seed: int,
    horizon: float,
    max_ticks: int | None = None,
) -> np.ndarray:
    """Sorted tick times up to ``horizon``; deterministic for a fixed seed."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(rng_seed)))
    return _sample_ticks_with(spec, rng, horizon, max_ticks)


def _sample_ticks_with(spec, rng, horizon, max_ticks=None) -> np.ndarray:
    cap = spec.max_ticks if max_ticks is None else min(max_ticks, spec.max_ticks)
    ladder = _uniform_ladder(spec)
    if ladder is not None:
        D, rate = ladder
        spacings = rng.gamma(shape=D, scale=1.0 / rate, size=cap)
        times = np.cumsum(spacings)
        return times[times <= horizon]
    if spec.classical:
        return _gillespie(spec, rng, horizon, cap)
    if spec.iid:
        grid, dens = tick_density(spec, 1)
        return _inverse_cdf_ticks(grid, dens, rng, horizon, cap)
    raise UnsupportedClockError("sampling needs a classical or iid reset clock")


def _gillespie(spec: ClockSpec, rng, horizon: float, cap: int) -> np.ndarray:
    cw = _classical_rates(spec)
    per_level: list[list[tuple[float, int]]] = [[] for _ in range(spec.dim)]
    for s, d, r in zip(cw.srcs, cw.dsts, cw.rates):
        per_level[s].append((r, d))
    probs = np.diag(spec.initial.matrix).real
    level = int(rng.choice(spec.dim, p=probs / probs.sum()))
    t = 0.0
    ticks: list[float] = []
    n = 0
    while n < cap:
        moves = list(per_level[level])
        tick_jump = spec.ticks.jump_for(n)
        is_tick = [False] * len(moves)
        if tick_jump.src == level:
            moves.append((tick_jump.rate, tick_jump.dst))
            is_tick.append(True)
        if spec.ticks.reversible and n > 0:
            prev = spec.ticks.jump_for(n - 1)
            if prev.dst == level:
                moves.append((prev.rate * math.exp(-spec.ticks.reverse_entropy), prev.src))
                is_tick.append(None)  # marks an un-tick
        total = sum(r for r, _ in moves)
        if total == 0:
            break
        t += rng.exponential(1.0 / total)
        if t > horizon:
            break
        pick = rng.random() * total
        acc = 0.0
        for (r, dest), kind in zip(moves, is_tick):
            acc += r
            if pick <= acc:
                level = dest
                if kind is True:
                    ticks.append(t)
                    n += 1
                elif kind is None:
                    ticks.pop()
                    n -= 1
                break
    return np.asarray(ticks)


def _inverse_cdf_ticks(grid, dens, rng, horizon, cap) -> np.ndarray:
    dt = grid[1] - grid[0]
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * dt)])
    cdf /= cdf[-1]
    u = rng.random(cap)
    spacings = np.interp(u, cdf, grid)
    times = np.cumsum(spacings)
    return times[times <= horizon]


# --------------------------------------------------------------------------
# coarse-graining


def coarse_grain(spec: ClockSpec, gateset: GateSet, m: int) -> tuple[ClockSpec, GateSet]:
    """Fire the tick only every m-th underlying cycle and slow the gates to match.

    tau -> m·tau, generators -> generators/m, accuracy -> m·N; the composed
    gate unitaries are unchanged because exp(-i(H/m)(m·tau)) = exp(-iH·tau).
    """
    if m < 1 or int(m) != m:
        raise ValueError("coarse-graining factor must be a positive integer")
    m = int(m)
    if m == 1:
        return spec, gateset
    ladder = _uniform_ladder(spec)
    if ladder is None:
        raise UnsupportedClockError("coarse-graining implemented for uniform reset ladders")
    D, rate = ladder
    newdim = m * D
    jumps = tuple(BasisJump(k, k + 1, rate) for k in range(newdim - 1))
    tick = BasisJump(newdim - 1, 0, rate)
    init = np.zeros((newdim, newdim), dtype=complex)
    init[0, 0] = 1.0
    new_spec = ClockSpec(
        clockwork=Clockwork(dim=newdim, hamiltonian=None, jumps=jumps),
        ticks=TickGenerator(
            jumps=(tick,),
            max_ticks=spec.max_ticks,
            reverse_entropy=spec.ticks.reverse_entropy,
        ),
        initial=DensityMatrix(init),
        tick_time_hint=(spec.tick_time_hint or 1.0) * m,
        entropy_per_tick=None if spec.entropy_per_tick is None else m * spec.entropy_per_tick,
        gate_clockwork_at_cap=spec.gate_clockwork_at_cap,
    )
    new_gates = GateSet(
        tau=gateset.tau * m,
        generators=tuple(HermitianOperator(h.matrix / m) for h in gateset.generators),
        labels=gateset.labels,
        target_dims=gateset.target_dims,
    )
    return new_spec, new_gates
