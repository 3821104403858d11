"""Dynamics of the clock + instruction register + target machine.

Solver inventory:

* ``evolve_full``    — joint Lindblad evolution of clockwork ⊗ tick register ⊗
                       instruction register ⊗ target.  Small systems use a dense
                       joint density matrix (the brute-force oracle); larger
                       classical-clockwork systems use an exact structured form
                       in which clockwork and tick register stay diagonal.
* ``evolve_block``   — fast path for classical punch cards: tick-number blocks
                       {rho_C^(n), sigma_T^(n)} evolved jointly in unnormalized
                       form (no division by the tick-number probability).
* ``evolve_ideal``   — perfectly regular ticks: plain matrix conjugation.
* ``evolve_iid``     — one mixed-unitary tick channel per program step,
                       evaluated by quadrature in each generator's eigenbasis.
* ``evolve_monte_carlo`` — average over sampled tick-time trajectories.
* ``evolve_reversible``  — block evolution with detailed-balance reverse ticks.

The instruction register is represented on the span of the punch-card branch
states (every term of the generator is diagonal in the slot product basis, so
that span is exactly invariant); classical cards make it one-dimensional.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .clock import (
    BasisJump,
    ClockSpec,
    TickStatistics,
    _sample_ticks_with,
    _uniform_ladder,
    clock_block_traces,
    tick_number_distribution,
    tick_time_density,
)
from .model import GateSet, Program, PunchCard, compose_program_unitary, make_punchcard
from .numerics import (
    DensityMatrix,
    HermitianOperator,
    as_square_matrix,
    dagger,
    expm_hermitian,
    integrate_ode,
    kron_embed,
    max_abs,
    partial_trace,
    trace_distance,
)

FULL_DIM_GUARD = 4096
DENSE_DIM_MAX = 64


class DimensionGuardError(ValueError):
    """Joint space too large for the full solver; use evolve_block instead."""


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """Integration control shared by the time-domain solvers."""

    rtol: float = 1e-9
    atol: float = 1e-12
    t_end: float = 4.0
    sample_times: tuple[float, ...] | None = None
    rng_seed: int = 0
    trajectory_count: int = 1

    def __post_init__(self):
        if self.trajectory_count < 1:
            raise ValueError("trajectory_count must be at least 1")
        if self.sample_times is not None:
            st = tuple(float(t) for t in self.sample_times)
            if any(t > self.t_end + 1e-12 for t in st):
                raise ValueError("t_end must cover all sample times")
            object.__setattr__(self, "sample_times", st)

    def samples(self, n_default: int = 81) -> np.ndarray:
        if self.sample_times is not None:
            ts = np.asarray(self.sample_times, dtype=float)
        else:
            ts = np.linspace(0.0, self.t_end, n_default)
        if ts[0] != 0.0:
            ts = np.concatenate([[0.0], ts])
        return ts


@dataclasses.dataclass(frozen=True)
class SubsystemDims:
    clock: int
    ticks: int
    register: int
    target: int

    @property
    def total(self) -> int:
        return self.clock * self.ticks * self.register * self.target

    def as_list(self) -> list[int]:
        return [self.clock, self.ticks, self.register, self.target]


def _branch_effective_hamiltonians(
    gateset: GateSet, punchcard: PunchCard, none_if_idle: bool = False
) -> list[np.ndarray | None]:
    """Per tick index n < slots: sum_b |b><b| ⊗ H^(a_n^b) on register ⊗ target."""
    B = punchcard.n_branches
    dT = gateset.dim
    out = []
    for n in range(punchcard.slots):
        if none_if_idle and all(b.steps[n] == 0 for b in punchcard.branches):
            out.append(None)
            continue
        h = np.zeros((B * dT, B * dT), dtype=complex)
        for b, branch in enumerate(punchcard.branches):
            h[b * dT : (b + 1) * dT, b * dT : (b + 1) * dT] = gateset.generator_matrix(
                branch.steps[n]
            )
        out.append(h)
    return out


# ---------------------------------------------------------------------------
# generator assembly


@dataclasses.dataclass(frozen=True)
class _StructuredGenerator:
    """Classical-clockwork joint generator on state S[n, j, q, q'].

    n = tick number, j = clockwork level (both provably stay diagonal for
    classical clockworks started diagonal), q = branch ⊗ target index.
    """

    dims: SubsystemDims
    heff: tuple[np.ndarray, ...]
    cw_srcs: np.ndarray
    cw_dsts: np.ndarray
    cw_rates: np.ndarray
    cw_outflow: np.ndarray
    ladder_rate: float | None  # uniform contiguous ladder fast path
    tick_src: np.ndarray
    tick_dst: np.ndarray
    tick_rate: np.ndarray
    tick_rev_rate: np.ndarray | None
    gate_at_cap: bool

    @property
    def shape(self):
        q = self.dims.register * self.dims.target
        return (self.dims.ticks, self.dims.clock, q, q)

    def rhs(self, t, y):
        S = y.view(np.complex128).reshape(self.shape)
        # fresh output each call: the integrator holds derivative references
        # across rejected steps, so the buffer must not be reused
        dS = np.empty(self.shape, dtype=complex)
        nb = self.dims.ticks
        m = nb - 1
        q = self.shape[-1]
        for n in range(m):
            h = self.heff[n]
            if h is None:
                dS[n] = 0.0
                continue
            left = np.matmul(h, S[n])
            right = (S[n].reshape(-1, q) @ h).reshape(S[n].shape)
            np.subtract(left, right, out=dS[n])
            dS[n] *= -1j
        dS[m] = 0.0
        act = m if self.gate_at_cap else nb
        A = S[:act]
        dA = dS[:act]
        if self.ladder_rate is not None:
            r = self.ladder_rate
            dA[:, 1:] += r * A[:, :-1]
            dA[:, :-1] -= r * A[:, :-1]
        elif self.cw_srcs.size:
            flows = self.cw_rates[None, :, None, None] * A[:, self.cw_srcs]
            np.add.at(dA.transpose(1, 0, 2, 3), self.cw_dsts, flows.transpose(1, 0, 2, 3))
            dA -= self.cw_outflow[None, :, None, None] * A
        for n in range(m):
            flux = self.tick_rate[n] * S[n, self.tick_src[n]]
            dS[n, self.tick_src[n]] -= flux
            dS[n + 1, self.tick_dst[n]] += flux
            if self.tick_rev_rate is not None:
                back = self.tick_rev_rate[n] * S[n + 1, self.tick_dst[n]]
                dS[n + 1, self.tick_dst[n]] -= back
                dS[n, self.tick_src[n]] += back
        return dS.view(np.float64).ravel()

    def initial_state(self, spec: ClockSpec, punchcard: PunchCard, rho_T: np.ndarray):
        S0 = np.zeros(self.shape, dtype=complex)
        amps = punchcard.amplitudes()
        reg = np.outer(amps, amps.conj())
        q0 = np.kron(reg, rho_T)
        pops = np.diag(spec.initial.matrix).real
        for j in np.nonzero(pops)[0]:
            S0[0, j] = pops[j] * q0
        return S0


def _structured_generator(
    spec: ClockSpec, gateset: GateSet, punchcard: PunchCard, reversible: bool
) -> _StructuredGenerator:
    if not spec.classical:
        raise ValueError("structured path needs a classical clockwork")
    if max_abs(spec.initial.matrix - np.diag(np.diag(spec.initial.matrix))) > 1e-12:
        raise ValueError("structured path needs a diagonal initial clock state")
    from .clock import _classical_rates, _tick_jump_arrays

    cw = _classical_rates(spec)
    tsrc, tdst, trate = _tick_jump_arrays(spec, spec.max_ticks)
    rev = None
    if reversible:
        if not spec.ticks.reversible:
            raise ValueError("reversible evolution needs finite tick entropy")
        rev = trate * math.exp(-spec.ticks.reverse_entropy)
    D = spec.dim
    ladder = None
    has_reverse_cw = any(j.include_reverse for j in spec.clockwork.jumps)
    if not has_reverse_cw and cw.srcs.size == D - 1:
        if np.array_equal(cw.srcs, np.arange(D - 1)) and np.array_equal(
            cw.dsts, np.arange(1, D)
        ):
            if np.allclose(cw.rates, cw.rates[0], rtol=1e-12, atol=0.0):
                ladder = float(cw.rates[0])
    dims = SubsystemDims(D, spec.max_ticks + 1, punchcard.n_branches, gateset.dim)
    return _StructuredGenerator(
        dims=dims,
        heff=tuple(_branch_effective_hamiltonians(gateset, punchcard, none_if_idle=True)),
        cw_srcs=cw.srcs,
        cw_dsts=cw.dsts,
        cw_rates=cw.rates,
        cw_outflow=cw.outflow,
        ladder_rate=ladder,
        tick_src=tsrc,
        tick_dst=tdst,
        tick_rate=trate,
        tick_rev_rate=rev,
        gate_at_cap=spec.gate_clockwork_at_cap,
    )


class LindbladAction:
    """Matrix-free action of the machine's generator on a joint density matrix.

    Trace-annihilating and Hermiticity-preserving by construction; the callable
    form materializes the joint operators and is meant for desk-scale dims.
    """

    def __init__(self, spec: ClockSpec, gateset: GateSet, punchcard: PunchCard):
        if punchcard.slots != spec.max_ticks:
            raise ValueError(
                f"punch card has {punchcard.slots} slots but the clock caps at "
                f"{spec.max_ticks} ticks"
            )
        self.spec = spec
        self.gateset = gateset
        self.punchcard = punchcard
        self.dims = SubsystemDims(
            spec.dim, spec.max_ticks + 1, punchcard.n_branches, gateset.dim
        )
        self._dense_ops: tuple[np.ndarray, np.ndarray] | None = None

    # -- dense materialization ------------------------------------------------

    def _build_dense(self):
        if self._dense_ops is not None:
            return self._dense_ops
        spec, gs, pc = self.spec, self.gateset, self.punchcard
        d = self.dims.as_list()
        D, nb, B, dT = d
        m = nb - 1
        jump_ops: list[np.ndarray] = []

        gate_proj = None
        if spec.gate_clockwork_at_cap:
            gate_proj = np.eye(nb, dtype=complex)
            gate_proj[m, m] = 0.0
        for j in spec.clockwork.jumps:
            ops = [(j.matrix(D), 0)]
            if gate_proj is not None:
                ops.append((gate_proj, 1))
            jump_ops.append(kron_embed(ops, d))
            if j.include_reverse:
                if isinstance(j, BasisJump):
                    revm = np.zeros((D, D), dtype=complex)
                    revm[j.src, j.dst] = math.sqrt(j.reverse_rate())
                else:
                    revm = j.reverse_matrix()
                ops = [(revm, 0)]
                if gate_proj is not None:
                    ops.append((gate_proj, 1))
                jump_ops.append(kron_embed(ops, d))

        tick = np.zeros((self.dims.total, self.dims.total), dtype=complex)
        untick = np.zeros_like(tick)
        for n in range(m):
            jn = spec.ticks.jump_for(n)
            shift = np.zeros((nb, nb), dtype=complex)
            shift[n + 1, n] = 1.0
            tick += kron_embed([(jn.matrix(D), 0), (shift, 1)], d)
            if spec.ticks.reversible:
                if isinstance(jn, BasisJump):
                    revm = np.zeros((D, D), dtype=complex)
                    revm[jn.src, jn.dst] = math.sqrt(
                        jn.rate * math.exp(-spec.ticks.reverse_entropy)
                    )
                else:
                    revm = math.exp(-spec.ticks.reverse_entropy / 2.0) * dagger(jn.matrix(D))
                untick += kron_embed([(revm, 0), (dagger(shift), 1)], d)
        jump_ops.append(tick)
        if spec.ticks.reversible:
            jump_ops.append(untick)

        h_total = np.zeros((self.dims.total, self.dims.total), dtype=complex)
        if spec.clockwork.hamiltonian is not None:
            h_total += kron_embed([(spec.clockwork.hamiltonian.matrix, 0)], d)
        heff = _branch_effective_hamiltonians(gs, pc)
        for n in range(m):
            proj = np.zeros((nb, nb), dtype=complex)
            proj[n, n] = 1.0
            h_total += kron_embed(
                [(proj, 1), (heff[n].reshape(B * dT, B * dT), 2)], [D, nb, B * dT]
            )
        loss = sum(dagger(L) @ L for L in jump_ops)
        self._dense_ops = (h_total, jump_ops, loss)
        return self._dense_ops

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        rho = as_square_matrix(rho, "rho")
        if rho.shape[0] != self.dims.total:
            raise ValueError(f"state dim {rho.shape[0]} != joint dim {self.dims.total}")
        h, jumps, loss = self._build_dense()
        out = -1j * (h @ rho - rho @ h)
        for L in jumps:
            out += L @ rho @ dagger(L)
        out -= 0.5 * (loss @ rho + rho @ loss)
        return out

    def structured(self, reversible: bool = False) -> _StructuredGenerator:
        return _structured_generator(self.spec, self.gateset, self.punchcard, reversible)


def build_lindbladian(spec: ClockSpec, gateset: GateSet, punchcard: PunchCard) -> LindbladAction:
    return LindbladAction(spec, gateset, punchcard)


# ---------------------------------------------------------------------------
# trajectory containers


@dataclasses.dataclass(frozen=True)
class FullState:
    t: float
    dims: SubsystemDims
    rho: np.ndarray | None = None
    structured: np.ndarray | None = None  # (nb, D, Q, Q)

    def tick_probabilities(self) -> np.ndarray:
        if self.structured is not None:
            return np.einsum("njqq->n", self.structured).real
        reduced = partial_trace(self.rho, self.dims.as_list(), keep=[1])
        return np.diag(reduced).real

    def register_target(self) -> np.ndarray:
        """Reduced state on instruction register (branch basis) ⊗ target."""
        if self.structured is not None:
            return np.einsum("njqp->qp", self.structured)
        return partial_trace(self.rho, self.dims.as_list(), keep=[2, 3])

    def target(self) -> np.ndarray:
        rt = self.register_target()
        return partial_trace(rt, [self.dims.register, self.dims.target], keep=[1])


@dataclasses.dataclass(frozen=True)
class FullTrajectory:
    times: np.ndarray
    states: tuple[FullState, ...]

    def target_states(self) -> list[np.ndarray]:
        return [s.target() for s in self.states]

    def tick_probabilities(self) -> np.ndarray:
        return np.vstack([s.tick_probabilities() for s in self.states])

    def state_at(self, t: float) -> FullState:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 + 1e-9 * abs(t):
            raise ValueError(f"time {t} was not sampled")
        return self.states[idx]

    def target_at(self, t: float) -> np.ndarray:
        return self.state_at(t).target()


@dataclasses.dataclass(frozen=True)
class BlockState:
    """Tick-resolved snapshot: clock blocks rho_C^(n) and unnormalized target
    blocks sigma_T^(n) with tr sigma_T^(n) = tr rho_C^(n) = P[N(t)=n]."""

    t: float
    clock_blocks: np.ndarray  # (nb, D) populations or (nb, D, D) matrices
    target_blocks: np.ndarray  # (nb, dT, dT)

    def tick_probabilities(self) -> np.ndarray:
        if self.clock_blocks.ndim == 2:
            return self.clock_blocks.sum(axis=1).real
        return np.einsum("njj->n", self.clock_blocks).real

    def target(self) -> np.ndarray:
        return self.target_blocks.sum(axis=0)

    def normalized_target_block(self, n: int) -> np.ndarray | None:
        w = self.tick_probabilities()[n]
        if w <= 1e-12:
            return None
        return self.target_blocks[n] / w


@dataclasses.dataclass(frozen=True)
class BlockTrajectory:
    times: np.ndarray
    states: tuple[BlockState, ...]
    forward_currents: np.ndarray | None = None  # (nt, M): flux block n -> n+1
    backward_currents: np.ndarray | None = None  # (nt, M): flux block n+1 -> n

    def target_states(self) -> list[np.ndarray]:
        return [s.target() for s in self.states]

    def tick_probabilities(self) -> np.ndarray:
        return np.vstack([s.tick_probabilities() for s in self.states])

    def state_at(self, t: float) -> BlockState:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 + 1e-9 * abs(t):
            raise ValueError(f"time {t} was not sampled")
        return self.states[idx]

    def target_at(self, t: float) -> np.ndarray:
        return self.state_at(t).target()


# ---------------------------------------------------------------------------
# full solver


def evolve_full(
    spec: ClockSpec,
    gateset: GateSet,
    punchcard: PunchCard,
    rho_T_init: DensityMatrix | np.ndarray,
    config: SolverConfig = SolverConfig(),
    dense_cutoff: int = DENSE_DIM_MAX,
) -> FullTrajectory:
    """Joint evolution on clockwork ⊗ tick register ⊗ instruction ⊗ target.

    Small joint spaces evolve a dense density matrix; larger classical-clockwork
    systems switch to the exact diagonal-clock structured form.  Above the
    guard the caller is pointed at the block solver.
    """
    action = build_lindbladian(spec, gateset, punchcard)
    dims = action.dims
    if dims.total > FULL_DIM_GUARD:
        raise DimensionGuardError(
            f"joint dimension {dims.total} exceeds {FULL_DIM_GUARD}; use evolve_block"
        )
    rho_T = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    if rho_T.shape[0] != gateset.dim:
        raise ValueError("target state dimension mismatch")
    ts = np.asarray(config.samples(), dtype=float)

    if dims.total <= dense_cutoff:
        h, jumps, loss = action._build_dense()
        amps = punchcard.amplitudes()
        reg = np.outer(amps, amps.conj())
        clock0 = spec.initial.matrix
        hand0 = np.zeros((dims.ticks, dims.ticks), dtype=complex)
        hand0[0, 0] = 1.0
        rho0 = np.kron(np.kron(np.kron(clock0, hand0), reg), rho_T)
        shape = rho0.shape

        def rhs(t, y):
            rho = y.view(np.complex128).reshape(shape)
            out = -1j * (h @ rho - rho @ h)
            for L in jumps:
                out += L @ rho @ dagger(L)
            out -= 0.5 * (loss @ rho + rho @ loss)
            return out.view(np.float64).ravel()

        sol = integrate_ode(rhs, rho0.view(np.float64).ravel(), ts, config.rtol, config.atol)
        states = tuple(
            FullState(t=float(t), dims=dims, rho=sol[i].view(np.complex128).reshape(shape))
            for i, t in enumerate(ts)
        )
        return FullTrajectory(times=ts, states=states)

    gen = action.structured(reversible=spec.ticks.reversible)
    S0 = gen.initial_state(spec, punchcard, rho_T)
    sol = integrate_ode(gen.rhs, S0.view(np.float64).ravel(), ts, config.rtol, config.atol)
    states = tuple(
        FullState(
            t=float(t),
            dims=dims,
            structured=sol[i].view(np.complex128).reshape(gen.shape),
        )
        for i, t in enumerate(ts)
    )
    return FullTrajectory(times=ts, states=states)


# ---------------------------------------------------------------------------
# block solver


def _block_states_from_structured(gen, ts, sol) -> tuple[BlockState, ...]:
    nb, D, Q, _ = gen.shape
    dT = gen.dims.target
    states = []
    for i, t in enumerate(ts):
        S = sol[i].view(np.complex128).reshape(gen.shape)
        clock = np.einsum("njqq->nj", S).real
        target = np.einsum("njqp->nqp", S)
        states.append(
            BlockState(t=float(t), clock_blocks=clock, target_blocks=target.reshape(nb, dT, dT))
        )
    return tuple(states)


CASCADE_AUTO_DIM = 1601


def evolve_block(
    spec: ClockSpec,
    gateset: GateSet,
    punchcard: PunchCard,
    rho_T_init: DensityMatrix | np.ndarray,
    config: SolverConfig = SolverConfig(),
    method: str = "auto",
) -> BlockTrajectory:
    """Tick-number-resolved fast path for classical punch cards.

    Integrates the unnormalized pre-division block equations: each block pair
    (rho_C^(n), sigma_T^(n)) evolves jointly, fed by the tick flux from block
    n-1; the reported target state is sum_n sigma_T^(n).

    ``method``: "ode" integrates the stiff block equations directly;
    "cascade" uses the closed-form ladder propagation (uniform reset ladders
    only, sample times snapped to its internal grid); "auto" picks cascade
    above clockwork dimension ~1600 where direct integration gets expensive.
    """
    if not punchcard.is_classical:
        raise ValueError("block solver takes classical punch cards only; use evolve_full")
    rho_T = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    ts = np.asarray(config.samples(), dtype=float)
    from .ladder import LadderCascade, cascade_applicable

    if method not in ("auto", "ode", "cascade"):
        raise ValueError(f"unknown block method {method!r}")
    use_cascade = method == "cascade" or (
        method == "auto" and spec.dim >= CASCADE_AUTO_DIM and cascade_applicable(spec, punchcard)
    )
    if use_cascade:
        cascade = LadderCascade(spec, gateset, punchcard, t_end=config.t_end)
        targets = cascade.target_blocks(np.asarray(rho_T, dtype=complex), ts)
        pops = cascade.clock_populations(np.asarray(rho_T, dtype=complex), ts)
        states = tuple(
            BlockState(t=float(t), clock_blocks=pops[i], target_blocks=targets[i])
            for i, t in enumerate(ts)
        )
        return BlockTrajectory(times=ts, states=states)
    if spec.classical:
        gen = _structured_generator(spec, gateset, punchcard, reversible=False)
        S0 = gen.initial_state(spec, punchcard, rho_T)
        sol = integrate_ode(gen.rhs, S0.view(np.float64).ravel(), ts, config.rtol, config.atol)
        return BlockTrajectory(times=ts, states=_block_states_from_structured(gen, ts, sol))
    return _evolve_general_blocks(spec, gateset, punchcard, rho_T, ts, config)


def _evolve_general_blocks(spec, gateset, punchcard, rho_T, ts, config) -> BlockTrajectory:
    """Non-classical (small) clockwork fallback: joint (clock ⊗ target) blocks."""
    D, dT = spec.dim, gateset.dim
    nb = spec.max_ticks + 1
    steps = punchcard.branches[0].steps
    hC = spec.clockwork.hamiltonian
    h_clock = kron_embed([(hC.matrix, 0)], [D, dT]) if hC is not None else None
    h_blocks = []
    for n in range(nb):
        h = None if h_clock is None else h_clock.copy()
        if n < spec.max_ticks and steps[n] != 0:
            h_gate = kron_embed([(gateset.generator_matrix(steps[n]), 1)], [D, dT])
            h = h_gate if h is None else h + h_gate
        h_blocks.append(h)
    ls = []
    for j in spec.clockwork.jumps:
        ls.append(kron_embed([(j.matrix(D), 0)], [D, dT]))
        if j.include_reverse:
            if isinstance(j, BasisJump):
                revm = np.zeros((D, D), dtype=complex)
                revm[j.src, j.dst] = math.sqrt(j.reverse_rate())
            else:
                revm = j.reverse_matrix()
            ls.append(kron_embed([(revm, 0)], [D, dT]))
    lsum = sum(dagger(l) @ l for l in ls) if ls else np.zeros((D * dT, D * dT), dtype=complex)
    ticks = [
        kron_embed([(spec.ticks.jump_for(n).matrix(D), 0)], [D, dT])
        for n in range(spec.max_ticks)
    ]
    tick_loss = [dagger(j) @ j for j in ticks]
    shape = (nb, D * dT, D * dT)
    b0 = np.zeros(shape, dtype=complex)
    b0[0] = np.kron(spec.initial.matrix, rho_T)

    def rhs(t, y):
        b = y.view(np.complex128).reshape(shape)
        db = np.zeros_like(b)
        for n in range(nb):
            if h_blocks[n] is not None:
                db[n] += -1j * (h_blocks[n] @ b[n] - b[n] @ h_blocks[n])
        for l in ls:
            db += l @ b @ dagger(l)
        db -= 0.5 * (lsum @ b + b @ lsum)
        for n in range(spec.max_ticks):
            db[n] -= 0.5 * (tick_loss[n] @ b[n] + b[n] @ tick_loss[n])
            db[n + 1] += ticks[n] @ b[n] @ dagger(ticks[n])
        return db.view(np.float64).ravel()

    sol = integrate_ode(rhs, b0.view(np.float64).ravel(), ts, config.rtol, config.atol)
    states = []
    for i, t in enumerate(ts):
        b = sol[i].view(np.complex128).reshape(shape)
        joint = b.reshape(nb, D, dT, D, dT)
        clock = np.einsum("njtkt->njk", joint)
        target = np.einsum("njtjs->nts", joint)
        states.append(BlockState(t=float(t), clock_blocks=clock, target_blocks=target))
    return BlockTrajectory(times=ts, states=tuple(states))


def evolve_reversible(
    spec: ClockSpec,
    gateset: GateSet,
    punchcard: PunchCard,
    rho_T_init: DensityMatrix | np.ndarray,
    config: SolverConfig = SolverConfig(),
) -> BlockTrajectory:
    """Block evolution with detailed-balance reverse ticks and current traces."""
    if not spec.ticks.reversible:
        raise ValueError("tick entropy is infinite: reverse ticks vanish, use evolve_block")
    if not punchcard.is_classical:
        raise ValueError("reversible solver takes classical punch cards")
    if not spec.classical:
        raise ValueError("reversible solver implemented for classical clockworks")
    rho_T = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    ts = np.asarray(config.samples(), dtype=float)
    gen = _structured_generator(spec, gateset, punchcard, reversible=True)
    S0 = gen.initial_state(spec, punchcard, rho_T)
    sol = integrate_ode(gen.rhs, S0.view(np.float64).ravel(), ts, config.rtol, config.atol)
    states = _block_states_from_structured(gen, ts, sol)
    m = spec.max_ticks
    fwd = np.zeros((len(ts), m))
    bwd = np.zeros((len(ts), m))
    for i, st in enumerate(states):
        pops = st.clock_blocks  # (nb, D)
        for n in range(m):
            fwd[i, n] = gen.tick_rate[n] * pops[n, gen.tick_src[n]]
            bwd[i, n] = gen.tick_rev_rate[n] * pops[n + 1, gen.tick_dst[n]]
    return BlockTrajectory(
        times=ts, states=states, forward_currents=fwd, backward_currents=bwd
    )


# ---------------------------------------------------------------------------
# ideal, iid and second-order channels


def evolve_ideal(
    gateset: GateSet, program: Program | Sequence[int], rho_T_init
) -> np.ndarray:
    """Perfect-clock limit: V_A rho V_A† by plain matrix products."""
    rho = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    v = compose_program_unitary(gateset, program)
    return v @ rho @ dagger(v)


def _density_arrays(tick_density) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(tick_density, TickStatistics):
        return tick_density.t_grid, tick_density.density
    t, p = tick_density
    return np.asarray(t, dtype=float), np.asarray(p, dtype=float)


def tick_channel_factors(energies: np.ndarray, t: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Eigenbasis damping factors of the mixed-unitary tick channel.

    Entry (i,j) multiplies the coherence between eigenvalues E_i and E_j:
    the average of exp(-i(E_i-E_j)T) over the tick-time density.
    """
    omega = energies[:, None] - energies[None, :]
    mass = simpson(p, x=t)
    flat = np.unique(np.round(omega.ravel(), 15))
    vals = {}
    for w in flat:
        vals[w] = simpson(p * np.exp(-1j * w * t), x=t) / mass
    return np.vectorize(lambda w: vals[w])(np.round(omega, 15))


def evolve_iid(
    gateset: GateSet,
    program: Program | Sequence[int],
    tick_density,
    rho_T_init,
    min_mass: float = 0.999,
) -> np.ndarray:
    """Apply the iid tick channel once per program step (quadrature path)."""
    t, p = _density_arrays(tick_density)
    mass = float(simpson(p, x=t))
    if mass < min_mass:
        raise ValueError(f"tick density mass {mass:.6f} below {min_mass} on the given grid")
    rho = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    rho = np.array(rho, dtype=complex)
    steps = program.steps if isinstance(program, Program) else tuple(program)
    Program(steps).validate_for(gateset)
    factor_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for a in steps:
        if a == 0:
            continue
        if a not in factor_cache:
            vals, vecs = gateset.generators[a - 1].eigensystem
            factors = tick_channel_factors(vals, t, p)
            factor_cache[a] = (factors, vecs)
        factors, vecs = factor_cache[a]
        rho_eig = dagger(vecs) @ rho @ vecs
        rho = vecs @ (rho_eig * factors) @ dagger(vecs)
    return rho


def erlang_tick_channel_factors(D: int, Gamma: float, energies: np.ndarray) -> np.ndarray:
    """Closed-form damping factors for Erlang(D, D·Gamma) tick times:
    (r/(r + i·dE))^D with r = D·Gamma."""
    r = D * Gamma
    omega = energies[:, None] - energies[None, :]
    return (r / (r + 1j * omega)) ** D


def evolve_iid_erlang(
    gateset: GateSet, program: Program | Sequence[int], D: int, Gamma: float, rho_T_init
) -> np.ndarray:
    """Closed-form Erlang tick channel, applied once per program step.

    Independent of the quadrature path: factors come from the analytic
    characteristic function, not from a sampled density.
    """
    rho = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    rho = np.array(rho, dtype=complex)
    steps = program.steps if isinstance(program, Program) else tuple(program)
    Program(steps).validate_for(gateset)
    for a in steps:
        if a == 0:
            continue
        # generator eigenvalues and the clock rate share one time unit
        vals, vecs = gateset.generators[a - 1].eigensystem
        factors = erlang_tick_channel_factors(D, Gamma, vals)
        rho_eig = dagger(vecs) @ rho @ vecs
        rho = vecs @ (rho_eig * factors) @ dagger(vecs)
    return rho


def clock_channel_second_order(H, tau: float, N: float, rho) -> np.ndarray:
    """Finite-accuracy tick channel to second order: V rho V† minus the
    (tau²/2N)-weighted double commutator of the rotated state."""
    if N <= 0:
        raise ValueError("accuracy N must be positive")
    h = H.matrix if isinstance(H, HermitianOperator) else as_square_matrix(H, "H")
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    v = expm_hermitian(h, tau)
    rotated = v @ rho @ dagger(v)
    comm2 = h @ h @ rotated - 2.0 * (h @ rotated @ h) + rotated @ h @ h
    return rotated - (tau**2 / (2.0 * N)) * comm2


# ---------------------------------------------------------------------------
# Monte Carlo unraveling


@dataclasses.dataclass(frozen=True)
class IdealTicker:
    """Deterministic tick source: ticks at exact multiples of tau."""

    tau: float
    max_ticks: int


@dataclasses.dataclass(frozen=True)
class MonteCarloResult:
    rho: np.ndarray
    stderr_real: np.ndarray
    stderr_imag: np.ndarray
    n_trajectories: int

    def agrees_with(self, reference: np.ndarray, n_sigma: float = 3.0, floor: float = 1e-12) -> bool:
        ref = np.asarray(reference)
        ok_r = np.abs(self.rho.real - ref.real) <= n_sigma * self.stderr_real + floor
        ok_i = np.abs(self.rho.imag - ref.imag) <= n_sigma * self.stderr_imag + floor
        return bool(np.all(ok_r) and np.all(ok_i))


def _trajectory_unitary(gateset: GateSet, steps, tick_times, t_end, eigcache) -> np.ndarray:
    boundaries = [0.0] + [float(t) for t in tick_times] + [t_end]
    u = np.eye(gateset.dim, dtype=complex)
    for k in range(len(boundaries) - 1):
        dt = boundaries[k + 1] - boundaries[k]
        if dt <= 0:
            continue
        a = steps[k] if k < len(steps) else 0
        if a == 0:
            continue
        vals, vecs = eigcache[a]
        u = (vecs * np.exp(-1j * vals * dt)) @ dagger(vecs) @ u
    return u


def evolve_monte_carlo(
    spec: ClockSpec | IdealTicker,
    gateset: GateSet,
    punchcard: PunchCard,
    rho_T_init,
    config: SolverConfig = SolverConfig(),
) -> MonteCarloResult:
    """Average of unitary tick-time trajectories; deterministic per seed."""
    if not punchcard.is_classical:
        raise ValueError("Monte Carlo path takes classical punch cards")
    steps = punchcard.branches[0].steps
    rho0 = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    n = config.trajectory_count
    t_end = config.t_end
    eigcache = {
        a: gateset.generators[a - 1].eigensystem for a in sorted(set(steps)) if a != 0
    }

    if isinstance(spec, IdealTicker):
        ticks_list = [
            np.arange(1, spec.max_ticks + 1) * spec.tau for _ in range(n)
        ]
        ticks_list = [t[t <= t_end] for t in ticks_list]
    else:
        ladder = _uniform_ladder(spec)
        if ladder is not None:
            D, rate = ladder
            rng = np.random.Generator(np.random.Philox(key=np.uint64(config.rng_seed)))
            spacings = rng.gamma(shape=D, scale=1.0 / rate, size=(n, spec.max_ticks))
            times = np.cumsum(spacings, axis=1)
            ticks_list = [row[row <= t_end] for row in times]
        else:
            ticks_list = []
            for i in range(n):
                ss = np.random.SeedSequence(entropy=config.rng_seed, spawn_key=(i,))
                rng = np.random.Generator(np.random.Philox(ss))
                ticks_list.append(_sample_ticks_with(spec, rng, t_end))

    mean = np.zeros_like(rho0, dtype=complex)
    m2_real = np.zeros(rho0.shape)
    m2_imag = np.zeros(rho0.shape)
    for i, ticks in enumerate(ticks_list):
        u = _trajectory_unitary(gateset, steps, ticks, t_end, eigcache)
        rho = u @ rho0 @ dagger(u)
        delta = rho - mean
        mean += delta / (i + 1)
        m2_real += delta.real * (rho - mean).real
        m2_imag += delta.imag * (rho - mean).imag
    if n > 1:
        se_r = np.sqrt(m2_real / (n - 1) / n)
        se_i = np.sqrt(m2_imag / (n - 1) / n)
    else:
        se_r = np.zeros(rho0.shape)
        se_i = np.zeros(rho0.shape)
    return MonteCarloResult(rho=mean, stderr_real=se_r, stderr_imag=se_i, n_trajectories=n)


# ---------------------------------------------------------------------------
# fidelity, SWITCH oracle, conditional kernel


def program_fidelity(
    result,
    gateset: GateSet,
    program: Program | Sequence[int],
    rho_T_init,
    t_eval: float | None = None,
) -> float:
    """Overlap of the simulated target state with the ideal program output.

    ``result`` may be a trajectory (sampled at t_eval, default 2·slots·tau) or
    a final-state matrix.  Mixed initial states fall back to the trace overlap
    with the ideal output, with a warning.
    """
    if isinstance(result, (FullTrajectory, BlockTrajectory)):
        if t_eval is None:
            nb = len(result.states[0].tick_probabilities())
            t_eval = 2.0 * (nb - 1) * gateset.tau
        if t_eval > result.times[-1] + 1e-9:
            raise ValueError(f"t_eval {t_eval} beyond simulated horizon {result.times[-1]}")
        rho = result.target_at(t_eval)
    elif isinstance(result, MonteCarloResult):
        rho = result.rho
    else:
        rho = result.matrix if isinstance(result, DensityMatrix) else np.asarray(result)
    rho0 = rho_T_init.matrix if isinstance(rho_T_init, DensityMatrix) else np.asarray(rho_T_init)
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.ndim == 1:
        psi0 = rho0 / np.linalg.norm(rho0)
    else:
        vals, vecs = np.linalg.eigh(rho0)
        if vals[-1] < 1.0 - 1e-9:
            warnings.warn(
                "mixed initial state: reporting trace overlap with the ideal output",
                stacklevel=2,
            )
            v = compose_program_unitary(gateset, program)
            ideal = v @ rho0 @ dagger(v)
            return float(np.real(np.trace(ideal @ rho)))
        psi0 = vecs[:, -1]
    v = compose_program_unitary(gateset, program)
    psi = v @ psi0
    return float(np.real(psi.conj() @ rho @ psi))


def switch_reference(U1, U2, control_amplitudes, rho_T) -> np.ndarray:
    """Ideal order-superposition output on control ⊗ target.

    Control basis state 0 applies U1 then U2 (joint unitary U2·U1), control
    state 1 the opposite order.
    """
    u1 = as_square_matrix(U1, "U1")
    u2 = as_square_matrix(U2, "U2")
    for name, u in (("U1", u1), ("U2", u2)):
        if max_abs(u @ dagger(u) - np.eye(u.shape[0])) > 1e-10:
            raise ValueError(f"{name} is not unitary")
    amps = np.asarray(control_amplitudes, dtype=complex)
    if amps.shape != (2,):
        raise ValueError("control_amplitudes must have two entries")
    amps = amps / np.linalg.norm(amps)
    rho = rho_T.matrix if isinstance(rho_T, DensityMatrix) else np.asarray(rho_T, dtype=complex)
    d = rho.shape[0]
    w = np.zeros((2 * d, 2 * d), dtype=complex)
    w[:d, :d] = u2 @ u1
    w[d:, d:] = u1 @ u2
    control = np.outer(amps, amps.conj())
    joint = np.kron(control, rho)
    return w @ joint @ dagger(w)


@dataclasses.dataclass(frozen=True)
class ConditionalTickKernel:
    """Hazard p(s) of the n-th tick given n ticks by t, and the induced
    density xi(t,s) of the tick time s <= t; xi integrates to one."""

    n: int
    t: float
    s_grid: np.ndarray
    p: np.ndarray
    xi: np.ndarray

    def integral(self) -> float:
        return float(simpson(self.xi, x=self.s_grid))


def conditional_tick_kernel(
    spec: ClockSpec, n: int, t: float, points: int = 2001, s_min: float | None = None
) -> ConditionalTickKernel:
    if n < 1 or n > spec.max_ticks:
        raise ValueError("tick index out of range")
    if s_min is None:
        s_min = t * 1e-4
    s = np.linspace(s_min, t, points)
    dens = tick_time_density(spec, n, s)
    probs = tick_number_distribution(spec, s)[:, n]
    probs = np.maximum(probs, 1e-300)
    p = dens / probs
    # survival integral from s to t of the hazard, then xi = p * exp(-I)
    cum = np.concatenate([[0.0], np.cumsum((p[1:] + p[:-1]) * 0.5 * np.diff(s))])
    integral_to_t = cum[-1] - cum
    xi = p * np.exp(-integral_to_t)
    return ConditionalTickKernel(n=n, t=t, s_grid=s, p=p, xi=xi)
