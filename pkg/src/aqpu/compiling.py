"""Exhaustive gate-sequence compilation over a single-qubit gate set, and the
sequence-length vs. clock-error trade-off.

Longer products approximate a target unitary better, but every extra step
costs clock error ~ phi_max²/N, so the total error has an interior minimum in
the sequence length.  At desk scale the search is exact breadth-first
enumeration with deduplication on a phase-quotiented operator-distance grid.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .model import GateSet
from .numerics import as_square_matrix, dagger, max_abs

L_MAX_GUARD = 14
DEDUP_RESOLUTION = 1e-3


def operator_distance(U, V) -> float:
    """min over a global phase of the operator-norm distance ||U − e^{iφ}V||."""
    u = as_square_matrix(U, "U")
    v = as_square_matrix(V, "V")
    if u.shape != v.shape:
        raise ValueError("operands must share dimensions")
    for name, m in (("U", u), ("V", v)):
        if max_abs(m @ dagger(m) - np.eye(m.shape[0])) > 1e-9:
            raise ValueError(f"{name} is not unitary")
    w = dagger(u) @ v
    phases = np.angle(np.linalg.eigvals(w))
    # ||U − e^{iφ}V|| = max_j |1 − e^{i(φ+θ_j)}| = 2 max_j |sin((φ+θ_j)/2)|;
    # the optimum centers the eigenphase arc: find it via the largest gap.
    theta = np.sort(np.mod(phases, 2 * np.pi))
    gaps = np.diff(np.concatenate([theta, [theta[0] + 2 * np.pi]]))
    k = int(np.argmax(gaps))
    spread = 2 * np.pi - gaps[k]
    half = min(spread / 2.0, np.pi)
    return float(2.0 * math.sin(half / 2.0))


def _su2_key(u: np.ndarray, resolution: float) -> tuple[int, ...]:
    """Grid key of the phase-quotiented SU(2) representative (sign-canonical)."""
    det = np.linalg.det(u)
    v = u / np.sqrt(det)
    flat = np.array([v[0, 0].real, v[0, 0].imag, v[0, 1].real, v[0, 1].imag,
                     v[1, 0].real, v[1, 0].imag, v[1, 1].real, v[1, 1].imag])
    for x in flat:
        if abs(x) > 1e-9:
            if x < 0:
                flat = -flat
            break
    return tuple(np.round(flat / resolution).astype(int))


@dataclasses.dataclass(frozen=True)
class CompilationResult:
    """Best approximations per sequence length, with the clock-error trade-off."""

    target: np.ndarray
    phi_max: float
    lengths: np.ndarray           # 0..L_max
    epsilon: np.ndarray           # best distance using at most L gates
    best_programs: tuple[tuple[int, ...], ...]
    representatives: tuple[np.ndarray, ...] = ()

    def best_at(self, L: int) -> tuple[tuple[int, ...], float]:
        return self.best_programs[L], float(self.epsilon[L])


def compile_bruteforce(U, gateset: GateSet, L_max: int) -> CompilationResult:
    """Breadth-first product enumeration with grid deduplication.

    ``epsilon[L]`` is the best phase-quotiented operator distance achievable
    with at most L gates (non-increasing by construction).
    """
    if L_max > L_MAX_GUARD:
        raise ValueError(f"L_max {L_max} exceeds enumeration guard {L_MAX_GUARD}")
    if gateset.dim != 2:
        raise ValueError("brute-force compilation expects a single-qubit gate set")
    target = as_square_matrix(U, "U")
    if max_abs(target @ dagger(target) - np.eye(2)) > 1e-9:
        raise ValueError("target is not unitary")

    gates = [gateset.gate(k) for k in range(1, gateset.n_gates + 1)]
    seen: set[tuple[int, ...]] = set()
    eye = np.eye(2, dtype=complex)
    seen.add(_su2_key(eye, DEDUP_RESOLUTION))
    kept: list[np.ndarray] = [eye]
    layer: list[tuple[np.ndarray, tuple[int, ...]]] = [(eye, ())]

    lengths = np.arange(L_max + 1)
    epsilon = np.full(L_max + 1, np.inf)
    best: list[tuple[int, ...]] = [()] * (L_max + 1)
    epsilon[0] = operator_distance(target, eye)

    for L in range(1, L_max + 1):
        nxt: list[tuple[np.ndarray, tuple[int, ...]]] = []
        best_d = epsilon[L - 1]
        best_prog = best[L - 1]
        for u_prev, prog in layer:
            for k, g in enumerate(gates, start=1):
                u = g @ u_prev
                key = _su2_key(u, DEDUP_RESOLUTION)
                if key in seen:
                    continue
                seen.add(key)
                kept.append(u)
                seq = prog + (k,)
                nxt.append((u, seq))
                d = operator_distance(target, u)
                if d < best_d:
                    best_d = d
                    best_prog = seq
        epsilon[L] = best_d
        best[L] = best_prog
        layer = nxt
        if not layer:
            # group exhausted at this resolution: later lengths inherit the best
            for L2 in range(L + 1, L_max + 1):
                epsilon[L2] = best_d
                best[L2] = best_prog
            break

    return CompilationResult(
        target=target,
        phi_max=gateset.phi_max,
        lengths=lengths,
        epsilon=epsilon,
        best_programs=tuple(best),
        representatives=tuple(kept),
    )


@dataclasses.dataclass(frozen=True)
class TradeoffCurve:
    lengths: np.ndarray
    epsilon: np.ndarray
    clock_term: np.ndarray
    total: np.ndarray
    best_programs: tuple[tuple[int, ...], ...]

    @property
    def argmin_length(self) -> int:
        return int(np.argmin(self.total))

    @property
    def has_interior_minimum(self) -> bool:
        k = self.argmin_length
        return 0 < k < len(self.lengths) - 1


def tradeoff_curve(
    U, gateset: GateSet, N: float, L_max: int, result: CompilationResult | None = None
) -> TradeoffCurve:
    """total(L) = epsilon(L) + L·phi_max²/N, with the compile error from
    brute-force enumeration (convention constant 1 on the clock term)."""
    if result is None:
        result = compile_bruteforce(U, gateset, L_max)
    clock = result.lengths * gateset.phi_max**2 / N
    return TradeoffCurve(
        lengths=result.lengths,
        epsilon=result.epsilon,
        clock_term=clock,
        total=result.epsilon + clock,
        best_programs=result.best_programs,
    )


def t_gate_generator() -> np.ndarray:
    """Hermitian generator whose unit-time propagator is the T gate."""
    z = np.array([[1, 0], [0, -1]], dtype=complex)
    return -(np.pi / 8) * (np.eye(2) - z)


def standard_ht_gateset(tau: float = 1.0) -> GateSet:
    """Universal {H, T} single-qubit set with exact unit-time generators."""
    from .model import hadamard_generator, make_gateset

    return make_gateset(tau, [hadamard_generator().matrix, t_gate_generator()], labels=("H", "T"))


def rotation_z(angle: float) -> np.ndarray:
    return np.array(
        [[np.exp(-1j * angle / 2), 0], [0, np.exp(1j * angle / 2)]], dtype=complex
    )
