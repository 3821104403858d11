"""Dense complex linear algebra and integration primitives shared by every solver.

States and operators are small dense complex matrices.  Matrix exponentials go
through Hermitian eigendecompositions (every generator in this package is
Hermitian, and the eigenbasis is reused by the closed-form tick channels), and
time integration is an adaptive embedded Runge-Kutta pair driven matrix-free
on flat real vectors.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

HERMITICITY_TOL = 1e-12
DENSITY_HERMITICITY_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-9

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12


class IntegrationError(RuntimeError):
    """Adaptive integration failed; ``time`` is the last time reached."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time


def as_square_matrix(matrix, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(matrix, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def hermiticity_defect(a: np.ndarray) -> float:
    return max_abs(a - dagger(a))


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True)
class HermitianOperator:
    """A validated Hermitian matrix; hosts every Hamiltonian in the package."""

    matrix: np.ndarray

    def __post_init__(self):
        m = as_square_matrix(self.matrix, "Hermitian operator")
        defect = hermiticity_defect(m)
        if defect > HERMITICITY_TOL:
            raise ValueError(
                f"operator is not Hermitian (max defect {defect:.3e} > {HERMITICITY_TOL})"
            )
        object.__setattr__(self, "matrix", _readonly((m + dagger(m)) / 2.0))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        vals, vecs = np.linalg.eigh(self.matrix)
        vals.setflags(write=False)
        vecs.setflags(write=False)
        return vals, vecs

    @property
    def operator_norm(self) -> float:
        vals, _ = self.eigensystem
        return float(np.max(np.abs(vals))) if vals.size else 0.0

    @property
    def spectral_half_spread(self) -> float:
        vals, _ = self.eigensystem
        return float(vals.max() - vals.min()) / 2.0 if vals.size else 0.0


@dataclasses.dataclass(frozen=True)
class DensityMatrix:
    """Possibly unnormalized density block: Hermitian, PSD up to tolerance, trace == weight."""

    matrix: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        m = as_square_matrix(self.matrix, "density matrix")
        defect = hermiticity_defect(m)
        if defect > DENSITY_HERMITICITY_TOL:
            raise ValueError(f"density matrix not Hermitian (defect {defect:.3e})")
        m = (m + dagger(m)) / 2.0
        tr = float(np.trace(m).real)
        if abs(tr - self.weight) > DENSITY_TRACE_TOL:
            raise ValueError(
                f"trace {tr:.12g} does not match declared weight {self.weight:.12g}"
            )
        evals = np.linalg.eigvalsh(m)
        if evals.size and evals.min() < EIGENVALUE_FLOOR:
            raise ValueError(f"density matrix has eigenvalue {evals.min():.3e} < {EIGENVALUE_FLOOR}")
        object.__setattr__(self, "matrix", _readonly(m))
        object.__setattr__(self, "weight", tr)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @staticmethod
    def from_state_vector(psi, weight: float = 1.0) -> "DensityMatrix":
        v = np.asarray(psi, dtype=complex).ravel()
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("zero state vector")
        v = v / norm
        return DensityMatrix(weight * np.outer(v, v.conj()), weight=weight)

    def normalized(self) -> "DensityMatrix":
        if self.weight <= 0:
            raise ValueError("cannot normalize a zero-weight block")
        return DensityMatrix(self.matrix / self.weight, weight=1.0)

    def clamped_eigenvalues(self) -> np.ndarray:
        """Spectrum with tolerated numerical negativity clamped to 0 (reporting only)."""
        evals = np.linalg.eigvalsh(self.matrix)
        return np.where((evals < 0) & (evals >= EIGENVALUE_FLOOR), 0.0, evals)


def _as_matrix(op) -> np.ndarray:
    if isinstance(op, HermitianOperator):
        return op.matrix
    return as_square_matrix(op)


def expm_hermitian(H, t: float = 1.0) -> np.ndarray:
    """exp(-i H t) for Hermitian H, via eigendecomposition."""
    if not np.isfinite(t):
        raise ValueError("evolution time must be finite")
    if isinstance(H, HermitianOperator):
        vals, vecs = H.eigensystem
    else:
        m = as_square_matrix(H, "H")
        defect = hermiticity_defect(m)
        if defect > HERMITICITY_TOL:
            raise ValueError(f"H is not Hermitian (defect {defect:.3e})")
        vals, vecs = np.linalg.eigh((m + dagger(m)) / 2.0)
    phases = np.exp(-1j * vals * t)
    return (vecs * phases) @ dagger(vecs)


def kron_embed(ops: Iterable[tuple[np.ndarray, int]], dims: Sequence[int]) -> np.ndarray:
    """Tensor-product operator on the full space, identity on untouched factors."""
    dims = [int(d) for d in dims]
    placed: dict[int, np.ndarray] = {}
    for op, idx in ops:
        if idx in placed:
            raise ValueError(f"duplicate subsystem index {idx}")
        if not 0 <= idx < len(dims):
            raise ValueError(f"subsystem index {idx} out of range for {len(dims)} factors")
        m = _as_matrix(op)
        if m.shape[0] != dims[idx]:
            raise ValueError(
                f"operator on subsystem {idx} has dim {m.shape[0]}, expected {dims[idx]}"
            )
        placed[idx] = m
    out = np.array([[1.0 + 0j]])
    for i, d in enumerate(dims):
        out = np.kron(out, placed.get(i, np.eye(d, dtype=complex)))
    return out


def partial_trace(rho, dims: Sequence[int], keep: Iterable[int]):
    """Reduced state on the kept subsystems; trace preserving."""
    wrapped = isinstance(rho, DensityMatrix)
    m = rho.matrix if wrapped else as_square_matrix(rho, "rho")
    dims = [int(d) for d in dims]
    total = int(np.prod(dims))
    if m.shape[0] != total:
        raise ValueError(f"dims product {total} does not match state dim {m.shape[0]}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"invalid keep set {keep} for {len(dims)} subsystems")
    n = len(dims)
    tensor = m.reshape(dims + dims)
    # contract each traced subsystem pair (ket axis i, bra axis i + current rank)
    traced = [i for i in range(n) if i not in keep]
    for i in sorted(traced, reverse=True):
        rank = tensor.ndim // 2
        tensor = np.trace(tensor, axis1=i, axis2=i + rank)
    d_keep = int(np.prod([dims[k] for k in keep])) if keep else 1
    out = tensor.reshape(d_keep, d_keep)
    if wrapped:
        return DensityMatrix(out, weight=rho.weight)
    return out


def integrate_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_samples: Sequence[float],
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    method: str = "RK45",
) -> np.ndarray:
    """Integrate a real-vector ODE, returning the state at each sample time.

    The right-hand side is supplied matrix-free; local error is controlled by
    (rtol, atol).  Failures carry the time at which the step could not proceed.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    t = np.asarray(t_samples, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) < 0):
        raise ValueError("t_samples must be a non-empty sorted 1-D array")
    y0 = np.asarray(y0, dtype=float)

    def guarded(ti, yi):
        dy = np.asarray(rhs(ti, yi), dtype=float)
        if not np.all(np.isfinite(dy)):
            raise IntegrationError("non-finite derivative", ti)
        return dy

    if t[-1] == t[0]:
        return np.tile(y0, (t.size, 1))
    sol = solve_ivp(
        guarded,
        (t[0], t[-1]),
        y0,
        method=method,
        t_eval=t,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        reached = float(sol.t[-1]) if sol.t.size else float(t[0])
        raise IntegrationError(f"integration failed: {sol.message}", reached)
    return np.ascontiguousarray(sol.y.T)


def pack_complex(z: np.ndarray) -> np.ndarray:
    """Flatten a complex array into an interleaved real vector (zero-copy view)."""
    return np.ascontiguousarray(z).view(np.float64).ravel()


def unpack_complex(y: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return np.ascontiguousarray(y).view(np.complex128).reshape(shape)


def trace_distance(a, b) -> float:
    """(1/2)·tr|a − b| of two density matrices (or blocks of equal weight)."""
    ma = a.matrix if isinstance(a, DensityMatrix) else as_square_matrix(a, "a")
    mb = b.matrix if isinstance(b, DensityMatrix) else as_square_matrix(b, "b")
    if ma.shape != mb.shape:
        raise ValueError(f"dimension mismatch {ma.shape} vs {mb.shape}")
    diff = ma - mb
    diff = (diff + dagger(diff)) / 2.0
    evals = np.linalg.eigvalsh(diff)
    return float(0.5 * np.sum(np.abs(evals)))


def state_metrics(a, b) -> tuple[float, float]:
    """(trace distance, fidelity) between a state and a density matrix.

    ``a`` may be a pure state vector, in which case the fidelity is the
    overlap <psi|b|psi>; for two density matrices the fidelity falls back to
    the trace overlap tr[a b] (exact when either argument is pure).
    """
    mb = b.matrix if isinstance(b, DensityMatrix) else as_square_matrix(b, "b")
    arr = a.matrix if isinstance(a, DensityMatrix) else np.asarray(a, dtype=complex)
    if arr.ndim == 1:
        psi = arr / np.linalg.norm(arr)
        if psi.size != mb.shape[0]:
            raise ValueError("dimension mismatch between vector and density matrix")
        fid = float(np.real(psi.conj() @ mb @ psi))
        ma = np.outer(psi, psi.conj())
    else:
        ma = as_square_matrix(arr, "a")
        if ma.shape != mb.shape:
            raise ValueError(f"dimension mismatch {ma.shape} vs {mb.shape}")
        fid = float(np.real(np.trace(ma @ mb)))
    return trace_distance(ma, mb), fid
