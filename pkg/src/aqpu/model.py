"""Gate sets, programs, punch cards, and channel dilation.

The machine's "software" side: a finite set of Hermitian generators defines
the gate alphabet, a program is an index sequence over that alphabet, and a
punch card is the (possibly superposed) register state encoding the program,
padded with idle slots.  Index 0 is reserved for the idle (zero) generator.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property

import numpy as np

from .numerics import (
    HermitianOperator,
    DensityMatrix,
    as_square_matrix,
    dagger,
    expm_hermitian,
    kron_embed,
    max_abs,
    partial_trace,
)

IDLE = 0

UNITARITY_TOL = 1e-10
KRAUS_COMPLETENESS_TOL = 1e-9
AMPLITUDE_NORM_TOL = 1e-12


def unitarity_defect(u: np.ndarray) -> float:
    return max_abs(u @ dagger(u) - np.eye(u.shape[0]))


@dataclasses.dataclass(frozen=True)
class GateSet:
    """K labeled Hermitian generators plus the common gate time tau.

    Gate k (1-based) is exp(-i H_k tau); index 0 is the idle gate (zero
    generator).  ``phi_max`` is the largest rotation angle any single gate can
    cover, tau·max_k ||H_k||_inf; ``phi_max_half_spread`` is the alternative
    spectral-half-spread convention.
    """

    tau: float
    generators: tuple[HermitianOperator, ...]
    labels: tuple[str, ...]
    target_dims: tuple[int, ...]

    @property
    def n_gates(self) -> int:
        return len(self.generators)

    @property
    def dim(self) -> int:
        return int(np.prod(self.target_dims))

    def generator_matrix(self, k: int) -> np.ndarray:
        """Generator for index k, with the idle index mapped to the zero matrix."""
        if k == IDLE:
            return np.zeros((self.dim, self.dim), dtype=complex)
        if not 1 <= k <= self.n_gates:
            raise IndexError(f"gate index {k} out of range 1..{self.n_gates}")
        return self.generators[k - 1].matrix

    @cached_property
    def gates(self) -> tuple[np.ndarray, ...]:
        """Unitaries exp(-i H_k tau), k = 1..K."""
        out = []
        for h in self.generators:
            u = expm_hermitian(h, self.tau)
            defect = unitarity_defect(u)
            if defect > 1e-11:
                raise ValueError(f"derived gate is not unitary (defect {defect:.3e})")
            out.append(u)
        return tuple(out)

    def gate(self, k: int) -> np.ndarray:
        if k == IDLE:
            return np.eye(self.dim, dtype=complex)
        if not 1 <= k <= self.n_gates:
            raise IndexError(f"gate index {k} out of range 1..{self.n_gates}")
        return self.gates[k - 1]

    @property
    def phi_max(self) -> float:
        return self.tau * max((h.operator_norm for h in self.generators), default=0.0)

    @property
    def phi_max_half_spread(self) -> float:
        return self.tau * max((h.spectral_half_spread for h in self.generators), default=0.0)

    def rescaled(self, factor: float) -> "GateSet":
        """Generators scaled by ``factor`` (gate time bookkeeping left to the caller)."""
        gens = tuple(HermitianOperator(h.matrix * factor) for h in self.generators)
        return GateSet(self.tau, gens, self.labels, self.target_dims)


def make_gateset(tau, generators, labels=None, target_dims=None) -> GateSet:
    if tau <= 0:
        raise ValueError("gate time tau must be positive")
    gens = tuple(
        g if isinstance(g, HermitianOperator) else HermitianOperator(g) for g in generators
    )
    if not gens:
        raise ValueError("gate set needs at least one generator")
    dim = gens[0].dim
    for g in gens:
        if g.dim != dim:
            raise ValueError("all generators must act on the same target space")
    if target_dims is None:
        target_dims = (dim,)
    target_dims = tuple(int(d) for d in target_dims)
    if int(np.prod(target_dims)) != dim:
        raise ValueError(f"target_dims {target_dims} inconsistent with generator dim {dim}")
    if labels is None:
        labels = tuple(f"G{k}" for k in range(1, len(gens) + 1))
    labels = tuple(str(l) for l in labels)
    if len(labels) != len(gens):
        raise ValueError("one label per generator required")
    return GateSet(float(tau), gens, labels, target_dims)


@dataclasses.dataclass(frozen=True)
class Program:
    """Ordered gate-index sequence; the composed unitary applies steps[0] first."""

    steps: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(a) for a in self.steps))
        # idle (0) is accepted inside programs as well, handy for timing runs
        if any(a < 0 for a in self.steps):
            raise ValueError("gate indices must be non-negative")

    @property
    def length(self) -> int:
        return len(self.steps)

    def validate_for(self, gateset: GateSet) -> None:
        for a in self.steps:
            if a > gateset.n_gates:
                raise IndexError(f"program step {a} outside gate set of size {gateset.n_gates}")


@dataclasses.dataclass(frozen=True)
class Branch:
    amplitude: complex
    steps: tuple[int, ...]


@dataclasses.dataclass(frozen=True)
class PunchCard:
    """Instruction-register state: amplitude-weighted slot sequences of length ``slots``."""

    slots: int
    branches: tuple[Branch, ...]

    def __post_init__(self):
        if not self.branches:
            raise ValueError("punch card needs at least one branch")
        for b in self.branches:
            if len(b.steps) != self.slots:
                raise ValueError("every branch must fill all slots (idle-padded)")
        norm = sum(abs(b.amplitude) ** 2 for b in self.branches)
        if abs(norm - 1.0) > AMPLITUDE_NORM_TOL:
            raise ValueError(f"branch amplitudes not normalized (sum |a|^2 = {norm:.12g})")

    @property
    def is_classical(self) -> bool:
        return len(self.branches) == 1

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def amplitudes(self) -> np.ndarray:
        return np.array([b.amplitude for b in self.branches], dtype=complex)

    def branch_programs(self) -> tuple[tuple[int, ...], ...]:
        return tuple(b.steps for b in self.branches)


def _pad(steps: tuple[int, ...], slots: int) -> tuple[int, ...]:
    if len(steps) > slots:
        raise ValueError(f"program of length {len(steps)} does not fit {slots} slots")
    return tuple(steps) + (IDLE,) * (slots - len(steps))


def make_punchcard(program: Program | tuple[int, ...], slots: int) -> PunchCard:
    steps = program.steps if isinstance(program, Program) else tuple(program)
    return PunchCard(slots=int(slots), branches=(Branch(1.0 + 0j, _pad(steps, slots)),))


def superposed_punchcard(branches, slots: int) -> PunchCard:
    """Normalized multi-branch punch card; duplicate programs are merged."""
    slots = int(slots)
    merged: dict[tuple[int, ...], complex] = {}
    for amplitude, program in branches:
        steps = program.steps if isinstance(program, Program) else tuple(int(a) for a in program)
        padded = _pad(steps, slots)
        merged[padded] = merged.get(padded, 0.0 + 0j) + complex(amplitude)
    norm = np.sqrt(sum(abs(a) ** 2 for a in merged.values()))
    if norm == 0:
        raise ValueError("all branch amplitudes vanish")
    out = tuple(Branch(a / norm, steps) for steps, a in merged.items())
    return PunchCard(slots=slots, branches=out)


def compose_program_unitary(gateset: GateSet, program: Program | tuple[int, ...]) -> np.ndarray:
    """Right-to-left product of gate unitaries: last step composed on the left."""
    steps = program.steps if isinstance(program, Program) else tuple(program)
    Program(steps).validate_for(gateset)
    u = np.eye(gateset.dim, dtype=complex)
    for a in steps:
        u = gateset.gate(a) @ u
    return u


@dataclasses.dataclass(frozen=True)
class DilatedChannel:
    """Kraus channel together with a unitary dilation on system ⊗ ancilla."""

    kraus_ops: tuple[np.ndarray, ...]
    dilation_unitary: np.ndarray
    ancilla_dim: int

    def apply(self, rho: np.ndarray) -> np.ndarray:
        rho = as_square_matrix(rho, "rho")
        return sum(k @ rho @ dagger(k) for k in self.kraus_ops)

    def apply_dilated(self, rho: np.ndarray) -> np.ndarray:
        """U(rho ⊗ |0><0|)U† traced over the ancilla; must reproduce ``apply``."""
        rho = as_square_matrix(rho, "rho")
        d = rho.shape[0]
        anc = np.zeros((self.ancilla_dim, self.ancilla_dim), dtype=complex)
        anc[0, 0] = 1.0
        joint = self.dilation_unitary @ np.kron(rho, anc) @ dagger(self.dilation_unitary)
        return partial_trace(joint, [d, self.ancilla_dim], keep=[0])


def dilate_channel(kraus_ops) -> DilatedChannel:
    """Stinespring-style dilation: |psi>|0> -> sum_i (K_i|psi>)|i>, completed to a unitary."""
    ops = tuple(as_square_matrix(k, "Kraus operator") for k in kraus_ops)
    if not ops:
        raise ValueError("need at least one Kraus operator")
    d = ops[0].shape[0]
    for k in ops:
        if k.shape[0] != d:
            raise ValueError("Kraus operators must share one dimension")
    completeness = sum(dagger(k) @ k for k in ops)
    defect = max_abs(completeness - np.eye(d))
    if defect > KRAUS_COMPLETENESS_TOL:
        raise ValueError(f"Kraus set incomplete (sum K†K defect {defect:.3e})")
    a = len(ops)
    full = d * a
    # isometry columns: input |j>|0>  ->  sum_i K_i|j> ⊗ |i>   (system ⊗ ancilla order)
    iso = np.zeros((full, d), dtype=complex)
    for i, k in enumerate(ops):
        iso[i::a, :] += k
    u = np.zeros((full, full), dtype=complex)
    in_cols = [j * a for j in range(d)]  # indices of |j>|0>
    u[:, in_cols] = iso
    # orthonormal completion for the remaining input columns
    q, _ = np.linalg.qr(np.hstack([iso, np.eye(full, dtype=complex)]))
    rest = [c for c in range(full) if c not in in_cols]
    u[:, rest] = q[:, d : d + len(rest)]
    if unitarity_defect(u) > 1e-10:
        raise ValueError("dilation completion failed to produce a unitary")
    return DilatedChannel(kraus_ops=ops, dilation_unitary=u, ancilla_dim=a)


def hadamard_gate() -> np.ndarray:
    return np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def hadamard_generator() -> HermitianOperator:
    """Generator whose unit-time propagator is exactly the Hadamard gate."""
    uh = hadamard_gate()
    return HermitianOperator(-(np.pi / 2) * (np.eye(2) - uh))


def cnot_generator() -> HermitianOperator:
    """Generator whose unit-time propagator is exactly CNOT (control = first qubit)."""
    block = np.array([[1, -1], [-1, 1]], dtype=complex)
    h = np.zeros((4, 4), dtype=complex)
    h[2:, 2:] = (np.pi / 2) * block
    return HermitianOperator(h)


@dataclasses.dataclass(frozen=True)
class BellExample:
    gateset: GateSet
    program: Program
    punchcard: PunchCard
    target_state: np.ndarray
    initial_state: DensityMatrix


def standard_bell_example(slots: int = 3) -> BellExample:
    """Two-qubit Hadamard+CNOT example: |00> -> (|00>+|11>)/sqrt(2)."""
    h_had = kron_embed([(hadamard_generator().matrix, 0)], [2, 2])
    gateset = make_gateset(
        1.0,
        [HermitianOperator(h_had), cnot_generator()],
        labels=("H", "CNOT"),
        target_dims=(2, 2),
    )
    program = Program((1, 2))
    punchcard = make_punchcard(program, slots)
    target = np.zeros(4, dtype=complex)
    target[0] = target[3] = 1 / np.sqrt(2)
    init = DensityMatrix.from_state_vector([1, 0, 0, 0])
    return BellExample(gateset, program, punchcard, target, init)
