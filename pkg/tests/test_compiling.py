import numpy as np
import pytest

from aqpu.compiling import (
    compile_bruteforce,
    operator_distance,
    rotation_z,
    standard_ht_gateset,
    t_gate_generator,
    tradeoff_curve,
)
from aqpu.engine import evolve_iid_erlang
from aqpu.numerics import expm_hermitian, trace_distance

from conftest import random_unitary


@pytest.fixture(scope="module")
def ht():
    return standard_ht_gateset()


class TestOperatorDistance:
    def test_identical(self, rng):
        u = random_unitary(rng, 2)
        assert operator_distance(u, u) < 1e-12

    def test_identity_vs_pauli_x(self):
        x = np.array([[0, 1], [1, 0]], dtype=complex)
        assert abs(operator_distance(np.eye(2), x) - np.sqrt(2)) < 1e-12

    def test_phase_invariance(self, rng):
        u = random_unitary(rng, 2)
        assert operator_distance(u, np.exp(0.37j) * u) < 1e-12

    def test_state_overlap_inequality(self, rng):
        # eps^2 >= 1 - |<0|U†V|0>|^2 on random pairs
        e0 = np.array([1.0, 0.0])
        for _ in range(100):
            u, v = random_unitary(rng, 2), random_unitary(rng, 2)
            eps = operator_distance(u, v)
            overlap = abs(e0 @ (u.conj().T @ v) @ e0) ** 2
            assert eps**2 >= 1 - overlap - 1e-10

    def test_non_unitary_rejected(self):
        with pytest.raises(ValueError, match="unitary"):
            operator_distance(np.eye(2), 0.5 * np.eye(2))


class TestGateSetHT:
    def test_t_gate_generator(self):
        t_gate = np.diag([1.0, np.exp(1j * np.pi / 4)])
        assert operator_distance(expm_hermitian(t_gate_generator(), 1.0), t_gate) < 1e-12

    def test_phi_max(self, ht):
        assert abs(ht.phi_max - np.pi) < 1e-12


class TestCompileBruteforce:
    def test_in_set_target(self, ht):
        res = compile_bruteforce(ht.gate(1), ht, L_max=3)
        assert res.epsilon[1] < 1e-10
        assert res.best_programs[1] == (1,)

    def test_explicit_product_tht(self, ht):
        target = ht.gate(2) @ ht.gate(1) @ ht.gate(2)
        res = compile_bruteforce(target, ht, L_max=4)
        assert res.epsilon[3] < 1e-10

    def test_epsilon_non_increasing(self, ht, rng):
        res = compile_bruteforce(random_unitary(rng, 2), ht, L_max=10)
        assert np.all(np.diff(res.epsilon) <= 1e-15)

    def test_random_targets_strictly_improve(self, ht, rng):
        # generic targets see several strict refinements within L <= 12
        for seed in (3, 4):
            u = random_unitary(np.random.default_rng(seed), 2)
            res = compile_bruteforce(u, ht, L_max=12)
            assert np.sum(np.diff(res.epsilon) < -1e-12) >= 3

    def test_small_z_rotation_sits_in_the_net_gap(self, ht):
        # R_z(0.1) is closer to the identity than to any short {H,T} word:
        # epsilon stays flat — the coarseness that motivates recursion-based
        # compilation schemes at scale
        res = compile_bruteforce(rotation_z(0.1), ht, L_max=12)
        assert np.allclose(res.epsilon, res.epsilon[0], atol=1e-12)

    def test_guard(self, ht):
        with pytest.raises(ValueError, match="guard"):
            compile_bruteforce(np.eye(2), ht, L_max=15)

    def test_two_qubit_gateset_rejected(self, bell):
        with pytest.raises(ValueError, match="single-qubit"):
            compile_bruteforce(np.eye(4), bell.gateset, L_max=2)

    def test_dedup_never_discards_isolated_sequences(self, ht, rng):
        # every raw product has a kept representative within twice the grid
        # resolution: nothing farther than 2e-3 from all representatives is
        # ever dropped
        import itertools

        res = compile_bruteforce(random_unitary(rng, 2), ht, L_max=6)
        reps = np.stack(res.representatives)
        mats = {1: ht.gate(1), 2: ht.gate(2)}
        for L in range(0, 7):
            for seq in itertools.product((1, 2), repeat=L):
                m = np.eye(2, dtype=complex)
                for a in seq:
                    m = mats[a] @ m
                closest = min(operator_distance(m, r) for r in reps)
                assert closest <= 2e-3


class TestTradeoff:
    def test_infinite_accuracy_total_is_epsilon(self, ht, rng):
        u = random_unitary(rng, 2)
        curve = tradeoff_curve(u, ht, N=np.inf, L_max=8)
        assert np.allclose(curve.total, curve.epsilon)
        assert np.all(np.diff(curve.total) <= 1e-15)

    def test_zero_length_total(self, ht, rng):
        u = random_unitary(rng, 2)
        curve = tradeoff_curve(u, ht, N=1000.0, L_max=6)
        assert abs(curve.total[0] - operator_distance(u, np.eye(2))) < 1e-12

    def test_interior_minimum_generic_target(self, ht):
        u = random_unitary(np.random.default_rng(3), 2)
        curve = tradeoff_curve(u, ht, N=1000.0, L_max=12)
        assert curve.has_interior_minimum

    def test_clock_term_linear(self, ht, rng):
        u = random_unitary(rng, 2)
        curve = tradeoff_curve(u, ht, N=500.0, L_max=8)
        diffs = np.diff(curve.clock_term)
        assert np.allclose(diffs, diffs[0])

    def test_end_to_end_error_within_reported_bound(self, ht):
        u = random_unitary(np.random.default_rng(3), 2)
        curve = tradeoff_curve(u, ht, N=1000.0, L_max=12)
        k = curve.argmin_length
        prog = curve.best_programs[k]
        rho0 = np.diag([1.0, 0.0]).astype(complex)
        out = evolve_iid_erlang(ht, prog, 1000, 1.0, rho0)
        ideal = u @ rho0 @ u.conj().T
        assert trace_distance(out, ideal) <= curve.total[k] + 5e-2
