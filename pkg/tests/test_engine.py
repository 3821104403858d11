import numpy as np
import pytest

from aqpu.clock import make_erlang_clock, skewed_gamma_spacing_density, erlang_spacing_density
from aqpu.engine import (
    IdealTicker,
    SolverConfig,
    build_lindbladian,
    clock_channel_second_order,
    conditional_tick_kernel,
    evolve_block,
    evolve_full,
    evolve_ideal,
    evolve_iid,
    evolve_iid_erlang,
    evolve_monte_carlo,
    evolve_reversible,
    program_fidelity,
    switch_reference,
    DimensionGuardError,
)
from aqpu.model import (
    Program,
    compose_program_unitary,
    make_gateset,
    make_punchcard,
    superposed_punchcard,
)
from aqpu.numerics import DensityMatrix, state_metrics, trace_distance

from conftest import random_density, random_hermitian

X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)


@pytest.fixture(scope="module")
def hadamard_1q():
    from aqpu.model import hadamard_generator

    return make_gateset(1.0, [hadamard_generator().matrix], labels=("H",))


def _config(t_end, n_samples=2, rtol=1e-9, atol=1e-12, **kw):
    ts = tuple(np.linspace(0.0, t_end, n_samples))
    return SolverConfig(rtol=rtol, atol=atol, t_end=t_end, sample_times=ts, **kw)


class TestBuildLindbladian:
    def test_trace_annihilating(self, bell, rng):
        spec = make_erlang_clock(3, 1.0, max_ticks=3)
        action = build_lindbladian(spec, bell.gateset, bell.punchcard)
        dim = action.dims.total
        for _ in range(10):
            rho = random_density(rng, dim)
            out = action(rho)
            assert abs(np.trace(out)) < 1e-12
            assert np.abs(out - out.conj().T).max() < 1e-12

    def test_slot_mismatch_rejected(self, bell):
        spec = make_erlang_clock(3, 1.0, max_ticks=2)
        with pytest.raises(ValueError, match="slots"):
            build_lindbladian(spec, bell.gateset, bell.punchcard)

    def test_idle_card_leaves_target_stationary(self, rng):
        gs = make_gateset(1.0, [(np.pi / 2) * (np.eye(2) - X)])
        pc = make_punchcard(Program(()), 2)
        spec = make_erlang_clock(2, 1.0, max_ticks=2)
        action = build_lindbladian(spec, gs, pc)
        rho_T = random_density(rng, 2)
        clock0 = spec.initial.matrix
        hand0 = np.zeros((3, 3), dtype=complex)
        hand0[0, 0] = 1.0
        rho = np.kron(np.kron(np.kron(clock0, hand0), np.eye(1)), rho_T)
        out = action(rho)
        from aqpu.numerics import partial_trace

        # target marginal of the generator action vanishes: no commutator term
        reduced = partial_trace(out, action.dims.as_list(), keep=[3])
        assert np.abs(reduced).max() < 1e-12

    def test_block_diagonality_preserved(self, bell):
        # classical punch card: tick-number off-diagonal blocks never fill in
        spec = make_erlang_clock(2, 1.0, max_ticks=3)
        cfg = _config(2.0, rtol=1e-9)
        traj = evolve_full(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        rho = traj.states[-1].rho
        d = traj.states[-1].dims
        tensor = rho.reshape(d.clock, d.ticks, d.target, d.clock, d.ticks, d.target)
        for n in range(d.ticks):
            for m in range(d.ticks):
                if n != m:
                    assert np.abs(tensor[:, n, :, :, m, :]).max() < 1e-10


class TestEvolveFull:
    def test_idle_card_keeps_target(self, rng):
        gs = make_gateset(1.0, [(np.pi / 2) * (np.eye(2) - X)])
        pc = make_punchcard(Program(()), 2)
        spec = make_erlang_clock(3, 1.0, max_ticks=2)
        rho0 = random_density(rng, 2)
        traj = evolve_full(spec, gs, pc, rho0, _config(4.0, n_samples=5))
        for s in traj.states:
            assert trace_distance(s.target(), rho0) < 1e-8

    def test_tick_probabilities_normalized(self, bell):
        spec = make_erlang_clock(4, 1.0, max_ticks=3)
        traj = evolve_full(spec, bell.gateset, bell.punchcard, bell.initial_state, _config(4.0, 5))
        probs = traj.tick_probabilities()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-8

    def test_matches_block_solver(self, hadamard_1q):
        spec = make_erlang_clock(4, 1.0, max_ticks=2)
        pc = make_punchcard(Program((1,)), 2)
        rho0 = DensityMatrix.from_state_vector([1.0, 0.0])
        cfg = _config(4.0, n_samples=5, rtol=1e-10, atol=1e-13)
        full = evolve_full(spec, hadamard_1q, pc, rho0, cfg)
        block = evolve_block(spec, hadamard_1q, pc, rho0, cfg)
        for t in cfg.sample_times:
            assert trace_distance(full.target_at(t), block.target_at(t)) < 1e-6

    def test_dense_and_structured_paths_agree(self):
        gs = make_gateset(
            1.0, [(np.pi / 2) * (np.eye(2) - X), (np.pi / 2) * (np.eye(2) - Z)], labels=("X", "Z")
        )
        pc = superposed_punchcard([(1, (1, 2)), (1, (2, 1))], 2)
        spec = make_erlang_clock(4, 1.0, max_ticks=2)
        rho0 = np.eye(2, dtype=complex) / 2
        cfg = _config(4.0, n_samples=3, rtol=1e-10, atol=1e-13)
        dense = evolve_full(spec, gs, pc, rho0, cfg)
        structured = evolve_full(spec, gs, pc, rho0, cfg, dense_cutoff=1)
        assert dense.states[-1].rho is not None
        assert structured.states[-1].structured is not None
        for t in cfg.sample_times:
            a = dense.state_at(t).register_target()
            b = structured.state_at(t).register_target()
            assert trace_distance(a, b) < 1e-9

    def test_dimension_guard(self, bell):
        spec = make_erlang_clock(4096, 1.0, max_ticks=3)
        with pytest.raises(DimensionGuardError, match="evolve_block"):
            evolve_full(spec, bell.gateset, bell.punchcard, bell.initial_state, _config(1.0))


class TestEvolveBlock:
    def test_bell_run_against_closed_form(self, bell):
        spec = make_erlang_clock(80, 1.0, max_ticks=3)
        cfg = _config(4.0, n_samples=41, rtol=1e-9)
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        oracle = evolve_iid_erlang(bell.gateset, bell.program, 80, 1.0, bell.initial_state)
        assert trace_distance(traj.target_at(4.0), oracle) < 1e-4
        fid = program_fidelity(traj, bell.gateset, bell.program, bell.initial_state, t_eval=4.0)
        fid_oracle = program_fidelity(oracle, bell.gateset, bell.program, bell.initial_state)
        assert abs(fid - fid_oracle) < 1e-4

    def test_bell_fidelity_shape(self, bell):
        # |+,0> fidelity peaks near the first tick; Bell fidelity settles high
        spec = make_erlang_clock(80, 1.0, max_ticks=3)
        ts = np.linspace(0.0, 4.0, 81)
        cfg = SolverConfig(rtol=1e-8, atol=1e-11, t_end=4.0, sample_times=tuple(ts))
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        plus0 = np.kron([1, 1] / np.sqrt(2), [1, 0]).astype(complex)
        f_plus = [state_metrics(plus0, traj.target_at(t))[1] for t in ts[ts <= 1.2]]
        assert max(f_plus) > 0.98
        f_bell_3 = state_metrics(bell.target_state, traj.target_at(3.0))[1]
        assert f_bell_3 > 0.95

    def test_probability_conservation(self, bell):
        spec = make_erlang_clock(16, 1.0, max_ticks=3)
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, _config(4.0, 9))
        probs = traj.tick_probabilities()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-7

    def test_block_weights_consistent(self, bell):
        # tr sigma_T^(n) == tr rho_C^(n) for every block
        spec = make_erlang_clock(16, 1.0, max_ticks=3)
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, _config(4.0, 9))
        for st in traj.states:
            clock_w = st.tick_probabilities()
            target_w = np.einsum("ntt->n", st.target_blocks).real
            assert np.abs(clock_w - target_w).max() < 1e-7

    def test_superposed_card_rejected(self, bell):
        pc = superposed_punchcard([(1, (1,)), (1, (2,))], 3)
        spec = make_erlang_clock(4, 1.0, max_ticks=3)
        with pytest.raises(ValueError, match="classical"):
            evolve_block(spec, bell.gateset, pc, bell.initial_state, _config(1.0))

    def test_cascade_matches_ode(self, bell):
        spec = make_erlang_clock(64, 1.0, max_ticks=3)
        cfg = _config(4.0, n_samples=3, rtol=1e-11, atol=1e-14)
        ode = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg, method="ode")
        cas = evolve_block(
            spec, bell.gateset, bell.punchcard, bell.initial_state, cfg, method="cascade"
        )
        for t in cfg.sample_times:
            assert trace_distance(ode.target_at(t), cas.target_at(t)) < 1e-6
            p_ode = ode.state_at(t).tick_probabilities()
            p_cas = cas.state_at(t).tick_probabilities()
            assert np.abs(p_ode - p_cas).max() < 1e-6

    def test_general_clockwork_fallback(self, hadamard_1q):
        # small coherent clockwork takes the dense per-block path
        from aqpu.clock import ClockSpec, Clockwork, MatrixJump, TickGenerator
        from aqpu.numerics import HermitianOperator

        h_c = HermitianOperator(0.3 * np.array([[0, 1], [1, 0]], dtype=complex))
        jump = MatrixJump(np.sqrt(2.0) * np.array([[0, 1], [0, 0]], dtype=complex))
        tick = MatrixJump(np.sqrt(3.0) * np.array([[0, 0], [1, 0]], dtype=complex))
        spec = ClockSpec(
            clockwork=Clockwork(dim=2, hamiltonian=h_c, jumps=(jump,)),
            ticks=TickGenerator(jumps=(tick,), max_ticks=2),
            initial=DensityMatrix(np.diag([1.0, 0.0]).astype(complex)),
            tick_time_hint=1.0,
        )
        pc = make_punchcard(Program((1,)), 2)
        rho0 = DensityMatrix.from_state_vector([1.0, 0.0])
        cfg = _config(3.0, n_samples=4, rtol=1e-10, atol=1e-13)
        blk = evolve_block(spec, hadamard_1q, pc, rho0, cfg)
        full = evolve_full(spec, hadamard_1q, pc, rho0, cfg)
        for t in cfg.sample_times:
            assert trace_distance(blk.target_at(t), full.target_at(t)) < 1e-7


class TestEvolveIdeal:
    def test_bell_program(self, bell):
        out = evolve_ideal(bell.gateset, bell.program, bell.initial_state)
        target = np.outer(bell.target_state, bell.target_state.conj())
        assert trace_distance(out, target) < 1e-12

    def test_empty_program(self, bell, rng):
        rho = random_density(rng, 4)
        assert np.abs(evolve_ideal(bell.gateset, Program(()), rho) - rho).max() < 1e-15

    def test_equals_unitary_conjugation(self, bell, rng):
        for _ in range(10):
            rho = random_density(rng, 4)
            v = compose_program_unitary(bell.gateset, bell.program)
            assert trace_distance(evolve_ideal(bell.gateset, bell.program, rho),
                                  v @ rho @ v.conj().T) < 1e-12


class TestEvolveIid:
    def test_delta_density_matches_ideal(self, bell):
        t = np.linspace(0.9999, 1.0001, 2001)
        p = np.exp(-0.5 * ((t - 1.0) / 1e-5) ** 2) / (1e-5 * np.sqrt(2 * np.pi))
        out = evolve_iid(bell.gateset, bell.program, (t, p), bell.initial_state)
        ideal = evolve_ideal(bell.gateset, bell.program, bell.initial_state)
        assert trace_distance(out, ideal) < 1e-8

    def test_quadrature_matches_closed_form(self, bell):
        t = np.linspace(0.0, 8.0, 16001)
        p = erlang_spacing_density(40, 1.0, t)
        out = evolve_iid(bell.gateset, bell.program, (t, p), bell.initial_state)
        oracle = evolve_iid_erlang(bell.gateset, bell.program, 40, 1.0, bell.initial_state)
        assert trace_distance(out, oracle) < 1e-8

    def test_matches_block_at_late_times(self, bell):
        spec = make_erlang_clock(80, 1.0, max_ticks=3)
        cfg = _config(6.0, n_samples=2, rtol=1e-9)
        blk = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        oracle = evolve_iid_erlang(bell.gateset, bell.program, 80, 1.0, bell.initial_state)
        assert trace_distance(blk.target_at(6.0), oracle) < 5e-3

    def test_low_mass_rejected(self, bell):
        t = np.linspace(0.0, 0.5, 101)
        p = erlang_spacing_density(8, 1.0, t)
        with pytest.raises(ValueError, match="mass"):
            evolve_iid(bell.gateset, bell.program, (t, p), bell.initial_state)


class TestSecondOrderChannel:
    def test_zero_hamiltonian(self, rng):
        rho = random_density(rng, 2)
        out = clock_channel_second_order(np.zeros((2, 2)), 1.0, 50.0, rho)
        assert np.abs(out - rho).max() < 1e-14

    def test_infinite_accuracy_limit(self, hadamard_1q, rng):
        rho = random_density(rng, 2)
        h = hadamard_1q.generators[0]
        v = hadamard_1q.gate(1)
        out = clock_channel_second_order(h, 1.0, 1e12, rho)
        assert np.abs(out - v @ rho @ v.conj().T).max() < 1e-10

    def _residual(self, hadamard_1q, N, density):
        rho0 = np.diag([1.0, 0.0]).astype(complex)
        t = np.linspace(0.0, 4.0, 16001)
        out_iid = evolve_iid(hadamard_1q, (1,), (t, density(N, t)), rho0)
        out_2nd = clock_channel_second_order(hadamard_1q.generators[0], 1.0, N, rho0)
        return trace_distance(out_iid, out_2nd)

    def test_generic_family_order(self, hadamard_1q):
        # constant-skewness family saturates the N^{-3/2} remainder: ratio ~ 8
        fam = lambda N, t: skewed_gamma_spacing_density(N, 1.0, t)
        ratio = self._residual(hadamard_1q, 100, fam) / self._residual(hadamard_1q, 400, fam)
        assert 5.0 <= ratio <= 12.0

    def test_erlang_concentrates_faster(self, hadamard_1q):
        # Erlang skewness vanishes with N: remainder is N^{-2}, ratio ~ 16
        fam = lambda N, t: erlang_spacing_density(int(N), 1.0, t)
        ratio = self._residual(hadamard_1q, 100, fam) / self._residual(hadamard_1q, 400, fam)
        assert ratio > 12.0


class TestMonteCarlo:
    def test_ideal_ticker_zero_variance(self, bell):
        cfg = SolverConfig(t_end=6.0, trajectory_count=64, rng_seed=5)
        mc = evolve_monte_carlo(
            IdealTicker(tau=1.0, max_ticks=3), bell.gateset, bell.punchcard,
            bell.initial_state, cfg,
        )
        ideal = evolve_ideal(bell.gateset, bell.program, bell.initial_state)
        assert mc.stderr_real.max() == 0.0 and mc.stderr_imag.max() == 0.0
        assert trace_distance(mc.rho, ideal) < 1e-12

    def test_seed_determinism(self, bell):
        spec = make_erlang_clock(8, 1.0, max_ticks=3)
        cfg = SolverConfig(t_end=4.0, trajectory_count=500, rng_seed=11)
        a = evolve_monte_carlo(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        b = evolve_monte_carlo(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        assert np.array_equal(a.rho, b.rho)
        assert np.array_equal(a.stderr_real, b.stderr_real)

    def test_agrees_with_block_solver(self, bell):
        spec = make_erlang_clock(80, 1.0, max_ticks=3)
        cfg = SolverConfig(t_end=4.0, trajectory_count=10_000, rng_seed=2)
        mc = evolve_monte_carlo(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        blk = evolve_block(
            spec, bell.gateset, bell.punchcard, bell.initial_state,
            _config(4.0, rtol=1e-9),
        )
        assert mc.agrees_with(blk.target_at(4.0), n_sigma=3.0)


class TestReversible:
    def test_strong_suppression_matches_irreversible(self, bell):
        cfg = _config(6.0, n_samples=13, rtol=1e-9)
        spec50 = make_erlang_clock(80, 1.0, max_ticks=3, tick_entropy=50.0)
        rev = evolve_reversible(spec50, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        irr = evolve_block(
            make_erlang_clock(80, 1.0, max_ticks=3),
            bell.gateset, bell.punchcard, bell.initial_state, cfg,
        )
        assert trace_distance(rev.target_at(6.0), irr.target_at(6.0)) < 1e-6

    def test_backward_current_zero_before_first_tick(self, bell):
        spec = make_erlang_clock(16, 1.0, max_ticks=3, tick_entropy=2.0)
        ts = (0.0, 0.05, 0.1, 1.0, 2.0)
        cfg = SolverConfig(rtol=1e-10, atol=1e-13, t_end=2.0, sample_times=ts)
        rev = evolve_reversible(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        # block 1 is essentially unpopulated at t <= 0.1 for D=16
        assert rev.backward_currents[1, 0] < 1e-12
        assert rev.backward_currents[2, 0] < 1e-10
        assert rev.backward_currents[-1, 0] > 1e-6

    def test_finite_entropy_lowers_fidelity(self, bell):
        cfg = _config(6.0, n_samples=13, rtol=1e-9)
        rev = evolve_reversible(
            make_erlang_clock(80, 1.0, max_ticks=3, tick_entropy=2.0),
            bell.gateset, bell.punchcard, bell.initial_state, cfg,
        )
        irr = evolve_block(
            make_erlang_clock(80, 1.0, max_ticks=3),
            bell.gateset, bell.punchcard, bell.initial_state, cfg,
        )
        f_rev = program_fidelity(rev, bell.gateset, bell.program, bell.initial_state, t_eval=4.0)
        f_irr = program_fidelity(irr, bell.gateset, bell.program, bell.initial_state, t_eval=4.0)
        assert f_rev < f_irr

    def test_irreversible_spec_rejected(self, bell):
        spec = make_erlang_clock(8, 1.0, max_ticks=3)
        with pytest.raises(ValueError, match="evolve_block"):
            evolve_reversible(spec, bell.gateset, bell.punchcard, bell.initial_state, _config(1.0))


class TestProgramFidelity:
    def test_ideal_gives_unity(self, bell):
        out = evolve_ideal(bell.gateset, bell.program, bell.initial_state)
        fid = program_fidelity(out, bell.gateset, bell.program, bell.initial_state)
        assert abs(fid - 1.0) < 1e-12

    def test_mixed_initial_falls_back_with_warning(self, bell):
        rho0 = np.eye(4, dtype=complex) / 4
        out = evolve_ideal(bell.gateset, bell.program, rho0)
        with pytest.warns(UserWarning, match="mixed"):
            fid = program_fidelity(out, bell.gateset, bell.program, rho0)
        assert abs(fid - 0.25) < 1e-12

    def test_t_eval_beyond_horizon(self, bell):
        spec = make_erlang_clock(4, 1.0, max_ticks=3)
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, _config(2.0))
        with pytest.raises(ValueError, match="horizon"):
            program_fidelity(traj, bell.gateset, bell.program, bell.initial_state, t_eval=4.0)


class TestSwitchReference:
    def test_equal_unitaries_keep_control_pure(self, rng):
        u = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))[0]
        rho_t = random_density(rng, 2)
        amps = np.array([1.0, 1.0]) / np.sqrt(2)
        joint = switch_reference(u, u, amps, rho_t)
        from aqpu.numerics import partial_trace

        control = partial_trace(joint, [2, 2], keep=[0])
        purity = np.trace(control @ control).real
        assert abs(purity - 1.0) < 1e-12

    def test_anticommuting_pair_flips_control(self):
        amps = np.array([1.0, 1.0]) / np.sqrt(2)
        joint = switch_reference(X, Z, amps, np.eye(2, dtype=complex) / 2)
        from aqpu.numerics import partial_trace

        control = partial_trace(joint, [2, 2], keep=[0])
        minus = np.array([1.0, -1.0]) / np.sqrt(2)
        assert abs(state_metrics(minus, control)[1] - 1.0) < 1e-12

    def test_non_unitary_rejected(self):
        with pytest.raises(ValueError, match="unitary"):
            switch_reference(0.5 * X, Z, [1, 1], np.eye(2) / 2)


class TestConditionalKernel:
    def test_normalization(self):
        spec = make_erlang_clock(8, 1.0, max_ticks=3)
        kernel = conditional_tick_kernel(spec, n=2, t=2.5)
        assert abs(kernel.integral() - 1.0) < 1e-5


class TestCrossSolverInvariant:
    def test_pairwise_agreement(self, hadamard_1q):
        # (D=4, one qubit, program (H,H)); idle padding suppresses the
        # finite-horizon tail so all solver limits coincide at t = 2*M*tau
        slots = 5
        spec = make_erlang_clock(4, 1.0, max_ticks=slots)
        prog = Program((1, 1))
        pc = make_punchcard(prog, slots)
        rho0 = DensityMatrix.from_state_vector([1.0, 0.0])
        t_end = 2.0 * slots
        rtol = 1e-10
        cfg = _config(t_end, rtol=rtol, atol=1e-13)
        tol = max(1e-6, 10 * rtol)
        full = evolve_full(spec, hadamard_1q, pc, rho0, cfg).target_at(t_end)
        block = evolve_block(spec, hadamard_1q, pc, rho0, cfg).target_at(t_end)
        iid = evolve_iid_erlang(hadamard_1q, prog, 4, 1.0, rho0)
        assert trace_distance(full, block) < tol
        assert trace_distance(block, iid) < tol
        assert trace_distance(full, iid) < tol
        mc = evolve_monte_carlo(
            spec, hadamard_1q, pc, rho0,
            SolverConfig(t_end=t_end, trajectory_count=10_000, rng_seed=3),
        )
        assert mc.agrees_with(block, n_sigma=3.0)
