import math

import numpy as np
import pytest

from aqpu.clock import BasisJump, make_biased_erlang_clock, make_erlang_clock, tick_statistics
from aqpu.engine import SolverConfig, evolve_block, evolve_reversible
from aqpu.model import Program, make_gateset, make_punchcard
from aqpu.thermo import (
    accuracy_entropy_bound,
    clockwork_entropy_rate_at,
    entropy_lower_bound_for_accuracy,
    entropy_rate_clockwork,
    fidelity_entropy_bound,
    forward_currents_from_block_run,
    integrate_entropy,
    tick_entropy_rate,
)


def clock_only_setup(M):
    gs = make_gateset(1.0, [np.zeros((1, 1))], labels=("I",))
    pc = make_punchcard(Program(()), M)
    rho = np.array([[1.0 + 0j]])
    return gs, pc, rho


class TestClockworkRate:
    def test_detailed_balance_steady_state_is_silent(self):
        # two-level pair: flux balance p0*r_f = p1*r_b makes the rate vanish
        dsigma = 1.3
        jump = BasisJump(0, 1, rate=2.0, entropy=dsigma, include_reverse=True)
        r_b = jump.reverse_rate()
        p1 = 2.0 / (2.0 + r_b)
        pops = np.array([1 - p1, p1]) * 0  # placeholder
        pops = np.array([r_b, 2.0]) / (r_b + 2.0)
        rate = clockwork_entropy_rate_at([jump], pops)
        assert abs(rate[0]) < 1e-10

    def test_unidirectional_flux(self):
        jump = BasisJump(0, 1, rate=3.0, entropy=0.7)
        rate = clockwork_entropy_rate_at([jump], np.array([1.0, 0.0]))
        assert abs(rate[0] - 0.7 * 3.0) < 1e-12

    def test_no_overlap_no_rate(self):
        jump = BasisJump(0, 1, rate=3.0, entropy=0.7)
        rate = clockwork_entropy_rate_at([jump], np.array([0.0, 1.0]))
        assert rate[0] == 0.0

    def test_undeclared_entropy_rejected(self):
        jump = BasisJump(0, 1, rate=1.0)
        with pytest.raises(ValueError, match="entropy"):
            clockwork_entropy_rate_at([jump], np.array([1.0, 0.0]))


class TestIntegration:
    def test_zero_rate(self):
        t = np.linspace(0, 5, 11)
        integral, _ = integrate_entropy(t, np.zeros_like(t))
        assert integral[-1] == 0.0

    def test_non_decreasing_for_forward_clocks(self):
        D, M, ds = 6, 20, 3.0
        spec = make_biased_erlang_clock(D, 1.0, ds, max_ticks=M)
        gs, pc, rho = clock_only_setup(M)
        ts = tuple(np.linspace(0, 25.0, 201))
        cfg = SolverConfig(rtol=1e-9, atol=1e-12, t_end=25.0, sample_times=ts)
        traj = evolve_reversible(spec, gs, pc, rho, cfg)
        rate = entropy_rate_clockwork(spec, traj, include_tick_jumps=True)
        integral, _ = integrate_entropy(np.array(ts), rate)
        assert np.all(np.diff(integral) >= -1e-12)

    @pytest.mark.parametrize("t_factor", [1.0, 2.0, 4.0])
    def test_per_tick_identity(self, t_factor):
        # biased Erlang: every jump of the D-step cycle carries dsigma
        D, M, ds = 8, 60, 4.0
        spec = make_biased_erlang_clock(D, 1.0, ds, max_ticks=M)
        tau = tick_statistics(spec).mean
        gs, pc, rho = clock_only_setup(M)
        T = t_factor * M * tau
        ts = tuple(np.linspace(0, T, 601))
        cfg = SolverConfig(rtol=1e-9, atol=1e-12, t_end=T, sample_times=ts)
        traj = evolve_reversible(spec, gs, pc, rho, cfg)
        rate = entropy_rate_clockwork(spec, traj, include_tick_jumps=True)
        nbar = traj.tick_probabilities()[-1] @ np.arange(M + 1)
        integral, check = integrate_entropy(
            np.array(ts), rate, per_tick=spec.entropy_per_tick, expected_ticks=[nbar]
        )
        assert spec.entropy_per_tick == D * ds
        assert abs(check.relative_deviation) < 0.01


class TestTickEntropy:
    def test_zero_currents(self):
        from aqpu.engine import BlockTrajectory, BlockState

        t = np.linspace(0, 1, 5)
        states = tuple(
            BlockState(t=float(x), clock_blocks=np.zeros((2, 2)),
                       target_blocks=np.zeros((2, 1, 1), dtype=complex))
            for x in t
        )
        traj = BlockTrajectory(times=t, states=states,
                               forward_currents=np.zeros((5, 1)),
                               backward_currents=np.zeros((5, 1)))
        assert np.all(tick_entropy_rate(traj, 2.0) == 0.0)

    def test_zero_entropy_prefactor(self, bell):
        spec = make_erlang_clock(16, 1.0, max_ticks=3)
        ts = tuple(np.linspace(0, 6, 61))
        cfg = SolverConfig(rtol=1e-8, atol=1e-11, t_end=6.0, sample_times=ts)
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        traj = forward_currents_from_block_run(spec, traj)
        assert np.all(tick_entropy_rate(traj, 0.0) == 0.0)

    def test_bell_run_integrates_to_m_dsigma(self, bell):
        dsigma = 1.3
        spec = make_erlang_clock(80, 1.0, max_ticks=3)
        ts = np.linspace(0, 6, 241)
        cfg = SolverConfig(rtol=1e-9, atol=1e-12, t_end=6.0, sample_times=tuple(ts))
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        traj = forward_currents_from_block_run(spec, traj)
        rate = tick_entropy_rate(traj, dsigma)
        integral, _ = integrate_entropy(ts, rate)
        expected = 3 * dsigma
        assert abs(integral[-1] - expected) / expected < 0.02

    def test_missing_currents_rejected(self, bell):
        spec = make_erlang_clock(8, 1.0, max_ticks=3)
        cfg = SolverConfig(t_end=2.0, sample_times=(0.0, 2.0))
        traj = evolve_block(spec, bell.gateset, bell.punchcard, bell.initial_state, cfg)
        with pytest.raises(ValueError, match="currents"):
            tick_entropy_rate(traj, 1.0)


class TestBounds:
    def test_reference_point_is_tight(self):
        passed, slack = accuracy_entropy_bound(80.0, 160.0)
        assert passed and abs(slack) < 1e-12

    def test_zero_accuracy_always_passes(self):
        passed, slack = accuracy_entropy_bound(0.0, 5.0)
        assert passed and slack >= 0

    def test_quadratic_cost_function(self):
        passed, slack = accuracy_entropy_bound(80.0, 10.0, f=lambda x: x**2)
        assert passed and abs(slack - 20.0) < 1e-12

    def test_entropy_lower_bound(self):
        assert entropy_lower_bound_for_accuracy(80.0) == 160.0

    def test_fidelity_bound_limits(self):
        b = fidelity_entropy_bound(2, np.pi / 2, 1e12, sigma_init=math.inf, prep_steps=1, dim=4)
        assert abs(b.bound - 1.0) < 1e-10

    def test_qubit_equivalents_vanish_for_qubit(self):
        b = fidelity_entropy_bound(1, 0.1, 100.0, sigma_init=3.0, prep_steps=2, dim=2)
        # W = log(1) = 0: the init term is exp(-L*Sigma)/Sigma exactly
        assert abs(b.init_term - math.exp(-6.0) / 3.0) < 1e-15

    def test_closed_form_point(self):
        b = fidelity_entropy_bound(
            2, np.pi / 2, 160.0, sigma_init=5.0, prep_steps=10, dim=16
        )
        expected_clock = 2 * (np.pi / 2) ** 2 / 80.0
        expected_init = math.exp(-50.0 + 2 * math.log(15)) / 5.0
        assert abs(b.clock_term - expected_clock) < 1e-12
        assert abs(b.init_term - expected_init) < 1e-18
        assert abs(b.bound - (1 - expected_clock - expected_init)) < 1e-12

    def test_monotone_in_entropy_budgets(self):
        base = fidelity_entropy_bound(2, 1.0, 100.0, sigma_init=2.0, prep_steps=3, dim=4)
        more_tick = fidelity_entropy_bound(2, 1.0, 200.0, sigma_init=2.0, prep_steps=3, dim=4)
        more_init = fidelity_entropy_bound(2, 1.0, 100.0, sigma_init=4.0, prep_steps=3, dim=4)
        assert more_tick.bound >= base.bound
        assert more_init.bound >= base.bound

    def test_rejects_nonpositive_init_entropy(self):
        with pytest.raises(ValueError):
            fidelity_entropy_bound(1, 1.0, 10.0, sigma_init=0.0)
