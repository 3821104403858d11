"""Desk-scale simulator of a clock-driven autonomous quantum processor."""

from .numerics import (
    DensityMatrix,
    HermitianOperator,
    IntegrationError,
    expm_hermitian,
    integrate_ode,
    kron_embed,
    partial_trace,
    state_metrics,
    trace_distance,
)
from .model import (
    GateSet,
    Program,
    PunchCard,
    DilatedChannel,
    compose_program_unitary,
    dilate_channel,
    make_gateset,
    make_punchcard,
    standard_bell_example,
    superposed_punchcard,
)
from .clock import (
    BasisJump,
    ClockSpec,
    Clockwork,
    TickGenerator,
    TickStatistics,
    UnsupportedClockError,
    coarse_grain,
    concentration_check,
    make_biased_erlang_clock,
    make_erlang_clock,
    sample_ticks,
    tick_density,
    tick_number_distribution,
    tick_statistics,
    tick_time_density,
)
from .engine import (
    BlockState,
    BlockTrajectory,
    DimensionGuardError,
    FullState,
    FullTrajectory,
    IdealTicker,
    LindbladAction,
    MonteCarloResult,
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
)
from .thermo import (
    EntropyLedger,
    accuracy_entropy_bound,
    entropy_lower_bound_for_accuracy,
    entropy_rate_clockwork,
    fidelity_entropy_bound,
    integrate_entropy,
    tick_entropy_rate,
)
from .compiling import (
    CompilationResult,
    TradeoffCurve,
    compile_bruteforce,
    operator_distance,
    standard_ht_gateset,
    tradeoff_curve,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
