"""Event-driven simulation of finite spatial birth-and-death processes."""

__version__ = "0.1.0"

from .config import (  # noqa: E402
    AggregationModel,
    AggregationParams,
    Ball,
    Box,
    CallbackRegion,
    ComparisonModel,
    Configuration,
    ConstantRateModel,
    ContactModel,
    ModelError,
    PureBirthModel,
    RateModel,
    Region,
    StepKernel,
    TimeModulatedModel,
    aggregation_death_rate,
    comparison_model,
    restrict_count,
    total_death_rate,
)
from .engine import (  # noqa: E402
    Absorbed,
    CircuitBreakerError,
    Event,
    SimState,
    Trajectory,
    next_event_homogeneous,
    next_event_inhomogeneous,
    simulate,
    simulate_with_majorant,
    yule_mean,
)
from .coupling import simulate_coupled  # noqa: E402
from .analytics import (  # noqa: E402
    ChainParams,
    chain_transition,
    death_count,
    estimate_extinction_mc,
    extinction_probability,
    growth_statistic,
    hitting_probability,
    rho,
)
from .chains import FiniteKernel, Lumping, is_lumpable, lump, pushforward_equivalence, series_extinction  # noqa: E402
from .generator import CylindricalFunctional, dynkin_residual, generator_apply_estimate  # noqa: E402
from .mc import MCEstimate, mc_parallel  # noqa: E402
from .rng import Stream, substream  # noqa: E402
