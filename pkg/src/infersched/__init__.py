"""Planning and simulation toolkit for large-scale GPU inference scheduling.

The package solves steady-state occupancy linear programs for clusters that
interleave prefill and decode work, derives gate-and-route control policies
from the solutions, integrates the matching fluid dynamics, and replays the
policies in a discrete-event simulator with exact revenue accounting.
"""

__version__ = "0.1.0"

from .model import (
    BUNDLED,
    SEPARATE,
    HardwareProfile,
    Instance,
    Pricing,
    ServiceRates,
    WorkloadClass,
    derive_rates,
    iteration_time,
    solo_efficiency_condition,
)
from .planner import (
    FluidPlan,
    PolicyParams,
    SliSpec,
    SliTerm,
    build_lp,
    derive_policy_params,
    eliminate_decode_buffer,
    plan_instance,
    solve_lp,
    sweep_frontier,
)

__all__ = [
    "BUNDLED",
    "SEPARATE",
    "HardwareProfile",
    "Instance",
    "Pricing",
    "ServiceRates",
    "WorkloadClass",
    "derive_rates",
    "iteration_time",
    "solo_efficiency_condition",
    "FluidPlan",
    "PolicyParams",
    "SliSpec",
    "SliTerm",
    "build_lp",
    "derive_policy_params",
    "eliminate_decode_buffer",
    "plan_instance",
    "solve_lp",
    "sweep_frontier",
    "__version__",
]
