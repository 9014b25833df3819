"""Piecewise-linear adaptive integrate-and-fire model with reset.

Exact zone flows, hybrid simulation, reset-cycle solving and canard
analysis, and continuation of cycle families in the reset increment ``k``.
"""

from .continuation import (
    Branch,
    BranchPoint,
    BvpUnknowns,
    PointClass,
    bvp_residual,
    classify_canard_point,
    continue_branch,
    export_branch,
    l2_norm,
)
from .cycles import (
    CanardClass,
    ResetCycle,
    corner_grazing_w,
    floquet_multiplier,
    return_map_P3RC,
    return_map_Pc,
    shoot_cycle,
    solve_k_for_canard,
    solve_k_for_maximal_canard,
)
from .errors import (
    AIFError,
    ConvergenceError,
    FlowOverflowError,
    GrazingError,
    InvalidParameterError,
    InvalidStateError,
    ItineraryError,
    NumericalError,
)
from .flows import first_crossing, flow, flow_minus, flow_plus, propagator
from .hybrid import AttractorKind, detect_attractor, find_attractor, simulate
from .model import (
    ModelParams,
    SlowDynamics,
    State,
    fast_subsystem_bifurcations,
    fast_subsystem_equilibria,
    manifold_geometry,
    slow_flow_equilibria,
)

__version__ = "0.1.0"
