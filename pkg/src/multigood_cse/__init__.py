"""Stationary equilibria of multi-good economies with uninsurable endowment risk.

The main entry points are :func:`solve_equilibrium`, :func:`verify_cse`,
:func:`compute_excess_demand` and :func:`run_spread_experiment`.
"""

__version__ = "0.1.0"

from .economy import (  # noqa: E402
    EconomyConfig,
    EndowmentProcess,
    PriceSystem,
    TypeProfile,
    UtilitySpec,
    WealthGrid,
    build_grid,
    validate_config,
)
from .config import load_config  # noqa: E402
from .bellman import PolicySolution, apply_bellman, solve_value_function  # noqa: E402
from .distribution import WealthDistribution, convex_order_geq, invariant_distribution  # noqa: E402
from .excess_demand import ExcessDemand, compute_excess_demand  # noqa: E402
from .equilibrium import (  # noqa: E402
    EquilibriumOptions,
    EquilibriumResult,
    solve_equilibrium,
    uniqueness_probe,
    verify_cse,
)
from .comparative_statics import mean_preserving_spread, run_spread_experiment  # noqa: E402

__all__ = [
    "EconomyConfig", "EndowmentProcess", "PriceSystem", "TypeProfile", "UtilitySpec",
    "WealthGrid", "build_grid", "validate_config", "load_config", "PolicySolution",
    "apply_bellman", "solve_value_function", "WealthDistribution", "convex_order_geq",
    "invariant_distribution", "ExcessDemand", "compute_excess_demand", "EquilibriumOptions",
    "EquilibriumResult", "solve_equilibrium", "uniqueness_probe", "verify_cse",
    "mean_preserving_spread", "run_spread_experiment",
]
