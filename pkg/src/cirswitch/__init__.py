"""Optimal entry/exit thresholds for a CIR process with fixed transaction costs.

Closed-form solvers for the one-round-trip and infinite-switching problems,
plus two independent checks: a concave-majorant construction in transformed
coordinates and Monte Carlo valuation of the threshold policies.
"""

__version__ = "0.1.0"

from .cir import Costs, CirParams, CriticalLevels, critical_levels  # noqa: E402
from .single_cycle import (SingleCycleSolution, solve_b_star, solve_d_star,  # noqa: E402
                           solve_single_cycle, value_j, value_v)
from .switching import (Regime, SwitchingSolution, check_variational_inequalities,  # noqa: E402
                        classify_regime, solve_switching, value_j_tilde, value_v_tilde)

__all__ = [
    "CirParams", "Costs", "CriticalLevels", "critical_levels",
    "SingleCycleSolution", "solve_b_star", "solve_d_star", "solve_single_cycle",
    "value_v", "value_j",
    "Regime", "SwitchingSolution", "classify_regime", "solve_switching",
    "value_j_tilde", "value_v_tilde", "check_variational_inequalities",
]
