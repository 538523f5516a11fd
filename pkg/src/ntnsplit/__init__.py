"""Energy-aware CU/DU split and platform selection for LEO/HAPS O-RAN."""

__version__ = "0.1.0"

from .cost_model import Assignment, Scenario, check_feasibility, default_scenario, load_scenario, total_power
from .solver import Infeasible, OptimalDecision, enumerate_assignments, solve_optimal

__all__ = [
    "Assignment",
    "Infeasible",
    "OptimalDecision",
    "Scenario",
    "check_feasibility",
    "default_scenario",
    "enumerate_assignments",
    "load_scenario",
    "solve_optimal",
    "total_power",
]
