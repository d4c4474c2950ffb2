"""Melnikov/Malkin bifurcation functions, the index of Phi on a cycle, and period-map fixed points."""
from .cycle import Cycle, cycle_from_initial, find_cycle_with_period
from .index import phi_curve, theorem_verdict, winding_number
from .linearized import adjoint_frame, monodromy
from .melnikov import condition_a_margin, melnikov_grid, melnikov_values, zeros_of_me
from .pipeline import parse_config, run_analysis
from .poincare import andr_index_check, find_fixed_points, poincare_map
from .system import PlanarSystem, builtin, load_system, make_system

__version__ = "0.1.0"

__all__ = [
    "Cycle", "PlanarSystem", "adjoint_frame", "andr_index_check", "builtin",
    "condition_a_margin", "cycle_from_initial", "find_cycle_with_period",
    "find_fixed_points", "load_system", "make_system", "melnikov_grid", "melnikov_values",
    "monodromy", "parse_config", "phi_curve", "poincare_map", "run_analysis",
    "theorem_verdict", "winding_number", "zeros_of_me",
]
