"""Embedded LP/MILP solver: bounded simplex, branch-and-bound with SOS2 branching."""
from .bnb import FEAS_TOL, GAP_TOL, INT_TOL, MilpOptions, solve_lp, solve_milp, sos2_violation
from .lpformat import write_lp, write_lp_string
from .model import (INF, CompiledModel, Model, ModelError, NumericalInstability, Solution,
                    Status)
from .quadratic import add_separable_quadratic, envelope_error_bound

__all__ = [
    "FEAS_TOL", "GAP_TOL", "INT_TOL", "INF", "MilpOptions", "CompiledModel", "Model", "ModelError",
    "NumericalInstability", "Solution", "Status", "add_separable_quadratic",
    "envelope_error_bound", "solve_lp", "solve_milp", "sos2_violation", "write_lp",
    "write_lp_string",
]
