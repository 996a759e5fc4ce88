"""Ergodic BSDEs driven by G-Brownian motion: solvers, oracles and control."""

from .gcalculus import DimensionError, GFunction, UncertaintyInterval, dissipativity_margin, g_eval
from .models import (AssumptionReport, ControlSpec, HamiltonianDriver, ModelSpec, SamplingPlan,
                     check_assumptions, hamiltonian_from_control, model_from_dict, parse_model)
from .pde import (Field, Grid, TimeField, residual, solve_discounted, solve_finite_bsde, solve_infinite,
                  solve_parabolic)

__all__ = [
    "AssumptionReport", "ControlSpec", "DimensionError", "Field", "GFunction", "Grid", "HamiltonianDriver",
    "ModelSpec", "SamplingPlan", "TimeField", "UncertaintyInterval", "check_assumptions",
    "dissipativity_margin", "g_eval", "hamiltonian_from_control", "model_from_dict", "parse_model",
    "residual", "solve_discounted", "solve_finite_bsde", "solve_infinite", "solve_parabolic",
]
__version__ = "0.1.0"
