"""Double-phase variable-exponent solver with Wolff-potential estimate checks."""

from .geometry import (
    Domain, ExponentSummary, Grid, Layer, LayerStack, ScalarField, ValidationReport,
    ball_integral, ball_min, build_grid, build_layered_fields, eval_field,
    holder_seminorm, validate_exponents,
)
from .solver import (
    SolveParams, SolveResult, analytic_radial_plaplace, energy, energy_gradient,
    solve_dirichlet, solve_radial, weak_residual,
)
from .wolff import (
    ConstantDensity, MeasureData, RadialGaussianDensity, WolffResult,
    wolff_constant, wolff_measure, wolff_variable, wolff_window,
)
from .bounds import BoundReport, CaseLabel, classify_case, sweep, verify_theorem
from .fiber import (
    ScenarioConfig, load_config, preset_cable, preset_fiber, run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "CaseLabel",
    "classify_case",
    "sweep",
    "verify_theorem",
    "Domain",
    "ExponentSummary",
    "Grid",
    "Layer",
    "LayerStack",
    "ScalarField",
    "ValidationReport",
    "ball_integral",
    "ball_min",
    "build_grid",
    "build_layered_fields",
    "eval_field",
    "holder_seminorm",
    "validate_exponents",
    "SolveParams",
    "SolveResult",
    "analytic_radial_plaplace",
    "energy",
    "energy_gradient",
    "solve_dirichlet",
    "solve_radial",
    "weak_residual",
    "ConstantDensity",
    "MeasureData",
    "RadialGaussianDensity",
    "WolffResult",
    "wolff_constant",
    "wolff_measure",
    "wolff_variable",
    "wolff_window",
    "ScenarioConfig",
    "load_config",
    "preset_cable",
    "preset_fiber",
    "run_scenario",
]
