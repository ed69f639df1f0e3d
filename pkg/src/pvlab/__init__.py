"""Numerical laboratory for perturbation-flow variational principles on the periodic torus."""

from .dynamics import PdeForm, SolverError, Trajectory, el_residual, exact_family, solve_ns, taylor_green
from .flowmap import FlowError, TestVectorField, TorusMap, bump_envelope, composed_drift, integrate_flow, invert_map
from .torus import Grid, SpectralInterpolant
from .variation import (
    VariationReport,
    criticality_report,
    default_battery,
    derivative_analytic,
    derivative_el,
    derivative_fd,
    energy,
)

__version__ = "0.1.0"

__all__ = [
    "Grid", "SpectralInterpolant", "PdeForm", "SolverError", "Trajectory", "el_residual", "exact_family",
    "solve_ns", "taylor_green", "FlowError", "TestVectorField", "TorusMap", "bump_envelope", "composed_drift",
    "integrate_flow", "invert_map", "VariationReport", "criticality_report", "default_battery",
    "derivative_analytic", "derivative_el", "derivative_fd", "energy",
]
