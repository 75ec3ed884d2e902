"""Grid laboratory for the Hamilton-Jacobi equation ``f - lambda H f = h``."""

from .doubling import comparison_check, doubling_diagnostic, grid_quantum, momentum_gap
from .grid import Grid, GridFunction, compositions
from .lifted import Ffn_sup, lifted_Hn, periodic_Ffn
from .penalties import PenaltyParams, grad_psi1, grad_psi2, grad_upsilon, psi1, psi2, upsilon
from .resolvent import (
    DEFAULT_CATALOG,
    ConvergenceError,
    ControlModel,
    hj_residual,
    log_catalog,
    resolvent_solve,
    residual_table,
)

__all__ = [
    "Grid",
    "GridFunction",
    "compositions",
    "PenaltyParams",
    "psi1",
    "psi2",
    "upsilon",
    "grad_psi1",
    "grad_psi2",
    "grad_upsilon",
    "lifted_Hn",
    "periodic_Ffn",
    "Ffn_sup",
    "resolvent_solve",
    "ControlModel",
    "ConvergenceError",
    "hj_residual",
    "residual_table",
    "log_catalog",
    "DEFAULT_CATALOG",
    "doubling_diagnostic",
    "comparison_check",
    "grid_quantum",
    "momentum_gap",
]
