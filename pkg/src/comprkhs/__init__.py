"""Kernel methods for compositional data via the sign-flip quotient of the sphere."""

__version__ = "0.1.0"

from .geometry import DomainError, as_composition, fold, inflate, contract_l1, orbit, spread_out
from .harmonics import CompositionalKernel, ZonalKernel, gram, omega_matrix, sphere_volume
from .density import EXPONENTIAL, LINEAR, BOX, get_kernel, spread_kde, gof_test, UniformNull
from .montecarlo import RngStream, McEstimate

__all__ = [
    "DomainError",
    "as_composition",
    "fold",
    "inflate",
    "contract_l1",
    "orbit",
    "spread_out",
    "CompositionalKernel",
    "ZonalKernel",
    "gram",
    "omega_matrix",
    "sphere_volume",
    "EXPONENTIAL",
    "LINEAR",
    "BOX",
    "get_kernel",
    "spread_kde",
    "gof_test",
    "UniformNull",
    "RngStream",
    "McEstimate",
]
