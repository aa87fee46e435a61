"""Statistical mechanics of bipartite entanglement.

Analytic saddle-point branches of the purity-constrained eigenvalue gas, exact
purity moments from unitary integration, random-state samplers and a
finite-N Coulomb-gas minimizer.
"""

from .core import (BETA_ARCSINE, BETA_ASYM, BETA_G, BETA_PLUS, BipartiteDims, BracketError, BranchId,
                   ConvergenceError, DegenerateError, DomainError, EdgeError, EntrostatError, Spectrum,
                   SupportParams, ThermoPoint, purity, trace_power)
from .sampling import RngSpec

__version__ = "0.1.0"

__all__ = [
    "BETA_ARCSINE", "BETA_ASYM", "BETA_G", "BETA_PLUS", "BipartiteDims", "BracketError", "BranchId",
    "ConvergenceError", "DegenerateError", "DomainError", "EdgeError", "EntrostatError", "RngSpec",
    "Spectrum", "SupportParams", "ThermoPoint", "purity", "trace_power", "__version__",
]
