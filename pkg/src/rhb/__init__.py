"""Reconstruction harmonic balance for periodic orbits of ODEs.

Submodules
----------
spectral   collocation operators, aliasing matrix, exact polynomial harmonics
systems    Duffing, Rayleigh-Plesset and CRTBP definitions (direct and recast)
assembly   HB, HDHB, RHB and AFT residuals in the Fourier coefficients
solvers    damped Newton, multistart clustering, frequency sweeps
integrate  Dormand-Prince reference integration and orbit verification
cli        command line front end
"""

from .assembly import MethodConfig, PhaseAnchor, build_hb_residual, build_time_domain_residual, node_count
from .solvers import NewtonOptions, PhysicalityCriteria, frequency_sweep, multistart, newton_solve
from .spectral import HarmonicBasis, build_grid, build_operators, operators_for, predict_alias_entries

__version__ = "0.1.0"

__all__ = [
    "HarmonicBasis",
    "MethodConfig",
    "NewtonOptions",
    "PhaseAnchor",
    "PhysicalityCriteria",
    "build_grid",
    "build_hb_residual",
    "build_operators",
    "build_time_domain_residual",
    "frequency_sweep",
    "multistart",
    "newton_solve",
    "node_count",
    "operators_for",
    "predict_alias_entries",
]
