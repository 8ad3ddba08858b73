"""Multi-frequency power-density reconstruction of (a, q) for the Helmholtz equation."""

from .coefficients import CoefficientPair, Inclusion, build_coefficients, homogeneous
from .errors import MfpdError, NumericalError, ValidationError
from .helmholtz import HelmholtzOperator, SpectrumEstimate, estimate_spectrum, solve_helmholtz
from .illumination import Illumination, parse_illumination
from .mesh import Mesh2D, gen_disk_mesh, load_mesh, save_mesh, submesh

__version__ = "0.1.0"

__all__ = [
    "CoefficientPair",
    "HelmholtzOperator",
    "Illumination",
    "Inclusion",
    "Mesh2D",
    "MfpdError",
    "NumericalError",
    "SpectrumEstimate",
    "ValidationError",
    "build_coefficients",
    "estimate_spectrum",
    "gen_disk_mesh",
    "homogeneous",
    "load_mesh",
    "parse_illumination",
    "save_mesh",
    "solve_helmholtz",
    "submesh",
]
