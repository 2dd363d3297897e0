"""Template-based image reconstruction from sparse tomographic data."""

from .grid import GridSpec, ScalarField, bspline_eval, bspline_fit, cell_centers, restrict_image
from .flow import (
    VelocityField,
    flow_jacvec,
    flow_jacvec_transpose,
    integrate_characteristics,
    interp_velocity,
    prolong_velocity,
)
from .solution_map import (
    SolutionMap,
    continuity_apply,
    pushforward_weights,
    solmap_jacvec,
    solmap_jacvec_transpose,
    transport_apply,
)
from .radon import (
    RadonGeometry,
    Sinogram,
    fbp,
    geometry_for_level,
    radon_adjoint,
    radon_forward,
    restrict_sinogram,
)
from .distance import NCCUndefinedError, ncc, ssd
from .regularizer import RegConfig, reg_diag, reg_eval, reg_hessvec
from .optimizer import (
    OptimizerConfig,
    Problem,
    gauss_newton,
    multilevel_reconstruct,
    objective,
    pcg,
)

from .phantoms import add_noise, make_phantom
from .metrics import dice, ssim

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "ScalarField", "bspline_eval", "bspline_fit", "cell_centers", "restrict_image",
    "VelocityField", "flow_jacvec", "flow_jacvec_transpose", "integrate_characteristics",
    "interp_velocity", "prolong_velocity",
    "SolutionMap", "continuity_apply", "pushforward_weights", "solmap_jacvec",
    "solmap_jacvec_transpose", "transport_apply",
    "RadonGeometry", "Sinogram", "fbp", "geometry_for_level", "radon_adjoint", "radon_forward",
    "restrict_sinogram",
    "NCCUndefinedError", "ncc", "ssd",
    "RegConfig", "reg_diag", "reg_eval", "reg_hessvec",
    "OptimizerConfig", "Problem", "gauss_newton", "multilevel_reconstruct", "objective", "pcg",
    "add_noise", "make_phantom", "dice", "ssim",
]
