"""gsvol: zero-shot volumetric super-resolution with an explicit 3D Gaussian field.

Fit an anisotropic Gaussian field to a single low-resolution volume, then
render it at any target grid. No training data, no pretrained weights.
"""

from . import _numba_env  # noqa: F401  (thread pool setup; import first)

__version__ = "0.1.0"

from .errors import (FormatError, GridMismatchError, GsvolError,
                     NumericalError, StaleIndexError)
from .estimator import GaussianFieldRegressor
from .field import (GaussianField, InitConfig, assemble_covariance,
                    init_from_volume, load_field, random_field, save_field)
from .gradcheck import GradCheckReport, run_gradcheck
from .metrics import MetricReport, psnr, ssim3d
from .optimize import AdamState, FitConfig, FitReport, fit, loss_and_grad, step_optimizer
from .phantom import Phantom, generate_phantom, random_phantom
from .raster import (BrickIndex, GradientBuffer, RenderCache, backward,
                     build_brick_index, forward, merge_gradients,
                     set_worker_count, worker_count)
from .render import RenderOptions, render_naive
from .volume import (GridSpec, Volume, ensure_unit_range, grid_covering_extent,
                     load_volume, normalize_intensity, resample_trilinear,
                     save_volume)

__all__ = [
    "__version__",
    "GsvolError", "FormatError", "GridMismatchError", "StaleIndexError",
    "NumericalError",
    "GridSpec", "Volume", "normalize_intensity", "ensure_unit_range",
    "resample_trilinear", "grid_covering_extent", "save_volume", "load_volume",
    "GaussianField", "InitConfig", "assemble_covariance", "init_from_volume",
    "random_field", "save_field", "load_field",
    "RenderOptions", "render_naive",
    "BrickIndex", "RenderCache", "GradientBuffer", "build_brick_index",
    "forward", "backward", "merge_gradients", "set_worker_count", "worker_count",
    "FitConfig", "FitReport", "AdamState", "fit", "loss_and_grad", "step_optimizer",
    "psnr", "ssim3d", "MetricReport",
    "GradCheckReport", "run_gradcheck",
    "Phantom", "generate_phantom", "random_phantom",
    "GaussianFieldRegressor",
]
