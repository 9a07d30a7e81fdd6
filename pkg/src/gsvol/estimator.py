"""Scikit-learn style front end for the zero-shot pipeline."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .field import InitConfig
from .optimize import FitConfig, fit as _fit
from .raster import build_brick_index, forward
from .render import RenderOptions
from .validation import as_volume, resolve_target_grid
from .volume import Volume, ensure_unit_range


class GaussianFieldRegressor(BaseEstimator):
    """Zero-shot volumetric super-resolution estimator.

    fit(X) takes exactly one low-resolution volume (a Volume, or a 3-D array
    wrapped with unit spacing) and optimizes an explicit Gaussian field
    against it — there is no training set and y is not accepted. predict()
    then renders the fitted field at any target grid: a GridSpec, a Volume
    (grid copied), an integer upsampling factor, or target dims sharing the
    input's world extent.

    Inputs already in [0,1] are used as-is; anything else is min-max
    normalized first. Predictions are in [0,1].
    """

    def __init__(self, iterations=2000, loss="l1", lr_position=None,
                 lr_scale=5e-3, lr_rotation=1e-3, lr_amplitude=2.5e-2,
                 lr_relax=2.5e-2, background_threshold=0.01,
                 scale_factor=0.75, relax_init=0.95, amplitude_enabled=True,
                 relax_enabled=True, cutoff_sigma=3.0, epsilon_w=1e-8,
                 precision="f32", seed=0, log_every=50):
        self.iterations = iterations
        self.loss = loss
        self.lr_position = lr_position
        self.lr_scale = lr_scale
        self.lr_rotation = lr_rotation
        self.lr_amplitude = lr_amplitude
        self.lr_relax = lr_relax
        self.background_threshold = background_threshold
        self.scale_factor = scale_factor
        self.relax_init = relax_init
        self.amplitude_enabled = amplitude_enabled
        self.relax_enabled = relax_enabled
        self.cutoff_sigma = cutoff_sigma
        self.epsilon_w = epsilon_w
        self.precision = precision
        self.seed = seed
        self.log_every = log_every

    def _render_options(self) -> RenderOptions:
        return RenderOptions(cutoff_sigma=self.cutoff_sigma,
                             epsilon_w=self.epsilon_w, precision=self.precision)

    def fit(self, X, y=None):
        if y is not None:
            raise ValueError("zero-shot fitting takes no target volume; y must be None")
        lr = ensure_unit_range(as_volume(X))
        init_cfg = InitConfig(background_threshold=self.background_threshold,
                              scale_factor=self.scale_factor,
                              relax_init=self.relax_init)
        fit_cfg = FitConfig(iterations=self.iterations, loss=self.loss,
                            lr_position=self.lr_position, lr_scale=self.lr_scale,
                            lr_rotation=self.lr_rotation,
                            lr_amplitude=self.lr_amplitude, lr_relax=self.lr_relax,
                            seed=self.seed,
                            amplitude_enabled=self.amplitude_enabled,
                            relax_enabled=self.relax_enabled,
                            log_every=self.log_every)
        self.field_, self.report_ = _fit(lr, init_cfg, fit_cfg,
                                         render_opts=self._render_options())
        self.lr_grid_ = lr.grid
        return self

    def predict(self, target=None) -> Volume:
        """Render the fitted field at a target grid (default: the input grid)."""
        check_is_fitted(self, "field_")
        grid = resolve_target_grid(self.lr_grid_, target)
        opts = self._render_options()
        idx = build_brick_index(self.field_, grid, opts)
        return forward(self.field_, grid, idx, opts).volume()

    def transform(self, target=None) -> Volume:
        """Alias of predict: rendering is the only transformation."""
        return self.predict(target)
