"""Reconstruction quality metrics: PSNR and full-3D SSIM.

Both assume normalized volumes (data range fixed at 1.0) on identical grids.
SSIM uses the standard 11-tap Gaussian window (sigma 1.5) extended to 3D as
a separable product; at borders the window support is restricted to the
volume and the surviving weights renormalized, implemented as a zero-filled
correlation divided by the correlation of an all-ones volume. That keeps
every local statistic an exact weighted average, so ssim3d(x, x) is exactly
1: sigma_xy is computed by the same arithmetic as sigma_x^2 when x == y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GridMismatchError
from .volume import GridSpec, Volume

_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_C1 = (0.01 * 1.0) ** 2
_C2 = (0.03 * 1.0) ** 2


def _check_grids(x: Volume, y: Volume) -> None:
    if x.grid != y.grid:
        raise GridMismatchError(f"metric inputs on different grids: "
                                f"{x.grid.dims} vs {y.grid.dims}")


def psnr(x: Volume, y: Volume) -> float:
    """10*log10(1/MSE) in dB against data range 1.0; inf when identical."""
    _check_grids(x, y)
    d = x.data.astype(np.float64) - y.data.astype(np.float64)
    mse = float((d * d).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window() -> np.ndarray:
    half = (_WINDOW_SIZE - 1) / 2
    t = np.arange(_WINDOW_SIZE) - half
    w = np.exp(-(t * t) / (2.0 * _WINDOW_SIGMA ** 2))
    return w / w.sum()


def _local_mean(a: np.ndarray, window: np.ndarray) -> np.ndarray:
    for axis in range(3):
        a = ndimage.correlate1d(a, window, axis=axis, mode="constant", cval=0.0)
    return a


def ssim3d(x: Volume, y: Volume) -> float:
    """Mean local SSIM over all voxels, full 3D windows."""
    _check_grids(x, y)
    if min(x.grid.dims) < _WINDOW_SIZE:
        raise ValueError(
            f"volume too small for SSIM window: dims {x.grid.dims}, "
            f"need >= {_WINDOW_SIZE} per axis"
        )
    a = x.data.astype(np.float64)
    b = y.data.astype(np.float64)
    window = _gaussian_window()
    norm = _local_mean(np.ones_like(a), window)
    mu_a = _local_mean(a, window) / norm
    mu_b = _local_mean(b, window) / norm
    var_a = _local_mean(a * a, window) / norm - mu_a * mu_a
    var_b = _local_mean(b * b, window) / norm - mu_b * mu_b
    cov = _local_mean(a * b, window) / norm - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _C1) * (2.0 * cov + _C2)
    den = (mu_a * mu_a + mu_b * mu_b + _C1) * (var_a + var_b + _C2)
    return float((num / den).mean())


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    grid: GridSpec
    identical: bool

    @classmethod
    def evaluate(cls, x: Volume, y: Volume) -> "MetricReport":
        p = psnr(x, y)
        return cls(p, ssim3d(x, y), x.grid, identical=math.isinf(p))

    def to_json(self) -> dict:
        return {
            "psnr": None if self.identical else self.psnr,
            "ssim": self.ssim,
            "identical": self.identical,
            "grid": {"dims": list(self.grid.dims),
                     "spacing": list(self.grid.spacing),
                     "origin": list(self.grid.origin)},
        }
