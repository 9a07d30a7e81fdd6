"""Brute-force reference renderer.

Implements the normalized weighted average

    I(p) = sum_i A_i w_i(p) / sum_i w_i(p),
    w_i(p) = exp(-1/2 (p-mu_i)^T Sigma_i^{-1} (p-mu_i)) * r_i,

by looping every Gaussian for every voxel. It exists as the correctness
oracle for the brick rasterizer: O(N * voxels), simple enough to audit, and
written down a different algebraic route (explicit Sigma^{-1} quadratic
form, where the brick kernels use the whitening factor L = diag(1/s) R^T).

Per-pair math always runs in float64 — in particular the truncation decision
d^2 <= cutoff^2 — so both engines agree on which pairs are live; `precision`
selects the accumulator/output dtype only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _numba_env  # noqa: F401  (must precede the numba import)
from numba import njit, prange

from .field import GaussianField, rotation_matrices
from .volume import GridSpec, Volume


@dataclass(frozen=True)
class RenderOptions:
    """Shared knobs for both render engines.

    cutoff_sigma: Mahalanobis truncation radius; pairs beyond it contribute
    exactly zero in forward and backward. math.inf disables truncation.
    epsilon_w: denominator floor below which a voxel renders 0 with zero
    gradient. precision: "f32" (production) or "f64" (oracle/gradcheck).
    deterministic: when True the brick engine canonicalizes per-brick lists
    so outputs and gradients are bit-reproducible regardless of worker count
    or list construction order; False skips the sort and accepts
    accumulation-order noise from unsorted lists.
    """
    cutoff_sigma: float = 3.0
    epsilon_w: float = 1e-8
    precision: str = "f32"
    deterministic: bool = True

    def __post_init__(self):
        if self.cutoff_sigma <= 0:
            raise ValueError("cutoff_sigma must be positive")
        if self.epsilon_w <= 0:
            raise ValueError("epsilon_w must be positive")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be 'f32' or 'f64', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def cutoff_sq(self) -> float:
        return self.cutoff_sigma * self.cutoff_sigma


def field_sigma_inv(f: GaussianField) -> np.ndarray:
    """Per-Gaussian inverse covariances, (N,3,3): R diag(s^-2) R^T."""
    r = rotation_matrices(f.rotations)
    inv_var = np.exp(-2.0 * f.log_scales)  # 1/s^2
    return np.einsum("nab,nb,ncb->nac", r, inv_var, r)


def weight(f: GaussianField, i: int, p, opts: RenderOptions = RenderOptions()) -> float:
    """Spatial weight of Gaussian i at world point p (truncation included)."""
    delta = np.asarray(p, dtype=np.float64) - f.positions[i]
    sigma_inv = field_sigma_inv(f)[i]
    d2 = float(delta @ sigma_inv @ delta)
    if d2 > opts.cutoff_sq:
        return 0.0
    return math.exp(-0.5 * d2) * float(f.activated_relax()[i])


@njit(cache=True, parallel=True)
def _naive_kernel(positions, sigma_inv, amp, relax, origin, spacing,
                  nx, ny, nz, cutoff2, eps_w, S, W, I):
    n = positions.shape[0]
    for lin in prange(nx * ny * nz):
        ix = lin % nx
        rem = lin // nx
        iy = rem % ny
        iz = rem // ny
        px = origin[0] + ix * spacing[0]
        py = origin[1] + iy * spacing[1]
        pz = origin[2] + iz * spacing[2]
        for i in range(n):
            dx = px - positions[i, 0]
            dy = py - positions[i, 1]
            dz = pz - positions[i, 2]
            d2 = (dx * (sigma_inv[i, 0, 0] * dx + sigma_inv[i, 0, 1] * dy + sigma_inv[i, 0, 2] * dz)
                  + dy * (sigma_inv[i, 1, 0] * dx + sigma_inv[i, 1, 1] * dy + sigma_inv[i, 1, 2] * dz)
                  + dz * (sigma_inv[i, 2, 0] * dx + sigma_inv[i, 2, 1] * dy + sigma_inv[i, 2, 2] * dz))
            if d2 <= cutoff2:
                w = math.exp(-0.5 * d2) * relax[i]
                S[lin] += amp[i] * w
                W[lin] += w
        if W[lin] >= eps_w:
            I[lin] = S[lin] / W[lin]
        else:
            I[lin] = 0.0


def render_naive(f: GaussianField, grid: GridSpec, opts: RenderOptions = RenderOptions()) -> Volume:
    """Render by looping all Gaussians at every voxel center."""
    dt = opts.dtype
    nvox = grid.dims[0] * grid.dims[1] * grid.dims[2]
    S = np.zeros(nvox, dtype=dt)
    W = np.zeros(nvox, dtype=dt)
    I = np.zeros(nvox, dtype=dt)
    _naive_kernel(
        f.positions, field_sigma_inv(f),
        f.activated_amplitude(), f.activated_relax(),
        np.asarray(grid.origin), np.asarray(grid.spacing),
        grid.dims[0], grid.dims[1], grid.dims[2],
        opts.cutoff_sq, opts.epsilon_w, S, W, I,
    )
    return Volume.from_linear(grid, I)
