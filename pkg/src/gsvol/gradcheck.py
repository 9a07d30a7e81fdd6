"""Finite-difference validation of the analytic backward pass.

The analytic gradients under test come from the brick rasterizer; the
reference derivative is a central finite difference of the loss evaluated
through the float64 naive renderer — two independent code routes. The
stencil is the fourth-order one (+/-h, +/-2h): the normalized render has
steep higher derivatives where the accumulated weight is small, and the
plain two-point stencil's O(h^2) truncation error at h=1e-3 would drown
the comparison. Any h-independent disagreement — i.e. an actual gradient
bug — shows up identically in either stencil.

The rendered function is only piecewise smooth: the cutoff_sigma truncation
and the epsilon_w coverage floor are hard switches. A coordinate whose
probe evaluations straddle such a switch has a meaningless finite
difference, so each probe first runs a cheap census (per-voxel live-pair
counts and coverage flags) at every stencil point and excludes the
coordinate when the structure changed; exclusion counts are reported. A
full-coverage pass with cutoff_sigma=inf (no truncation anywhere)
complements the default pass so every coordinate class is exercised on
smooth terrain as well.

Quaternion probes perturb the stored values directly (no renormalization),
matching the kernels, which apply the rotation formula to the stored
quaternion verbatim — so the reference measures the same 4-d ambient
derivative the backward pass reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import _numba_env  # noqa: F401  (must precede the numba import)
from numba import njit

from .field import GaussianField
from .optimize import loss_and_grad
from .raster import backward, build_brick_index, forward
from .render import RenderOptions, field_sigma_inv, render_naive
from .volume import GridSpec, Volume

PARAM_GROUPS = ("amplitude", "relax", "position", "scale", "rotation")

_GROUP_ATTR = {
    "amplitude": "raw_amplitude",
    "relax": "raw_relax",
    "position": "positions",
    "scale": "log_scales",
    "rotation": "rotations",
}


@njit(cache=True)
def _census_kernel(positions, sigma_inv, relax, origin, spacing,
                   nx, ny, nz, cutoff2, eps_w, W, live):
    n = positions.shape[0]
    for lin in range(nx * ny * nz):
        ix = lin % nx
        rem = lin // nx
        iy = rem % ny
        iz = rem // ny
        px = origin[0] + ix * spacing[0]
        py = origin[1] + iy * spacing[1]
        pz = origin[2] + iz * spacing[2]
        wsum = 0.0
        hits = 0
        for i in range(n):
            dx = px - positions[i, 0]
            dy = py - positions[i, 1]
            dz = pz - positions[i, 2]
            d2 = (dx * (sigma_inv[i, 0, 0] * dx + sigma_inv[i, 0, 1] * dy + sigma_inv[i, 0, 2] * dz)
                  + dy * (sigma_inv[i, 1, 0] * dx + sigma_inv[i, 1, 1] * dy + sigma_inv[i, 1, 2] * dz)
                  + dz * (sigma_inv[i, 2, 0] * dx + sigma_inv[i, 2, 1] * dy + sigma_inv[i, 2, 2] * dz))
            if d2 <= cutoff2:
                wsum += math.exp(-0.5 * d2) * relax[i]
                hits += 1
        W[lin] = wsum
        live[lin] = hits


def _census(f: GaussianField, grid: GridSpec, opts: RenderOptions):
    nvox = grid.dims[0] * grid.dims[1] * grid.dims[2]
    W = np.zeros(nvox)
    live = np.zeros(nvox, dtype=np.int64)
    _census_kernel(f.positions, field_sigma_inv(f), f.activated_relax(),
                   np.asarray(grid.origin), np.asarray(grid.spacing),
                   grid.dims[0], grid.dims[1], grid.dims[2],
                   opts.cutoff_sq, opts.epsilon_w, W, live)
    return W, live


@dataclass
class GroupResult:
    checked: int = 0
    excluded: int = 0      # structure changed between the +/-h evaluations
    below_floor: int = 0   # |grad| too small to compare meaningfully
    max_rel_error: float = 0.0


@dataclass
class GradCheckReport:
    groups: dict = dataclass_field(default_factory=dict)
    rel_tol: float = 1e-4
    grad_floor: float = 1e-6

    @property
    def max_rel_error(self) -> float:
        return max((g.max_rel_error for g in self.groups.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rel_tol

    def to_json(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "grad_floor": self.grad_floor,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "groups": {
                name: {
                    "checked": g.checked,
                    "excluded": g.excluded,
                    "below_floor": g.below_floor,
                    "max_rel_error": g.max_rel_error,
                }
                for name, g in self.groups.items()
            },
        }


def _perturbed_loss(f: GaussianField, attr: str, index, h: float,
                    grid: GridSpec, target: Volume, opts: RenderOptions,
                    loss_kind: str):
    probe = f.copy()
    getattr(probe, attr)[index] += h
    probe.bump_version()
    w, live = _census(probe, grid, opts)
    pred = render_naive(probe, grid, opts)
    loss, _ = loss_and_grad(pred, target, loss_kind)
    return loss, live, w >= opts.epsilon_w


def run_gradcheck(f: GaussianField, grid: GridSpec, target: Volume,
                  opts: RenderOptions | None = None, h: float = 1e-3,
                  rel_tol: float = 1e-4, grad_floor: float = 1e-6,
                  loss_kind: str = "l2",
                  params=PARAM_GROUPS) -> GradCheckReport:
    """Compare brick-backward gradients against central finite differences.

    opts selects the engine mode under test (default f64); the finite
    difference always runs through the f64 naive path.
    """
    test_opts = opts or RenderOptions(precision="f64")
    fd_opts = RenderOptions(cutoff_sigma=test_opts.cutoff_sigma,
                            epsilon_w=test_opts.epsilon_w, precision="f64")
    idx = build_brick_index(f, grid, test_opts)
    cache = forward(f, grid, idx, test_opts)
    _, dldi = loss_and_grad(cache.volume(), target, loss_kind)
    analytic = backward(f, grid, idx, cache, dldi, test_opts)

    report = GradCheckReport(rel_tol=rel_tol, grad_floor=grad_floor)
    for name in params:
        if name not in _GROUP_ATTR:
            raise ValueError(f"unknown parameter group {name!r}")
        attr = _GROUP_ATTR[name]
        res = GroupResult()
        ana = getattr(analytic, attr)
        for index in np.ndindex(ana.shape):
            losses = []
            lives = []
            covs = []
            for step in (-2.0, -1.0, 1.0, 2.0):
                loss, live, cov = _perturbed_loss(f, attr, index, step * h,
                                                  grid, target, fd_opts,
                                                  loss_kind)
                losses.append(loss)
                lives.append(live)
                covs.append(cov)
            if (any(not np.array_equal(lives[0], lv) for lv in lives[1:])
                    or any(not np.array_equal(covs[0], cv) for cv in covs[1:])):
                res.excluded += 1
                continue
            lmm, lm, lp, lpp = losses
            fd = (lmm - 8.0 * lm + 8.0 * lp - lpp) / (12.0 * h)
            an = float(ana[index])
            scale = max(abs(an), abs(fd))
            if scale <= grad_floor:
                res.below_floor += 1
                continue
            res.checked += 1
            res.max_rel_error = max(res.max_rel_error, abs(an - fd) / scale)
        report.groups[name] = res
    return report
