"""Synthetic phantoms: analytic primitives rasterized onto a grid.

Two families: hard-edged ellipsoids (inside/outside test) and smooth
gaussian mixtures (analytic density). Overlaps take the max intensity,
then an optional separable blur softens edges. These serve as ground
truth for the end-to-end super-resolution tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import GridSpec, Volume


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]      # world coords
    semi_axes: tuple[float, float, float]   # world units
    intensity: float


@dataclass(frozen=True)
class GaussianBlob:
    center: tuple[float, float, float]
    sigmas: tuple[float, float, float]      # axis-aligned std devs, world units
    intensity: float                        # peak value of the blob


@dataclass(frozen=True)
class Phantom:
    kind: str                               # "ellipsoids" | "gaussian-mixture"
    parameters: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("ellipsoids", "gaussian-mixture"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        for p in self.parameters:
            if not 0.0 <= p.intensity <= 1.0:
                raise ValueError(f"primitive intensity {p.intensity} outside [0,1]")


def _world_axes(grid: GridSpec):
    """Per-axis world coordinate vectors, broadcastable to the full grid."""
    cx, cy, cz = (grid.axis_coords(k) for k in range(3))
    return cx[:, None, None], cy[None, :, None], cz[None, None, :]


def generate_phantom(p: Phantom, grid: GridSpec, smooth_sigma: float = 0.0) -> Volume:
    """Rasterize phantom primitives at voxel centers, max at overlaps.

    smooth_sigma is a Gaussian blur radius in voxel units, applied after
    rasterization; the result is clamped to [0, 1].
    """
    if smooth_sigma < 0:
        raise ValueError("smooth_sigma must be >= 0")
    xs, ys, zs = _world_axes(grid)
    out = np.zeros(grid.dims, dtype=np.float64)
    for prim in p.parameters:
        cx, cy, cz = prim.center
        if p.kind == "ellipsoids":
            ax, ay, az = prim.semi_axes
            d2 = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 + ((zs - cz) / az) ** 2
            np.maximum(out, np.where(d2 <= 1.0, prim.intensity, 0.0), out=out)
        else:
            sx, sy, sz = prim.sigmas
            d2 = ((xs - cx) / sx) ** 2 + ((ys - cy) / sy) ** 2 + ((zs - cz) / sz) ** 2
            np.maximum(out, prim.intensity * np.exp(-0.5 * d2), out=out)
    if smooth_sigma > 0:
        out = ndimage.gaussian_filter(out, sigma=smooth_sigma)
    np.clip(out, 0.0, 1.0, out=out)
    return Volume(grid, out.astype(np.float32))


def random_phantom(kind: str, grid: GridSpec, seed: int, components: int = 6) -> Phantom:
    """Seeded random phantom with all primitive centers inside the grid extent.

    Ellipsoids are drawn as a bright outer shell plus darker nested internals,
    giving the kind of structured contrast a super-resolution fit can recover.
    """
    if components < 1:
        raise ValueError("components must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = grid.extent()
    lo = np.asarray(lo)
    size = np.asarray(hi) - lo
    center = lo + size / 2
    prims = []
    if kind == "ellipsoids":
        # Outer body: large, bright, roughly centered.
        outer = size * rng.uniform(0.30, 0.38, size=3)
        prims.append(Ellipsoid(tuple(center + size * rng.uniform(-0.02, 0.02, size=3)),
                               tuple(outer), float(rng.uniform(0.55, 0.7))))
        for _ in range(components - 1):
            c = center + size * rng.uniform(-0.18, 0.18, size=3)
            axes = size * rng.uniform(0.04, 0.14, size=3)
            prims.append(Ellipsoid(tuple(c), tuple(axes), float(rng.uniform(0.2, 0.95))))
    elif kind == "gaussian-mixture":
        for _ in range(components):
            c = center + size * rng.uniform(-0.25, 0.25, size=3)
            sig = size * rng.uniform(0.05, 0.15, size=3)
            prims.append(GaussianBlob(tuple(c), tuple(sig), float(rng.uniform(0.3, 1.0))))
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    return Phantom(kind, tuple(prims))
