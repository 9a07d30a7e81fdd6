"""Input coercion and validation shared by the estimator and CLI."""

from __future__ import annotations

import numpy as np

from .volume import GridSpec, Volume, grid_covering_extent


def as_volume(X, spacing=None, origin=None) -> Volume:
    """Coerce input to a Volume.

    Accepts a Volume (returned as-is; spacing/origin must then be None) or a
    3-D array, wrapped with the given spacing/origin (defaults 1 and 0).
    """
    if isinstance(X, Volume):
        if spacing is not None or origin is not None:
            raise ValueError("spacing/origin only apply to raw arrays")
        return X
    arr = np.asarray(X)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
    grid = GridSpec(arr.shape,
                    tuple(spacing) if spacing is not None else (1.0, 1.0, 1.0),
                    tuple(origin) if origin is not None else (0.0, 0.0, 0.0))
    return Volume(grid, arr)


def check_unit_range(v: Volume, name: str = "volume") -> Volume:
    lo, hi = float(v.data.min()), float(v.data.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} must be normalized to [0,1], got range [{lo}, {hi}]")
    return v


def resolve_target_grid(ref: GridSpec, target) -> GridSpec:
    """Resolve a render target against a reference (LR) grid.

    None -> the reference grid itself; a GridSpec -> used verbatim; a Volume
    -> its grid; an int k -> k-times-denser grid over the same world extent;
    a length-3 sequence of ints -> that many voxels over the same extent.
    """
    if target is None:
        return ref
    if isinstance(target, GridSpec):
        return target
    if isinstance(target, Volume):
        return target.grid
    if isinstance(target, (int, np.integer)):
        if target < 1:
            raise ValueError("upsampling factor must be >= 1")
        return grid_covering_extent(ref, tuple(d * int(target) for d in ref.dims))
    dims = tuple(int(d) for d in target)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"target dims must be 3 positive integers, got {target!r}")
    return grid_covering_extent(ref, dims)
