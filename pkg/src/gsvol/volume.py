"""Dense volumes on cell-centered grids: geometry, normalization, resampling, I/O."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

RAW_JSON_DTYPE = "f32"


@dataclass(frozen=True)
class GridSpec:
    """A cell-centered sampling lattice.

    ``origin`` is the world coordinate of the *center* of voxel (0, 0, 0);
    voxel (i, j, k) sits at ``origin + (i, j, k) * spacing``. Treating voxels
    as cells, the grid's world bounding box gains a half-voxel margin on each
    side (see :meth:`extent`).
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("GridSpec fields must each have 3 components")
        if any(d < 1 for d in dims):
            raise ValueError(f"dims must all be >= 1, got {dims}")
        if any(not s > 0 for s in spacing):
            raise ValueError(f"spacing must all be > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def num_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def voxel_to_world(self, idx) -> np.ndarray:
        """World coordinates of voxel centers; ``idx`` is (..., 3), may be fractional."""
        idx = np.asarray(idx, dtype=np.float64)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def world_to_voxel(self, pts) -> np.ndarray:
        """Continuous voxel coordinates of world points (inverse of voxel_to_world)."""
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - np.asarray(self.origin)) / np.asarray(self.spacing)

    def axis_coords(self, axis: int) -> np.ndarray:
        """World coordinates of voxel centers along one axis."""
        return self.origin[axis] + np.arange(self.dims[axis], dtype=np.float64) * self.spacing[axis]

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """World bounding box (lo, hi) treating voxels as cells."""
        o = np.asarray(self.origin, dtype=np.float64)
        s = np.asarray(self.spacing, dtype=np.float64)
        lo = o - 0.5 * s
        return lo, lo + np.asarray(self.dims) * s

    def voxel_centers(self) -> np.ndarray:
        """All voxel centers as an (num_voxels, 3) array in x-fastest order."""
        ax = [self.axis_coords(a) for a in range(3)]
        xs, ys, zs = np.meshgrid(*ax, indexing="ij")
        return np.stack(
            [xs.ravel(order="F"), ys.ravel(order="F"), zs.ravel(order="F")], axis=1
        )


@dataclass(frozen=True)
class Volume:
    """A dense scalar grid. ``data`` has shape ``grid.dims``, indexed [ix, iy, iz].

    Instances are treated as immutable; operations return new volumes.
    """

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        data = np.ascontiguousarray(data)
        if data.shape != self.grid.dims:
            raise ValueError(
                f"data shape {data.shape} does not match grid dims {self.grid.dims}"
            )
        object.__setattr__(self, "data", data)

    def linear(self) -> np.ndarray:
        """Data flattened in x-fastest order (the on-disk layout)."""
        return self.data.ravel(order="F")

    @classmethod
    def from_linear(cls, grid: GridSpec, flat, dtype=None) -> "Volume":
        """Build from x-fastest flat data, keeping its dtype unless overridden."""
        flat = np.asarray(flat, dtype=dtype)
        if flat.size != grid.num_voxels:
            raise ValueError(
                f"flat data has {flat.size} values, grid wants {grid.num_voxels}"
            )
        return cls(grid, np.ascontiguousarray(flat.reshape(grid.dims, order="F")))


def normalize_intensity(v: Volume) -> Volume:
    """Rescale intensities affinely to [0, 1]; a constant volume maps to all zeros."""
    data = v.data.astype(np.float64)
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        return Volume(v.grid, np.zeros(v.grid.dims, dtype=v.data.dtype))
    out = (data - lo) / (hi - lo)
    return Volume(v.grid, out.astype(v.data.dtype))


def resample_trilinear(v: Volume, target: GridSpec) -> Volume:
    """Sample ``v`` at the centers of ``target``'s voxels by trilinear interpolation.

    Target centers are mapped to source continuous voxel coordinates; samples
    outside the source's center range clamp to the nearest source voxel
    (clamp-to-edge, no zero fill). Accumulation runs in float64; the result
    keeps the source dtype. Exact on constant and linear fields.
    """
    src = v.data.astype(np.float64)
    lows = []
    highs = []
    fracs = []
    for axis in range(3):
        n = v.grid.dims[axis]
        world = target.origin[axis] + np.arange(target.dims[axis]) * target.spacing[axis]
        u = (world - v.grid.origin[axis]) / v.grid.spacing[axis]
        u = np.clip(u, 0.0, n - 1.0)
        i0 = np.clip(np.floor(u).astype(np.intp), 0, max(n - 2, 0))
        i1 = np.minimum(i0 + 1, n - 1)
        lows.append(i0)
        highs.append(i1)
        fracs.append(u - i0)
    out = np.zeros(target.dims, dtype=np.float64)
    for cx, wx in ((lows[0], 1.0 - fracs[0]), (highs[0], fracs[0])):
        for cy, wy in ((lows[1], 1.0 - fracs[1]), (highs[1], fracs[1])):
            for cz, wz in ((lows[2], 1.0 - fracs[2]), (highs[2], fracs[2])):
                w = wx[:, None, None] * wy[None, :, None] * wz[None, None, :]
                out += w * src[np.ix_(cx, cy, cz)]
    return Volume(target, out.astype(v.data.dtype))


def grid_covering_extent(ref: GridSpec, dims) -> GridSpec:
    """A grid with the given dims covering exactly ``ref``'s world bounding box."""
    dims = tuple(int(d) for d in dims)
    lo, hi = ref.extent()
    spacing = (hi - lo) / np.asarray(dims)
    origin = lo + 0.5 * spacing
    return GridSpec(dims, tuple(spacing), tuple(origin))


def downsample_grid(ref: GridSpec, factor) -> GridSpec:
    """The low-resolution grid for an integer per-axis downsampling factor.

    LR spacing is ``ref.spacing * factor``. When the factor divides the dims
    the LR grid covers exactly the same world bounding box; otherwise the LR
    box is minimally larger and centered on the reference box.
    """
    if np.isscalar(factor):
        factor = (factor,) * 3
    factor = tuple(int(k) for k in factor)
    if any(k < 1 for k in factor):
        raise ValueError(f"downsampling factor must be >= 1, got {factor}")
    lo, hi = ref.extent()
    dims = tuple(-(-d // k) for d, k in zip(ref.dims, factor))  # ceil division
    spacing = tuple(s * k for s, k in zip(ref.spacing, factor))
    size_ref = hi - lo
    size_lr = np.asarray(dims) * np.asarray(spacing)
    origin = lo + 0.5 * (size_ref - size_lr) + 0.5 * np.asarray(spacing)
    return GridSpec(dims, spacing, tuple(origin))


def ensure_unit_range(v: Volume) -> Volume:
    """Pass through volumes already in [0,1]; min-max normalize otherwise.

    Keeps properly scaled pipeline products (phantoms, degraded volumes)
    bit-stable instead of stretching them again.
    """
    if float(v.data.min()) >= 0.0 and float(v.data.max()) <= 1.0:
        return v
    return normalize_intensity(v)


def _infer_format(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".json":
        return "raw_json"
    if ext == ".nii":
        return "nifti1"
    raise FormatError(f"cannot infer volume format from extension {ext!r}; pass format=")


def save_volume(v: Volume, path: str, format: str | None = None) -> None:
    """Write a volume as raw_json (JSON metadata + .bin float32) or NIfTI-1."""
    fmt = format or _infer_format(path)
    if fmt == "raw_json":
        _save_raw_json(v, path)
    elif fmt == "nifti1":
        from .nifti import save_nifti

        save_nifti(v, path)
    else:
        raise FormatError(f"unknown volume format {fmt!r}")


def load_volume(path: str, format: str | None = None) -> Volume:
    """Read a volume saved by :func:`save_volume`."""
    fmt = format or _infer_format(path)
    if fmt == "raw_json":
        return _load_raw_json(path)
    if fmt == "nifti1":
        from .nifti import load_nifti

        return load_nifti(path)
    raise FormatError(f"unknown volume format {fmt!r}")


def _save_raw_json(v: Volume, path: str) -> None:
    stem = os.path.splitext(os.path.basename(path))[0]
    data_file = stem + ".bin"
    meta = {
        "dims": list(v.grid.dims),
        "spacing": list(v.grid.spacing),
        "origin": list(v.grid.origin),
        "dtype": RAW_JSON_DTYPE,
        "data_file": data_file,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    flat = v.linear().astype("<f4")
    flat.tofile(os.path.join(os.path.dirname(path) or ".", data_file))


def _load_raw_json(path: str) -> Volume:
    try:
        with open(path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("dims", "spacing", "origin", "dtype", "data_file"):
        if key not in meta:
            raise FormatError(f"{path}: missing required key {key!r}")
    if meta["dtype"] != RAW_JSON_DTYPE:
        raise FormatError(f"{path}: unsupported dtype {meta['dtype']!r} (only f32)")
    grid = GridSpec(tuple(meta["dims"]), tuple(meta["spacing"]), tuple(meta["origin"]))
    bin_path = os.path.join(os.path.dirname(path) or ".", meta["data_file"])
    flat = np.fromfile(bin_path, dtype="<f4")
    if flat.size != grid.num_voxels:
        raise FormatError(
            f"{bin_path}: has {flat.size} float32 values, dims {grid.dims} "
            f"require {grid.num_voxels}"
        )
    return Volume.from_linear(grid, flat)
