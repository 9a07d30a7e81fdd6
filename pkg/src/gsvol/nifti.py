"""Minimal single-file NIfTI-1 reader/writer.

Covers the subset needed for scalar volumes: magic ``n+1`` (.nii with inline
data), datatypes uint8/int16/float32, and qform/sform limited to identity or
diagonal affines. Anything else is rejected with an error naming the field.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .volume import GridSpec, Volume

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"

# NIfTI-1 datatype codes we accept.
_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
}
_DTYPE_NAMES = {
    0: "unknown", 1: "binary", 2: "uint8", 4: "int16", 8: "int32", 16: "float32",
    32: "complex64", 64: "float64", 128: "rgb24", 256: "int8", 512: "uint16",
    768: "uint32", 1024: "int64", 1280: "uint64", 1536: "float128",
    1792: "complex128", 2048: "complex256", 2304: "rgba32",
}

_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_QFORM_CODE = 252
_OFF_SFORM_CODE = 254
_OFF_QUATERN = 256
_OFF_QOFFSET = 268
_OFF_SROW = 280
_OFF_MAGIC = 344


def _unpack(header: bytes, byteorder: str):
    def u(fmt, off):
        return struct.unpack_from(byteorder + fmt, header, off)

    return {
        "dim": u("8h", _OFF_DIM),
        "datatype": u("h", _OFF_DATATYPE)[0],
        "pixdim": u("8f", _OFF_PIXDIM),
        "vox_offset": u("f", _OFF_VOX_OFFSET)[0],
        "scl_slope": u("f", _OFF_SCL_SLOPE)[0],
        "scl_inter": u("f", _OFF_SCL_INTER)[0],
        "qform_code": u("h", _OFF_QFORM_CODE)[0],
        "sform_code": u("h", _OFF_SFORM_CODE)[0],
        "quatern": u("3f", _OFF_QUATERN),
        "qoffset": u("3f", _OFF_QOFFSET),
        "srow": np.array([u("4f", _OFF_SROW + 16 * r) for r in range(3)]),
        "magic": u("4s", _OFF_MAGIC)[0],
    }


def _diagonal_affine(hdr, path: str) -> tuple[tuple, tuple]:
    """Extract (spacing, origin) from sform/qform, rejecting rotations/shears."""
    if hdr["sform_code"] > 0:
        m = hdr["srow"]
        lin = m[:, :3]
        off_diag = lin - np.diag(np.diag(lin))
        if np.max(np.abs(off_diag)) > 1e-5 * max(np.max(np.abs(lin)), 1.0):
            raise FormatError(f"{path}: non-diagonal sform affine (srow_x/y/z)")
        diag = np.diag(lin)
        if np.any(diag <= 0):
            raise FormatError(f"{path}: non-positive sform diagonal (srow_x/y/z)")
        return tuple(float(d) for d in diag), tuple(float(t) for t in m[:, 3])
    if hdr["qform_code"] > 0:
        b, c, d = hdr["quatern"]
        if max(abs(b), abs(c), abs(d)) > 1e-6:
            raise FormatError(
                f"{path}: non-identity qform rotation (quatern_b/c/d)"
            )
        if hdr["pixdim"][0] < 0:
            raise FormatError(f"{path}: qfac=-1 axis flip unsupported (pixdim[0])")
        spacing = tuple(float(p) if p > 0 else 1.0 for p in hdr["pixdim"][1:4])
        return spacing, tuple(float(q) for q in hdr["qoffset"])
    spacing = tuple(float(p) if p > 0 else 1.0 for p in hdr["pixdim"][1:4])
    return spacing, (0.0, 0.0, 0.0)


def load_nifti(path: str) -> Volume:
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
        if len(header) < HEADER_SIZE:
            raise FormatError(f"{path}: file shorter than the 348-byte NIfTI-1 header")
        byteorder = "<"
        (sizeof_hdr,) = struct.unpack_from("<i", header, 0)
        if sizeof_hdr != HEADER_SIZE:
            byteorder = ">"
            (sizeof_hdr,) = struct.unpack_from(">i", header, 0)
            if sizeof_hdr != HEADER_SIZE:
                raise FormatError(f"{path}: bad sizeof_hdr, not a NIfTI-1 file")
        hdr = _unpack(header, byteorder)
        if hdr["magic"] != MAGIC_SINGLE:
            raise FormatError(
                f"{path}: magic {hdr['magic']!r} unsupported (need single-file 'n+1')"
            )
        dim = hdr["dim"]
        if dim[0] < 3:
            raise FormatError(f"{path}: dim[0]={dim[0]}, need a 3D volume")
        if any(dim[k] > 1 for k in range(4, 8)):
            raise FormatError(f"{path}: dim[4:]={dim[4:8]} — 4D+ volumes unsupported")
        if hdr["datatype"] not in _DTYPES:
            name = _DTYPE_NAMES.get(hdr["datatype"], str(hdr["datatype"]))
            raise FormatError(
                f"{path}: unsupported datatype {name} (code {hdr['datatype']}); "
                "supported: uint8, int16, float32"
            )
        dims = tuple(int(dim[k]) for k in (1, 2, 3))
        spacing, origin = _diagonal_affine(hdr, path)
        dtype = _DTYPES[hdr["datatype"]].newbyteorder(byteorder)
        count = dims[0] * dims[1] * dims[2]
        fh.seek(int(hdr["vox_offset"]))
        raw = np.fromfile(fh, dtype=dtype, count=count)
        if raw.size != count:
            raise FormatError(
                f"{path}: data truncated, got {raw.size} of {count} voxels"
            )
    data = raw.astype(np.float32)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope not in (0.0, 1.0) or inter != 0.0:
        if slope == 0.0:
            slope = 1.0
        data = data * np.float32(slope) + np.float32(inter)
    grid = GridSpec(dims, spacing, origin)
    return Volume.from_linear(grid, data)


def save_nifti(v: Volume, path: str) -> None:
    """Write a float32 single-file .nii with a diagonal sform affine."""
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    nx, ny, nz = v.grid.dims
    struct.pack_into("<8h", header, _OFF_DIM, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", header, _OFF_DATATYPE, 16)  # float32
    struct.pack_into("<h", header, _OFF_BITPIX, 32)
    sx, sy, sz = v.grid.spacing
    struct.pack_into("<8f", header, _OFF_PIXDIM, 1.0, sx, sy, sz, 0, 0, 0, 0)
    struct.pack_into("<f", header, _OFF_VOX_OFFSET, 352.0)
    struct.pack_into("<f", header, _OFF_SCL_SLOPE, 1.0)
    struct.pack_into("<f", header, _OFF_SCL_INTER, 0.0)
    struct.pack_into("<h", header, _OFF_QFORM_CODE, 0)
    struct.pack_into("<h", header, _OFF_SFORM_CODE, 1)
    ox, oy, oz = v.grid.origin
    struct.pack_into("<4f", header, _OFF_SROW, sx, 0, 0, ox)
    struct.pack_into("<4f", header, _OFF_SROW + 16, 0, sy, 0, oy)
    struct.pack_into("<4f", header, _OFF_SROW + 32, 0, 0, sz, oz)
    struct.pack_into("<4s", header, _OFF_MAGIC, MAGIC_SINGLE)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\x00" * 4)  # pad to vox_offset 352
        fh.write(v.linear().astype("<f4").tobytes())
