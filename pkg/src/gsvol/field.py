"""Explicit anisotropic Gaussian field.

Each of the N Gaussians carries 12 learnable values: position (3), log of the
per-axis standard deviations (3), a unit quaternion (4, scalar-first w,x,y,z),
and two pre-activation scalars for amplitude and the relaxation proxy. The
activations are sigmoids, so A and r always live in (0,1); covariance is
assembled as R diag(s^2) R^T and is SPD whenever the scales are positive.

Master storage is float64; kernels downcast when running in f32 mode. The
field carries a mutation counter so that acceleration structures built
against it (brick indices) can detect staleness.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .errors import FormatError
from .volume import GridSpec, Volume

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)

_GSV1_MAGIC = b"GSV1"
_GSV1_RECORD = 12 * 4  # 12 float32 values per Gaussian
_FLAG_AMPLITUDE = 1
_FLAG_RELAX = 2


class GaussianField:
    """Mutable parameter container for the Gaussian mixture.

    Arrays are float64, C-contiguous, and owned by the field. The optimizer
    mutates them in place and then calls ``bump_version()``; everything else
    treats the field as read-only.
    """

    def __init__(self, positions, log_scales, rotations, raw_amplitude,
                 raw_relax, amplitude_enabled: bool = True,
                 relax_enabled: bool = True):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64)
        self.raw_amplitude = np.ascontiguousarray(raw_amplitude, dtype=np.float64)
        self.raw_relax = np.ascontiguousarray(raw_relax, dtype=np.float64)
        n = self.positions.shape[0]
        if self.positions.shape != (n, 3):
            raise ValueError(f"positions must be (N,3), got {self.positions.shape}")
        if self.log_scales.shape != (n, 3):
            raise ValueError(f"log_scales must be (N,3), got {self.log_scales.shape}")
        if self.rotations.shape != (n, 4):
            raise ValueError(f"rotations must be (N,4), got {self.rotations.shape}")
        if self.raw_amplitude.shape != (n,):
            raise ValueError(f"raw_amplitude must be (N,), got {self.raw_amplitude.shape}")
        if self.raw_relax.shape != (n,):
            raise ValueError(f"raw_relax must be (N,), got {self.raw_relax.shape}")
        if n == 0:
            raise ValueError("field must contain at least one Gaussian")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero-norm quaternion")
        # Renormalize only when actually off-unit: loaded float32 fields sit
        # within 1e-6 of unit norm already, and leaving them untouched keeps
        # the save/load round trip bit-exact.
        if np.any(np.abs(norms - 1.0) > 1e-6):
            self.rotations /= norms[:, None]
        self.amplitude_enabled = bool(amplitude_enabled)
        self.relax_enabled = bool(relax_enabled)
        self._version = 0

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def version(self) -> int:
        return self._version

    def bump_version(self) -> None:
        """Mark the field as mutated; invalidates existing brick indices."""
        self._version += 1

    def activated_amplitude(self) -> np.ndarray:
        """A_i = sigmoid(raw_amplitude_i) in (0,1)."""
        return expit(self.raw_amplitude)

    def activated_relax(self) -> np.ndarray:
        """r_i = sigmoid(raw_relax_i), or all-ones when the proxy is disabled."""
        if not self.relax_enabled:
            return np.ones(self.count, dtype=np.float64)
        return expit(self.raw_relax)

    def scales(self) -> np.ndarray:
        """Per-axis standard deviations (world units), always positive."""
        return np.exp(self.log_scales)

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1)[:, None]
        self._version += 1

    def copy(self) -> "GaussianField":
        f = GaussianField(self.positions.copy(), self.log_scales.copy(),
                          self.rotations.copy(), self.raw_amplitude.copy(),
                          self.raw_relax.copy(), self.amplitude_enabled,
                          self.relax_enabled)
        return f


@dataclass(frozen=True)
class CovarianceFactors:
    """Scale/rotation factorization of one covariance: Sigma = R diag(s^2) R^T."""
    scale: tuple[float, float, float]
    rotation: tuple[float, float, float, float]


def quat_multiply(p, q) -> np.ndarray:
    """Hamilton product p*q, scalar-first convention."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def rotation_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a (near-)unit quaternion (w,x,y,z)."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_matrices(quats: np.ndarray) -> np.ndarray:
    """Vectorized rotation_matrix: (N,4) -> (N,3,3)."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    out = np.empty((quats.shape[0], 3, 3), dtype=np.float64)
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def rotation_matrix_jacobian(q) -> np.ndarray:
    """dR/dq at a unit quaternion, shape (4,3,3).

    Component derivatives of the unit-quaternion rotation formula; gradients
    w.r.t. an unnormalized quaternion are obtained by composing with the
    normalization Jacobian (I - q q^T)/|q| outside.
    """
    w, x, y, z = np.asarray(q, dtype=np.float64)
    dw = 2 * np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]], dtype=np.float64)
    dx = 2 * np.array([[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]], dtype=np.float64)
    dy = 2 * np.array([[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]], dtype=np.float64)
    dz = 2 * np.array([[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]], dtype=np.float64)
    return np.stack([dw, dx, dy, dz])


def assemble_covariance(f: CovarianceFactors):
    """(Sigma, SigmaInv) from a scale/rotation factorization.

    Scales at or below 1e-8 world units are rejected as degenerate; the
    quaternion must be within 1e-3 of unit norm and is renormalized.
    """
    s = np.asarray(f.scale, dtype=np.float64)
    if np.any(s <= 1e-8):
        raise ValueError(f"degenerate scale {tuple(s)}; all scales must exceed 1e-8")
    q = np.asarray(f.rotation, dtype=np.float64)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-3:
        raise ValueError(f"quaternion norm {norm:.6f} out of tolerance (|n-1| > 1e-3)")
    r = rotation_matrix(q / norm)
    sigma = r @ np.diag(s * s) @ r.T
    sigma_inv = r @ np.diag(1.0 / (s * s)) @ r.T
    return sigma, sigma_inv


@dataclass(frozen=True)
class InitConfig:
    """Initialization knobs for seeding a field from a low-res volume.

    background_threshold drops voxels darker than the threshold (air), one
    Gaussian is placed per surviving voxel; scale_factor sets the initial
    std dev as a fraction of the voxel spacing; relax_init seeds r near 1.
    """
    background_threshold: float = 0.01
    scale_factor: float = 0.75
    relax_init: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.background_threshold < 1.0:
            raise ValueError("background_threshold must lie in [0,1)")
        if self.scale_factor <= 0:
            raise ValueError("scale_factor must be positive")
        if not 0.0 < self.relax_init < 1.0:
            raise ValueError("relax_init must lie in (0,1)")


def init_from_volume(lr: Volume, cfg: InitConfig = InitConfig()) -> GaussianField:
    """One Gaussian per above-threshold LR voxel.

    Positions at voxel world centers, isotropic scales of
    scale_factor * spacing, identity rotations, amplitude seeded at the voxel
    intensity (through the logit so sigmoid(raw_A) reproduces it).
    """
    data = np.asarray(lr.data, dtype=np.float64)
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueError("LR volume must be normalized to [0,1] before init")
    mask = data >= cfg.background_threshold
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty field; lower background_threshold")
    vox = np.argwhere(mask).astype(np.float64)
    spacing = np.asarray(lr.grid.spacing)
    positions = np.asarray(lr.grid.origin) + vox * spacing
    log_scales = np.tile(np.log(cfg.scale_factor * spacing), (n, 1))
    rotations = np.tile(np.asarray(IDENTITY_QUAT), (n, 1))
    intensity = np.clip(data[mask], 1e-4, 1.0 - 1e-4)
    raw_amplitude = logit(intensity)
    raw_relax = np.full(n, logit(cfg.relax_init))
    return GaussianField(positions, log_scales, rotations, raw_amplitude, raw_relax)


def random_field(n: int, grid: GridSpec, seed: int,
                 scale_lo: float = 0.7, scale_hi: float = 1.6) -> GaussianField:
    """Seeded random field spread over a grid's extent (tests and benchmarks).

    Scales are log-uniform multiples of the mean voxel spacing, rotations
    uniform on the unit sphere in quaternion space, raw amplitudes and
    relaxations standard normal. The lower scale bound keeps kernels wide
    enough that central differences at h=1e-3 stay second-order accurate;
    pass a smaller ``scale_lo`` for sharper stress fields.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = grid.extent()
    lo = np.asarray(lo)
    size = np.asarray(hi) - lo
    positions = lo + size * rng.uniform(0.05, 0.95, size=(n, 3))
    mean_sp = float(np.mean(grid.spacing))
    scales = mean_sp * np.exp(rng.uniform(np.log(scale_lo), np.log(scale_hi), size=(n, 3)))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1)[:, None]
    return GaussianField(positions, np.log(scales), quats,
                         rng.normal(size=n), rng.normal(size=n))


def save_field(f: GaussianField, path: str) -> None:
    """GSV1 container: magic, u64 count, u32 flags, then N x 12 float32 LE."""
    flags = 0
    if f.amplitude_enabled:
        flags |= _FLAG_AMPLITUDE
    if f.relax_enabled:
        flags |= _FLAG_RELAX
    records = np.empty((f.count, 12), dtype="<f4")
    records[:, 0:3] = f.positions
    records[:, 3:6] = f.log_scales
    records[:, 6:10] = f.rotations
    records[:, 10] = f.raw_amplitude
    records[:, 11] = f.raw_relax
    with open(path, "wb") as fh:
        fh.write(_GSV1_MAGIC)
        fh.write(struct.pack("<QI", f.count, flags))
        fh.write(records.tobytes())


def load_field(path: str) -> GaussianField:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _GSV1_MAGIC:
        raise FormatError(
            f"{path}: bad magic {blob[:4]!r} at offset 0, expected b'GSV1'"
        )
    if len(blob) < 16:
        raise FormatError(f"{path}: header truncated at offset {len(blob)} (need 16 bytes)")
    n, flags = struct.unpack_from("<QI", blob, 4)
    if n == 0:
        raise FormatError(f"{path}: header declares zero Gaussians at offset 4")
    if flags & ~(_FLAG_AMPLITUDE | _FLAG_RELAX):
        raise FormatError(f"{path}: unknown flag bits 0x{flags:x} at offset 12")
    expected = 16 + n * _GSV1_RECORD
    if len(blob) < expected:
        got = (len(blob) - 16) // _GSV1_RECORD
        raise FormatError(
            f"{path}: truncated at offset {len(blob)}: header declares {n} records "
            f"({expected} bytes total), only {got} complete records present"
        )
    records = np.frombuffer(blob, dtype="<f4", count=n * 12, offset=16)
    records = records.reshape(n, 12).astype(np.float64)
    return GaussianField(
        positions=records[:, 0:3],
        log_scales=records[:, 3:6],
        rotations=records[:, 6:10],
        raw_amplitude=records[:, 10],
        raw_relax=records[:, 11],
        amplitude_enabled=bool(flags & _FLAG_AMPLITUDE),
        relax_enabled=bool(flags & _FLAG_RELAX),
    )
