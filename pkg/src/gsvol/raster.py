"""Brick-based order-independent rasterizer.

The grid is partitioned into uniform bricks (default 8x8x4 voxels; edge
bricks may be partial). Binning is conservative: a Gaussian lands in every
brick whose voxel region's AABB (expanded by half a voxel, cell-centered)
overlaps the AABB of its cutoff_sigma ellipsoid. Bricks are independent work
units in both directions:

  forward:  each brick accumulates S(p) = sum A_i w_i and W(p) = sum w_i for
            its own voxels only — no thread ever writes a voxel it does not
            own — then I = S/W above the epsilon_w floor.
  backward: each (brick, Gaussian) pair accumulates its private partial
            gradients over the brick's voxels; a deterministic merge then
            sums each Gaussian's partials in ascending brick order.

Because every write target is owned by exactly one loop iteration and the
merge order is fixed, results are bit-identical for any worker count. The
backward pass recomputes weights from the parameters and needs only the
cached W and I per voxel plus the per-pair partial buffers — there are no
per-voxel contributor lists.

Gradient algebra: with common(p) = dL/dI(p) * (A_i - I(p)) / W(p),

  dL/dA_i       = sum_p dL/dI * w_i/W                (then * A(1-A) for raw)
  dL/dr_i       = sum_p common * exp(-d^2/2)         (then * r(1-r) for raw)
  dL/dmu_i      = sum_p common * w_i * Sigma^{-1} delta
  covariance    : G_i = sum_p common * (-w_i/2) * delta delta^T, then
                  dL/dls_k = -2 exp(-2 ls_k) * (R_:k^T G R_:k)
                  dL/dq_j  = 2 tr(G * dR/dq_j * D * R^T)

Quaternion gradients live in the 4-d ambient space (the kernels apply the
rotation formula to the stored quaternion verbatim); the optimizer
renormalizes after each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _numba_env  # noqa: F401  (must precede the numba import)
import numba
from numba import njit, prange

from .errors import NumericalError, StaleIndexError
from .field import GaussianField, rotation_matrices
from .render import RenderOptions
from .volume import GridSpec, Volume

DEFAULT_BRICK_DIMS = (8, 8, 4)


def set_worker_count(n: int) -> None:
    """Set the number of rasterizer worker threads (1 forces serial)."""
    if n < 1:
        raise ValueError("worker count must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def worker_count() -> int:
    return numba.get_num_threads()


@dataclass(frozen=True)
class BrickIndex:
    """CSR layout of per-brick Gaussian lists.

    starts has one entry per brick plus a terminator; gids[starts[b]:starts[b+1]]
    are the Gaussians binned to brick b, ascending. Brick b covers voxels
    [bx*bdx, ...) etc. with bricks laid out x-fastest.
    """
    grid: GridSpec
    brick_dims: tuple[int, int, int]
    brick_grid: tuple[int, int, int]
    starts: np.ndarray          # (B+1,) int64
    gids: np.ndarray            # (P,) int64
    field_version: int
    field_count: int
    cutoff_sigma: float

    @property
    def brick_count(self) -> int:
        return self.brick_grid[0] * self.brick_grid[1] * self.brick_grid[2]

    @property
    def pair_count(self) -> int:
        return int(self.gids.shape[0])

    def lists_sorted(self) -> bool:
        """True when every brick's list is ascending (canonical order)."""
        g, s = self.gids, self.starts
        if g.shape[0] == 0:
            return True
        rising = np.ones(g.shape[0], dtype=bool)
        rising[1:] = g[1:] > g[:-1]
        bounds = s[1:-1]
        rising[bounds[bounds < g.shape[0]]] = True  # lists may restart at boundaries
        return bool(rising.all())

    def canonicalized(self) -> "BrickIndex":
        """Return an index with every brick list sorted ascending."""
        if self.lists_sorted():
            return self
        gids = self.gids.copy()
        for b in range(self.brick_count):
            s, e = self.starts[b], self.starts[b + 1]
            gids[s:e] = np.sort(gids[s:e])
        return BrickIndex(self.grid, self.brick_dims, self.brick_grid,
                          self.starts, gids, self.field_version,
                          self.field_count, self.cutoff_sigma)


@dataclass(frozen=True)
class RenderCache:
    """Forward-pass products: per-voxel numerator, denominator, and render."""
    grid: GridSpec
    S: np.ndarray   # (V,) linear, x-fastest
    W: np.ndarray
    I: np.ndarray
    field_version: int

    def volume(self) -> Volume:
        return Volume.from_linear(self.grid, self.I)


@dataclass
class GradientBuffer:
    """Per-Gaussian partials, matching GaussianField's parameter layout."""
    raw_amplitude: np.ndarray   # (N,)
    raw_relax: np.ndarray       # (N,)
    positions: np.ndarray       # (N,3)
    log_scales: np.ndarray      # (N,3)
    rotations: np.ndarray       # (N,4)

    @classmethod
    def zeros(cls, n: int) -> "GradientBuffer":
        return cls(np.zeros(n), np.zeros(n), np.zeros((n, 3)),
                   np.zeros((n, 3)), np.zeros((n, 4)))

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in
                   (self.raw_amplitude, self.raw_relax, self.positions,
                    self.log_scales, self.rotations))


def build_brick_index(f: GaussianField, grid: GridSpec,
                      opts: RenderOptions = RenderOptions(),
                      brick_dims: tuple[int, int, int] = DEFAULT_BRICK_DIMS) -> BrickIndex:
    """Conservative Gaussian-to-brick binning via AABB overlap.

    Half-extent of Gaussian i along world axis k is cutoff_sigma*sqrt(Sigma_kk);
    the voxel range it can touch follows from cell-centered voxel extents, and
    bricks are derived by integer division. False positives are possible
    (AABB vs AABB), false negatives are not.
    """
    if any(d < 1 for d in brick_dims):
        raise ValueError(f"brick_dims must be positive, got {brick_dims}")
    n = f.count
    dims = np.asarray(grid.dims, dtype=np.int64)
    bdims = np.asarray(brick_dims, dtype=np.int64)
    bgrid = -(-dims // bdims)  # ceil division
    nbricks = int(bgrid.prod())

    if math.isinf(opts.cutoff_sigma):
        # Untruncated kernels touch everything: every Gaussian in every brick.
        gids = np.tile(np.arange(n, dtype=np.int64), nbricks)
        starts = np.arange(nbricks + 1, dtype=np.int64) * n
        return BrickIndex(grid, tuple(brick_dims), tuple(int(b) for b in bgrid),
                          starts, gids, f.version, n, opts.cutoff_sigma)

    # Per-axis marginal variance Sigma_kk = sum_m R[k,m]^2 s_m^2.
    rot = rotation_matrices(f.rotations)
    var = np.exp(2.0 * f.log_scales)
    sigma_kk = np.einsum("nkm,nm->nk", rot * rot, var)
    half = opts.cutoff_sigma * np.sqrt(sigma_kk)

    origin = np.asarray(grid.origin)
    spacing = np.asarray(grid.spacing)
    glo = (f.positions - half - origin) / spacing
    ghi = (f.positions + half - origin) / spacing
    vlo = np.ceil(glo - 0.5).astype(np.int64)
    vhi = np.floor(ghi + 0.5).astype(np.int64)
    np.clip(vlo, 0, dims - 1, out=vlo)
    np.clip(vhi, 0, dims - 1, out=vhi)
    inside = np.all((ghi >= -0.5) & (glo <= dims - 0.5), axis=1)

    blo = vlo // bdims
    bhi = vhi // bdims
    nb = np.where(inside[:, None], bhi - blo + 1, 0)
    counts = nb.prod(axis=1)
    total = int(counts.sum())
    if total == 0:
        starts = np.zeros(nbricks + 1, dtype=np.int64)
        return BrickIndex(grid, tuple(brick_dims), tuple(int(b) for b in bgrid),
                          starts, np.empty(0, dtype=np.int64), f.version, n,
                          opts.cutoff_sigma)

    gid = np.repeat(np.arange(n, dtype=np.int64), counts)
    block_start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    offset = np.arange(total, dtype=np.int64) - np.repeat(block_start, counts)
    nbx = np.repeat(nb[:, 0], counts)
    nby = np.repeat(nb[:, 1], counts)
    bx = np.repeat(blo[:, 0], counts) + offset % nbx
    rem = offset // nbx
    by = np.repeat(blo[:, 1], counts) + rem % nby
    bz = np.repeat(blo[:, 2], counts) + rem // nby
    bid = bx + bgrid[0] * (by + bgrid[1] * bz)

    # Stable sort by brick keeps gids ascending within each brick.
    order = np.argsort(bid, kind="stable")
    gids = gid[order]
    starts = np.zeros(nbricks + 1, dtype=np.int64)
    np.cumsum(np.bincount(bid[order], minlength=nbricks), out=starts[1:])
    return BrickIndex(grid, tuple(brick_dims), tuple(int(b) for b in bgrid),
                      starts, gids, f.version, n, opts.cutoff_sigma)


def _check_index(f: GaussianField, grid: GridSpec, idx: BrickIndex,
                 opts: RenderOptions) -> None:
    if idx.field_version != f.version or idx.field_count != f.count:
        raise StaleIndexError(
            f"rebuild brick index: built for field version {idx.field_version}, "
            f"field is at version {f.version}"
        )
    if idx.grid != grid:
        raise StaleIndexError("rebuild brick index: grid changed")
    if idx.cutoff_sigma != opts.cutoff_sigma:
        raise StaleIndexError("rebuild brick index: cutoff_sigma changed")


def _whitening_factors(f: GaussianField) -> np.ndarray:
    """Per-Gaussian L = diag(1/s) R^T, so that d^2 = |L (p - mu)|^2."""
    rot = rotation_matrices(f.rotations)
    inv_s = np.exp(-f.log_scales)
    return inv_s[:, :, None] * rot.transpose(0, 2, 1)


@njit(cache=True, parallel=True)
def _forward_kernel(positions, lfac, amp, relax, starts, gids,
                    bgx, bgy, bgz, bdx, bdy, bdz,
                    nx, ny, nz, ox, oy, oz, sx, sy, sz,
                    cutoff2, eps_w, S, W, I):
    nbricks = bgx * bgy * bgz
    for b in prange(nbricks):
        bx = b % bgx
        rem = b // bgx
        by = rem % bgy
        bz = rem // bgy
        x0 = bx * bdx
        y0 = by * bdy
        z0 = bz * bdz
        x1 = min(x0 + bdx, nx)
        y1 = min(y0 + bdy, ny)
        z1 = min(z0 + bdz, nz)
        for j in range(starts[b], starts[b + 1]):
            i = gids[j]
            mx, my, mz = positions[i, 0], positions[i, 1], positions[i, 2]
            l00, l01, l02 = lfac[i, 0, 0], lfac[i, 0, 1], lfac[i, 0, 2]
            l10, l11, l12 = lfac[i, 1, 0], lfac[i, 1, 1], lfac[i, 1, 2]
            l20, l21, l22 = lfac[i, 2, 0], lfac[i, 2, 1], lfac[i, 2, 2]
            ai = amp[i]
            ri = relax[i]
            for iz in range(z0, z1):
                pz = oz + iz * sz
                dz = pz - mz
                for iy in range(y0, y1):
                    py = oy + iy * sy
                    dy = py - my
                    base = nx * (iy + ny * iz)
                    for ix in range(x0, x1):
                        px = ox + ix * sx
                        dx = px - mx
                        v0 = l00 * dx + l01 * dy + l02 * dz
                        v1 = l10 * dx + l11 * dy + l12 * dz
                        v2 = l20 * dx + l21 * dy + l22 * dz
                        d2 = v0 * v0 + v1 * v1 + v2 * v2
                        if d2 <= cutoff2:
                            w = math.exp(-0.5 * d2) * ri
                            lin = base + ix
                            S[lin] += ai * w
                            W[lin] += w
        # Normalize this brick's voxels (each voxel belongs to one brick).
        for iz in range(z0, z1):
            for iy in range(y0, y1):
                base = nx * (iy + ny * iz)
                for ix in range(x0, x1):
                    lin = base + ix
                    if W[lin] >= eps_w:
                        I[lin] = S[lin] / W[lin]
                    else:
                        I[lin] = 0.0


def forward(f: GaussianField, grid: GridSpec, idx: BrickIndex,
            opts: RenderOptions = RenderOptions()) -> RenderCache:
    """Brick-parallel render; equals render_naive up to accumulation noise."""
    _check_index(f, grid, idx, opts)
    if opts.deterministic:
        idx = idx.canonicalized()
    dt = opts.dtype
    nx, ny, nz = grid.dims
    nvox = nx * ny * nz
    S = np.zeros(nvox, dtype=dt)
    W = np.zeros(nvox, dtype=dt)
    I = np.zeros(nvox, dtype=dt)
    _forward_kernel(
        f.positions, _whitening_factors(f),
        f.activated_amplitude(), f.activated_relax(),
        idx.starts, idx.gids,
        idx.brick_grid[0], idx.brick_grid[1], idx.brick_grid[2],
        idx.brick_dims[0], idx.brick_dims[1], idx.brick_dims[2],
        nx, ny, nz,
        grid.origin[0], grid.origin[1], grid.origin[2],
        grid.spacing[0], grid.spacing[1], grid.spacing[2],
        opts.cutoff_sq, opts.epsilon_w, S, W, I,
    )
    return RenderCache(grid, S, W, I, f.version)


@njit(cache=True, parallel=True)
def _backward_kernel(positions, lfac, amp, relax, starts, gids,
                     bgx, bgy, bgz, bdx, bdy, bdz,
                     nx, ny, nz, ox, oy, oz, sx, sy, sz,
                     cutoff2, eps_w, W, I, dLdI,
                     pg_amp, pg_rel, pg_mu, pg_cov):
    nbricks = bgx * bgy * bgz
    for b in prange(nbricks):
        bx = b % bgx
        rem = b // bgx
        by = rem % bgy
        bz = rem // bgy
        x0 = bx * bdx
        y0 = by * bdy
        z0 = bz * bdz
        x1 = min(x0 + bdx, nx)
        y1 = min(y0 + bdy, ny)
        z1 = min(z0 + bdz, nz)
        for j in range(starts[b], starts[b + 1]):
            i = gids[j]
            mx, my, mz = positions[i, 0], positions[i, 1], positions[i, 2]
            l00, l01, l02 = lfac[i, 0, 0], lfac[i, 0, 1], lfac[i, 0, 2]
            l10, l11, l12 = lfac[i, 1, 0], lfac[i, 1, 1], lfac[i, 1, 2]
            l20, l21, l22 = lfac[i, 2, 0], lfac[i, 2, 1], lfac[i, 2, 2]
            ai = amp[i]
            ri = relax[i]
            acc_a = 0.0
            acc_r = 0.0
            mu0 = 0.0
            mu1 = 0.0
            mu2 = 0.0
            g00 = 0.0
            g11 = 0.0
            g22 = 0.0
            g01 = 0.0
            g02 = 0.0
            g12 = 0.0
            for iz in range(z0, z1):
                pz = oz + iz * sz
                dz = pz - mz
                for iy in range(y0, y1):
                    py = oy + iy * sy
                    dy = py - my
                    base = nx * (iy + ny * iz)
                    for ix in range(x0, x1):
                        lin = base + ix
                        wp = W[lin]
                        if wp < eps_w:
                            continue
                        dl = dLdI[lin]
                        if dl == 0.0:
                            continue
                        px = ox + ix * sx
                        dx = px - mx
                        v0 = l00 * dx + l01 * dy + l02 * dz
                        v1 = l10 * dx + l11 * dy + l12 * dz
                        v2 = l20 * dx + l21 * dy + l22 * dz
                        d2 = v0 * v0 + v1 * v1 + v2 * v2
                        if d2 > cutoff2:
                            continue
                        kern = math.exp(-0.5 * d2)
                        w = kern * ri
                        acc_a += dl * w / wp
                        common = dl * (ai - I[lin]) / wp
                        acc_r += common * kern
                        cw = common * w
                        # Sigma^{-1} delta = L^T (L delta)
                        mu0 += cw * (l00 * v0 + l10 * v1 + l20 * v2)
                        mu1 += cw * (l01 * v0 + l11 * v1 + l21 * v2)
                        mu2 += cw * (l02 * v0 + l12 * v1 + l22 * v2)
                        h = -0.5 * cw
                        g00 += h * dx * dx
                        g11 += h * dy * dy
                        g22 += h * dz * dz
                        g01 += h * dx * dy
                        g02 += h * dx * dz
                        g12 += h * dy * dz
            pg_amp[j] = acc_a
            pg_rel[j] = acc_r
            pg_mu[j, 0] = mu0
            pg_mu[j, 1] = mu1
            pg_mu[j, 2] = mu2
            pg_cov[j, 0] = g00
            pg_cov[j, 1] = g11
            pg_cov[j, 2] = g22
            pg_cov[j, 3] = g01
            pg_cov[j, 4] = g02
            pg_cov[j, 5] = g12


@njit(cache=True, parallel=True)
def _merge_pairs_kernel(gstarts, porder, pg_amp, pg_rel, pg_mu, pg_cov,
                        out_amp, out_rel, out_mu, out_cov):
    n = gstarts.shape[0] - 1
    for i in prange(n):
        a = 0.0
        r = 0.0
        m0 = 0.0
        m1 = 0.0
        m2 = 0.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        c3 = 0.0
        c4 = 0.0
        c5 = 0.0
        for t in range(gstarts[i], gstarts[i + 1]):
            j = porder[t]
            a += pg_amp[j]
            r += pg_rel[j]
            m0 += pg_mu[j, 0]
            m1 += pg_mu[j, 1]
            m2 += pg_mu[j, 2]
            c0 += pg_cov[j, 0]
            c1 += pg_cov[j, 1]
            c2 += pg_cov[j, 2]
            c3 += pg_cov[j, 3]
            c4 += pg_cov[j, 4]
            c5 += pg_cov[j, 5]
        out_amp[i] = a
        out_rel[i] = r
        out_mu[i, 0] = m0
        out_mu[i, 1] = m1
        out_mu[i, 2] = m2
        out_cov[i, 0] = c0
        out_cov[i, 1] = c1
        out_cov[i, 2] = c2
        out_cov[i, 3] = c3
        out_cov[i, 4] = c4
        out_cov[i, 5] = c5


def _rotation_jacobians(quats: np.ndarray) -> np.ndarray:
    """Vectorized dR/dq, (N,4,3,3); same formulas as rotation_matrix_jacobian."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    zero = np.zeros_like(w)
    out = np.empty((quats.shape[0], 4, 3, 3), dtype=np.float64)
    out[:, 0] = 2 * np.stack([zero, -z, y, z, zero, -x, -y, x, zero],
                             axis=1).reshape(-1, 3, 3)
    out[:, 1] = 2 * np.stack([zero, y, z, y, -2 * x, -w, z, w, -2 * x],
                             axis=1).reshape(-1, 3, 3)
    out[:, 2] = 2 * np.stack([-2 * y, x, w, x, zero, z, -w, z, -2 * y],
                             axis=1).reshape(-1, 3, 3)
    out[:, 3] = 2 * np.stack([-2 * z, -w, x, w, -2 * z, y, x, y, zero],
                             axis=1).reshape(-1, 3, 3)
    return out


def backward(f: GaussianField, grid: GridSpec, idx: BrickIndex,
             cache: RenderCache, dL_dI: np.ndarray,
             opts: RenderOptions = RenderOptions()) -> GradientBuffer:
    """Analytic gradients of a scalar loss through the normalized render.

    dL_dI is the per-voxel upstream gradient, linear x-fastest layout.
    Gradients are w.r.t. the raw (stored) parameters: sigmoid chains for
    amplitude/relaxation are applied here, quaternion gradients are ambient.
    """
    _check_index(f, grid, idx, opts)
    if cache.field_version != f.version:
        raise StaleIndexError("rebuild brick index: cache is stale")
    if opts.deterministic:
        idx = idx.canonicalized()
    dl = np.ascontiguousarray(dL_dI, dtype=np.float64).ravel()
    nvox = grid.dims[0] * grid.dims[1] * grid.dims[2]
    if dl.shape[0] != nvox:
        raise ValueError(f"dL_dI has {dl.shape[0]} entries, grid has {nvox} voxels")
    bad = np.flatnonzero(~np.isfinite(dl))
    if bad.size:
        raise NumericalError(f"non-finite dL_dI at voxel index {int(bad[0])}")

    n = f.count
    p = idx.pair_count
    pg_amp = np.zeros(p)
    pg_rel = np.zeros(p)
    pg_mu = np.zeros((p, 3))
    pg_cov = np.zeros((p, 6))
    nx, ny, nz = grid.dims
    _backward_kernel(
        f.positions, _whitening_factors(f),
        f.activated_amplitude(), f.activated_relax(),
        idx.starts, idx.gids,
        idx.brick_grid[0], idx.brick_grid[1], idx.brick_grid[2],
        idx.brick_dims[0], idx.brick_dims[1], idx.brick_dims[2],
        nx, ny, nz,
        grid.origin[0], grid.origin[1], grid.origin[2],
        grid.spacing[0], grid.spacing[1], grid.spacing[2],
        opts.cutoff_sq, opts.epsilon_w, cache.W, cache.I, dl,
        pg_amp, pg_rel, pg_mu, pg_cov,
    )

    # Deterministic pair-space merge: each Gaussian's partials in ascending
    # brick order (stable sort of the brick-ordered pair list by gid).
    porder = np.argsort(idx.gids, kind="stable")
    gstarts = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(idx.gids, minlength=n), out=gstarts[1:])
    d_amp = np.zeros(n)
    d_rel = np.zeros(n)
    d_mu = np.zeros((n, 3))
    d_cov = np.zeros((n, 6))
    _merge_pairs_kernel(gstarts, porder, pg_amp, pg_rel, pg_mu, pg_cov,
                        d_amp, d_rel, d_mu, d_cov)

    # Chain rules, vectorized over Gaussians.
    g = np.empty((n, 3, 3))
    g[:, 0, 0] = d_cov[:, 0]
    g[:, 1, 1] = d_cov[:, 1]
    g[:, 2, 2] = d_cov[:, 2]
    g[:, 0, 1] = g[:, 1, 0] = d_cov[:, 3]
    g[:, 0, 2] = g[:, 2, 0] = d_cov[:, 4]
    g[:, 1, 2] = g[:, 2, 1] = d_cov[:, 5]
    rot = rotation_matrices(f.rotations)
    inv_var = np.exp(-2.0 * f.log_scales)
    # dls_k = -2 d_k R_:k^T G R_:k
    rgr = np.einsum("nak,nab,nbk->nk", rot, g, rot)
    d_ls = -2.0 * inv_var * rgr
    # dq_j = 2 tr(G dR_j D R^T)
    jac = _rotation_jacobians(f.rotations)
    pmat = np.einsum("njam,nm,ncm->njac", jac, inv_var, rot)
    d_q = 2.0 * np.einsum("nac,njca->nj", g, pmat)

    a = f.activated_amplitude()
    d_raw_amp = d_amp * a * (1.0 - a)
    if f.relax_enabled:
        r = f.activated_relax()
        d_raw_rel = d_rel * r * (1.0 - r)
    else:
        d_raw_rel = np.zeros(n)
    return GradientBuffer(d_raw_amp, d_raw_rel, d_mu, d_ls, d_q)


def merge_gradients(partials) -> GradientBuffer:
    """Sum per-brick GradientBuffers in ascending brick-index order.

    partials: iterable of (brick_index, GradientBuffer). The internal
    backward pass uses the equivalent pair-space merge; this entry point
    makes the reduction contract directly testable.
    """
    items = sorted(partials, key=lambda kv: kv[0])
    if not items:
        raise ValueError("no partials to merge")
    n = items[0][1].raw_amplitude.shape[0]
    out = GradientBuffer.zeros(n)
    for _, buf in items:
        out.raw_amplitude += buf.raw_amplitude
        out.raw_relax += buf.raw_relax
        out.positions += buf.positions
        out.log_scales += buf.log_scales
        out.rotations += buf.rotations
    return out
