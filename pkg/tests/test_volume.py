import numpy as np
import pytest

from gsvol.volume import (GridSpec, Volume, downsample_grid, ensure_unit_range,
                          grid_covering_extent, normalize_intensity,
                          resample_trilinear)


def test_gridspec_voxel_centers_and_extent():
    g = GridSpec((2, 3, 4), (1.0, 2.0, 0.5), (10.0, -1.0, 0.0))
    assert g.num_voxels == 24
    np.testing.assert_allclose(g.voxel_to_world((1, 1, 1)), [11.0, 1.0, 0.5])
    np.testing.assert_allclose(g.world_to_voxel([11.0, 1.0, 0.5]), [1, 1, 1])
    lo, hi = g.extent()
    np.testing.assert_allclose(lo, [9.5, -2.0, -0.25])
    np.testing.assert_allclose(hi, [11.5, 4.0, 1.75])
    centers = g.voxel_centers()
    assert centers.shape == (24, 3)
    # x-fastest: second entry advances x only
    np.testing.assert_allclose(centers[1] - centers[0], [1.0, 0.0, 0.0])


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec((0, 4, 4))
    with pytest.raises(ValueError):
        GridSpec((4, 4, 4), (1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        GridSpec((4, 4))


def test_volume_casts_and_checks_shape():
    g = GridSpec((2, 2, 2))
    v = Volume(g, np.ones((2, 2, 2), dtype=np.int32))
    assert v.data.dtype == np.float32
    v64 = Volume(g, np.ones((2, 2, 2), dtype=np.float64))
    assert v64.data.dtype == np.float64
    with pytest.raises(ValueError):
        Volume(g, np.ones((2, 2, 3)))


def test_volume_linear_round_trip_is_x_fastest():
    g = GridSpec((2, 3, 2))
    data = np.arange(12, dtype=np.float32).reshape(2, 3, 2)
    v = Volume(g, data)
    flat = v.linear()
    # voxel (1,0,0) is the second linear entry
    assert flat[1] == data[1, 0, 0]
    back = Volume.from_linear(g, flat)
    np.testing.assert_array_equal(back.data, data)


def test_from_linear_keeps_dtype():
    g = GridSpec((2, 2, 2))
    flat64 = np.linspace(0, 1, 8, dtype=np.float64)
    assert Volume.from_linear(g, flat64).data.dtype == np.float64
    assert Volume.from_linear(g, flat64, dtype=np.float32).data.dtype == np.float32


def test_normalize_intensity_affine():
    g = GridSpec((3, 1, 1))
    v = Volume(g, np.array([0.0, 5.0, 10.0], dtype=np.float32).reshape(3, 1, 1))
    out = normalize_intensity(v)
    np.testing.assert_allclose(out.data.ravel(), [0.0, 0.5, 1.0])


def test_normalize_intensity_constant_degenerate():
    g = GridSpec((3, 1, 1))
    v = Volume(g, np.full((3, 1, 1), 3.0, dtype=np.float32))
    np.testing.assert_array_equal(normalize_intensity(v).data, 0.0)


def test_normalize_intensity_random_hits_unit_range():
    g = GridSpec((8, 8, 8))
    rng = np.random.default_rng(0)
    v = Volume(g, rng.normal(50.0, 10.0, size=(8, 8, 8)))
    out = normalize_intensity(v)
    assert float(out.data.min()) == 0.0
    assert float(out.data.max()) == 1.0


def test_ensure_unit_range_passthrough_and_rescale():
    g = GridSpec((2, 2, 2))
    inside = Volume(g, np.full((2, 2, 2), 0.25, dtype=np.float32))
    assert ensure_unit_range(inside) is inside
    outside = Volume(g, np.full((2, 2, 2), 2.0, dtype=np.float32))
    assert float(ensure_unit_range(outside).data.max()) <= 1.0


def test_resample_constant_is_exact():
    g = GridSpec((4, 4, 4), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    v = Volume(g, np.full((4, 4, 4), 0.7, dtype=np.float64))
    target = GridSpec((7, 5, 3), (0.31, 0.8, 1.7), (-0.2, 0.1, 0.4))
    np.testing.assert_allclose(resample_trilinear(v, target).data, 0.7)


def test_resample_identity_grid():
    g = GridSpec((2, 2, 2))
    rng = np.random.default_rng(1)
    v = Volume(g, rng.uniform(size=(2, 2, 2)))
    np.testing.assert_allclose(resample_trilinear(v, g).data, v.data)


def test_resample_linear_ramp_exact_at_half_spacing():
    g = GridSpec((8, 4, 4), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    x = g.axis_coords(0)
    v = Volume(g, np.broadcast_to(x[:, None, None], (8, 4, 4)).astype(np.float64))
    target = GridSpec((15, 4, 4), (0.5, 1.0, 1.0), (0.0, 0.0, 0.0))
    out = resample_trilinear(v, target)
    expect = target.axis_coords(0)
    np.testing.assert_allclose(out.data[:, 2, 2], expect, atol=1e-12)


def test_resample_clamps_to_edge():
    g = GridSpec((2, 2, 2), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    v = Volume(g, np.arange(8, dtype=np.float64).reshape(2, 2, 2))
    target = GridSpec((2, 2, 2), (1.0, 1.0, 1.0), (-5.0, -5.0, -5.0))
    np.testing.assert_allclose(resample_trilinear(v, target).data, v.data[0, 0, 0])


def test_grid_covering_extent_shares_bounding_box():
    ref = GridSpec((64, 64, 64), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    lr = grid_covering_extent(ref, (32, 32, 32))
    assert lr.dims == (32, 32, 32)
    assert lr.spacing == (2.0, 2.0, 2.0)
    np.testing.assert_allclose(lr.extent()[0], ref.extent()[0])
    np.testing.assert_allclose(lr.extent()[1], ref.extent()[1])


def test_downsample_grid_exact_division():
    ref = GridSpec((64, 64, 64), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    lr = downsample_grid(ref, 2)
    assert lr.dims == (32, 32, 32)
    np.testing.assert_allclose(lr.extent()[0], ref.extent()[0])
    np.testing.assert_allclose(lr.extent()[1], ref.extent()[1])
    assert downsample_grid(ref, 1) == ref


def test_downsample_grid_ragged_is_centered():
    ref = GridSpec((7, 7, 7), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    lr = downsample_grid(ref, 2)
    assert lr.dims == (4, 4, 4)
    ref_lo, ref_hi = ref.extent()
    lr_lo, lr_hi = lr.extent()
    np.testing.assert_allclose(ref_lo - lr_lo, lr_hi - ref_hi)
    with pytest.raises(ValueError):
        downsample_grid(ref, 0)
