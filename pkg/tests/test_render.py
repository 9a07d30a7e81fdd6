import math

import numpy as np
import pytest

from gsvol.field import GaussianField, random_field
from gsvol.render import RenderOptions, render_naive, weight
from gsvol.volume import GridSpec


def _single(position, log_scale=0.0, amplitude_raw=0.0, relax_raw=20.0):
    """One isotropic Gaussian; relax_raw=20 puts r at 1 within 2e-9."""
    return GaussianField(
        np.asarray([position], dtype=np.float64),
        np.full((1, 3), log_scale),
        np.asarray([[1.0, 0.0, 0.0, 0.0]]),
        np.asarray([amplitude_raw]),
        np.asarray([relax_raw]),
    )


def test_options_validation():
    with pytest.raises(ValueError, match="cutoff_sigma"):
        RenderOptions(cutoff_sigma=0.0)
    with pytest.raises(ValueError, match="epsilon_w"):
        RenderOptions(epsilon_w=-1.0)
    with pytest.raises(ValueError, match="precision"):
        RenderOptions(precision="f16")
    assert RenderOptions(precision="f32").dtype == np.float32
    assert RenderOptions(precision="f64").dtype == np.float64
    assert RenderOptions(cutoff_sigma=3.0).cutoff_sq == 9.0


def test_weight_at_center_is_relax():
    f = _single([0.0, 0.0, 0.0])
    assert weight(f, 0, [0.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-8)


def test_weight_isotropic_unit_distance():
    # sigma=1, |p-mu|=1 -> exp(-1/2)
    f = _single([0.0, 0.0, 0.0])
    w = weight(f, 0, [1.0, 0.0, 0.0])
    assert w == pytest.approx(math.exp(-0.5), rel=1e-8)


def test_weight_truncated_to_exact_zero():
    f = _single([0.0, 0.0, 0.0])
    assert weight(f, 0, [3.5, 0.0, 0.0], RenderOptions(cutoff_sigma=3.0)) == 0.0
    # just inside the radius it is still positive
    assert weight(f, 0, [2.99, 0.0, 0.0], RenderOptions(cutoff_sigma=3.0)) > 0.0


def test_weight_scales_linearly_with_relax():
    f = _single([0.0, 0.0, 0.0])
    f.raw_relax[:] = 0.0  # r = 0.5
    w = weight(f, 0, [1.0, 0.0, 0.0])
    assert w == pytest.approx(0.5 * math.exp(-0.5), rel=1e-8)


def test_single_gaussian_renders_its_amplitude():
    # normalization makes I == A wherever the lone kernel survives truncation
    g = GridSpec((4, 4, 4))
    amp = 0.7
    f = _single([1.5, 1.5, 1.5], log_scale=0.3,
                amplitude_raw=math.log(amp / (1 - amp)))
    v = render_naive(f, g, RenderOptions(precision="f64"))
    covered = v.data > 0
    assert covered.any()
    np.testing.assert_allclose(v.data[covered], amp, atol=1e-9)


def test_constant_amplitude_field_is_flat(unit_grid):
    f = random_field(40, unit_grid, seed=21)
    f.raw_amplitude[:] = 0.8473  # sigmoid -> one shared amplitude
    amp = 1.0 / (1.0 + math.exp(-0.8473))
    v = render_naive(f, unit_grid, RenderOptions(precision="f64"))
    covered = v.data != 0.0
    assert covered.any()
    np.testing.assert_allclose(v.data[covered], amp, atol=1e-6)


def test_output_bounded_by_amplitude_range(unit_grid):
    f = random_field(60, unit_grid, seed=22)
    v = render_naive(f, unit_grid, RenderOptions(precision="f64"))
    amps = f.activated_amplitude()
    covered = v.data != 0.0
    assert (v.data[covered] >= amps.min() - 1e-12).all()
    assert (v.data[covered] <= amps.max() + 1e-12).all()


def test_two_equal_kernels_average_amplitudes():
    g = GridSpec((1, 1, 1), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    pos = np.asarray([[-0.4, 0.0, 0.0], [0.4, 0.0, 0.0]])
    raw_a = np.asarray([math.log(0.2 / 0.8), math.log(0.8 / 0.2)])
    f = GaussianField(pos, np.zeros((2, 3)), np.tile([1.0, 0, 0, 0], (2, 1)),
                      raw_a, np.full(2, 20.0))
    v = render_naive(f, g, RenderOptions(precision="f64"))
    # voxel center is equidistant, so weights cancel: I = (0.2 + 0.8) / 2
    assert v.data[0, 0, 0] == pytest.approx(0.5, abs=1e-9)


def test_uniform_relax_cancels(unit_grid):
    # scaling every r by the same factor leaves the normalized image unchanged
    f = random_field(30, unit_grid, seed=23)
    f.raw_relax[:] = 2.0
    a = render_naive(f, unit_grid, RenderOptions(precision="f64"))
    f2 = f.copy()
    f2.raw_relax[:] = -1.0
    b = render_naive(f2, unit_grid, RenderOptions(precision="f64"))
    np.testing.assert_allclose(a.data, b.data, atol=1e-6)


def test_empty_coverage_renders_zero():
    g = GridSpec((4, 4, 4))
    f = _single([100.0, 100.0, 100.0])
    v = render_naive(f, g)
    np.testing.assert_array_equal(v.data, 0.0)


def test_output_dtype_follows_precision(unit_grid):
    f = random_field(10, unit_grid, seed=24)
    assert render_naive(f, unit_grid, RenderOptions(precision="f32")).data.dtype == np.float32
    assert render_naive(f, unit_grid, RenderOptions(precision="f64")).data.dtype == np.float64
