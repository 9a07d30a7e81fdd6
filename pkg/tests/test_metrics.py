import math

import numpy as np
import pytest

from gsvol.errors import GridMismatchError
from gsvol.metrics import MetricReport, psnr, ssim3d
from gsvol.volume import GridSpec, Volume

G16 = GridSpec((16, 16, 16))


def _vol(data):
    return Volume(G16, np.asarray(data, dtype=np.float64))


def _noise(seed):
    rng = np.random.default_rng(seed)
    return _vol(rng.uniform(size=(16, 16, 16)))


def test_psnr_identical_is_infinite():
    x = _noise(1)
    assert psnr(x, x) == math.inf


def test_psnr_uniform_offset():
    # MSE 0.01 -> 10*log10(1/0.01) = 20 dB
    x = _vol(np.full((16, 16, 16), 0.3))
    y = _vol(np.full((16, 16, 16), 0.4))
    assert psnr(x, y) == pytest.approx(20.0, abs=0.01)


def test_psnr_half_range_error():
    x = _vol(np.zeros((16, 16, 16)))
    y = _vol(np.full((16, 16, 16), 0.5))
    assert psnr(x, y) == pytest.approx(10 * math.log10(4.0), abs=1e-9)


def test_psnr_monotone_in_error():
    x = _noise(2)
    closer = Volume(G16, x.data + 0.01)
    farther = Volume(G16, x.data + 0.05)
    assert psnr(x, closer) > psnr(x, farther)


def test_metrics_grid_mismatch():
    x = _noise(3)
    y = Volume(GridSpec((16, 16, 16), (2.0, 2.0, 2.0)),
               x.data.copy())
    with pytest.raises(GridMismatchError, match="different grids"):
        psnr(x, y)
    with pytest.raises(GridMismatchError, match="different grids"):
        ssim3d(x, y)


def test_ssim_self_is_exactly_one():
    x = _noise(4)
    assert ssim3d(x, x) == 1.0


def test_ssim_anticorrelated_is_negative():
    x = _noise(5)
    inverted = _vol(1.0 - x.data)
    assert ssim3d(x, inverted) < 0.0


def test_ssim_constant_pair_closed_form():
    # zero variance leaves only the luminance term
    a, b = 0.25, 0.75
    x = _vol(np.full((16, 16, 16), a))
    y = _vol(np.full((16, 16, 16), b))
    c1 = 0.01 ** 2
    expected = (2 * a * b + c1) / (a * a + b * b + c1)
    assert ssim3d(x, y) == pytest.approx(expected, rel=1e-9)


def test_ssim_symmetry():
    x, y = _noise(6), _noise(7)
    assert ssim3d(x, y) == pytest.approx(ssim3d(y, x), abs=1e-9)


def test_ssim_bounded_by_one():
    x, y = _noise(8), _noise(9)
    assert ssim3d(x, y) <= 1.0


def test_ssim_rejects_small_volumes():
    g = GridSpec((8, 8, 8))
    x = Volume(g, np.zeros((8, 8, 8)))
    with pytest.raises(ValueError, match="too small for SSIM"):
        ssim3d(x, x)


def test_metric_report_identical_pair():
    x = _noise(10)
    report = MetricReport.evaluate(x, x)
    assert report.identical
    assert report.ssim == 1.0
    payload = report.to_json()
    assert payload["psnr"] is None
    assert payload["identical"] is True
    assert payload["grid"]["dims"] == [16, 16, 16]


def test_metric_report_distinct_pair():
    x = _noise(11)
    report = MetricReport.evaluate(x, Volume(G16, x.data + 0.1))
    assert not report.identical
    assert report.to_json()["psnr"] == pytest.approx(20.0, abs=0.01)
