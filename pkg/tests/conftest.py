import os
import time

os.environ.setdefault("NUMBA_NUM_THREADS", "8")

import numpy as np
import pytest

import gsvol
from gsvol.field import InitConfig
from gsvol.optimize import FitConfig, fit
from gsvol.phantom import generate_phantom, random_phantom
from gsvol.raster import build_brick_index, forward
from gsvol.render import RenderOptions
from gsvol.volume import grid_covering_extent, resample_trilinear

# One phantom protocol shared by the synthetic SR and ablation tests: a
# seeded 64^3 ellipsoid phantom, trilinear-degraded to 32^3, fitted three
# ways (full model / amplitude frozen / amplitude frozen + relaxation
# pinned). The fits dominate suite runtime, so they run once per session.
PROTOCOL_SEED = 11
HR_DIMS = (64, 64, 64)
LR_DIMS = (32, 32, 32)


@pytest.fixture(scope="session")
def phantom_pair():
    hr_grid = gsvol.GridSpec(HR_DIMS, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    shape = random_phantom("ellipsoids", hr_grid, seed=PROTOCOL_SEED)
    hr = generate_phantom(shape, hr_grid, smooth_sigma=0.7)
    lr = resample_trilinear(hr, grid_covering_extent(hr_grid, LR_DIMS))
    return hr, lr


@pytest.fixture(scope="session")
def protocol_fits(phantom_pair):
    """{'full'|'relax_only'|'neither': dict} for the shared phantom."""
    hr, lr = phantom_pair
    opts = RenderOptions()
    out = {}
    for name, (amp, rel) in {
        "full": (True, True),
        "relax_only": (False, True),
        "neither": (False, False),
    }.items():
        t0 = time.perf_counter()
        f, report = fit(lr, InitConfig(), FitConfig(amplitude_enabled=amp,
                                                    relax_enabled=rel),
                        render_opts=opts)
        fit_seconds = time.perf_counter() - t0
        idx = build_brick_index(f, hr.grid, opts)
        sr = forward(f, hr.grid, idx, opts).volume()
        out[name] = {
            "field": f,
            "report": report,
            "sr": sr,
            "psnr": gsvol.psnr(sr, hr),
            "ssim": gsvol.ssim3d(sr, hr),
            "fit_seconds": fit_seconds,
        }
    return out


@pytest.fixture(scope="session")
def trilinear_baseline(phantom_pair):
    hr, lr = phantom_pair
    up = resample_trilinear(lr, hr.grid)
    return {"psnr": gsvol.psnr(up, hr), "ssim": gsvol.ssim3d(up, hr)}


@pytest.fixture
def unit_grid():
    return gsvol.GridSpec((8, 8, 8), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))


@pytest.fixture
def noise_volume(unit_grid):
    rng = np.random.default_rng(123)
    return gsvol.Volume(unit_grid, rng.uniform(0.0, 1.0, size=unit_grid.dims))
