"""Forward-pass benchmark: brick rasterizer vs naive renderer."""

from __future__ import annotations

import time

import numpy as np

from .field import random_field
from .raster import build_brick_index, forward, set_worker_count, worker_count
from .render import RenderOptions, render_naive
from .volume import GridSpec


def run_bench(n: int = 50_000, dims=(64, 64, 64), threads: int = 8,
              repeats: int = 3, seed: int = 0) -> dict:
    """Time both engines on one random field; returns timings and speedup.

    The naive engine is O(N * voxels) by design, so it runs once; the brick
    engine reports the best of `repeats`. JIT compilation is warmed up on a
    tiny grid first so neither measurement includes compile time.
    """
    grid = GridSpec(tuple(dims), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    opts = RenderOptions()
    set_worker_count(threads)
    f = random_field(n, grid, seed)

    warm_grid = GridSpec((4, 4, 4), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    warm = random_field(8, warm_grid, seed)
    render_naive(warm, warm_grid, opts)
    forward(warm, warm_grid, build_brick_index(warm, warm_grid, opts), opts)

    t0 = time.perf_counter()
    idx = build_brick_index(f, grid, opts)
    bin_time = time.perf_counter() - t0

    brick_times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward(f, grid, idx, opts)
        brick_times.append(time.perf_counter() - t0)
    brick_time = min(brick_times)

    t0 = time.perf_counter()
    render_naive(f, grid, opts)
    naive_time = time.perf_counter() - t0

    return {
        "n": n,
        "dims": list(dims),
        "threads_requested": threads,
        "threads_used": worker_count(),
        "pairs": idx.pair_count,
        "binning_time_s": bin_time,
        "brick_forward_s": brick_time,
        "brick_forward_all_s": brick_times,
        "naive_forward_s": naive_time,
        "speedup_forward": naive_time / brick_time,
        "speedup_with_binning": naive_time / (brick_time + bin_time),
    }
