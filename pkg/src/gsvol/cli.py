"""Command-line pipeline: phantom, degrade, fit, render, eval, gradcheck, bench.

Conventions shared by all subcommands:

* Options may come from a JSON file via --config; explicit flags win.
* Every run writes exactly one manifest (<out>.manifest.json) next to its
  primary output: command, resolved config, paths, seed, toolkit version,
  wall time, and machine info. Re-running a command with a manifest's
  "config" object reproduces the outputs.
* Worker threads: --threads, else the GSVOL_THREADS env var, else the
  pool default.
* Exit codes: 0 success, 1 gradcheck tolerance breach, 2 usage error,
  3 data/format error, 4 numerical failure.

The fit command deliberately has no way to read a reference volume: the
loss only ever sees the single LR input (zero-shot contract).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .errors import FormatError, GridMismatchError, GsvolError, NumericalError
from .field import InitConfig, load_field, save_field
from .gradcheck import PARAM_GROUPS, run_gradcheck
from .metrics import MetricReport
from .optimize import FitConfig, fit
from .phantom import generate_phantom, random_phantom
from .raster import build_brick_index, forward, set_worker_count
from .render import RenderOptions, render_naive
from .validation import check_unit_range
from .volume import (GridSpec, Volume, ensure_unit_range, grid_covering_extent,
                     load_volume, resample_trilinear, save_volume)


def _dims(text: str):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dims {text!r}, expected e.g. 64,64,64")
    if len(parts) != 3 or any(p < 1 for p in parts):
        raise argparse.ArgumentTypeError(f"dims must be 3 positive integers, got {text!r}")
    return parts


def _triple(text: str):
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad triple {text!r}, expected e.g. 1,1,2")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 comma-separated values, got {text!r}")
    return parts


def _machine_info() -> dict:
    import numba
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _write_manifest(primary_out: str, command: str, args: argparse.Namespace,
                    t0: float, extra: dict | None = None) -> str:
    config = {k: _jsonable(v) for k, v in vars(args).items()
              if k not in ("func", "config", "command")}
    manifest = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_time_s": time.perf_counter() - t0,
        "machine": _machine_info(),
    }
    if extra:
        manifest.update(extra)
    path = primary_out + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _resolve_threads(args) -> None:
    threads = getattr(args, "threads", None)
    if threads is None:
        env = os.environ.get("GSVOL_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"GSVOL_THREADS={env!r} is not an integer")
    if threads is not None:
        set_worker_count(threads)


def _require(args, dests) -> None:
    missing = [d for d in dests if getattr(args, d, None) is None]
    if missing:
        flags = ", ".join(
            "--" + d.removesuffix("_path").replace("_", "-") for d in missing)
        raise UsageError(f"missing required option(s): {flags}")


class UsageError(Exception):
    pass


def _render_options(args) -> RenderOptions:
    return RenderOptions(cutoff_sigma=args.cutoff_sigma, epsilon_w=args.epsilon_w,
                         precision=args.precision)


# ---------------------------------------------------------------- commands


def cmd_phantom(args) -> int:
    t0 = time.perf_counter()
    _require(args, ("dims", "out"))
    grid = GridSpec(args.dims, args.spacing, (0.0, 0.0, 0.0))
    p = random_phantom(args.kind, grid, args.seed, components=args.components)
    vol = generate_phantom(p, grid, smooth_sigma=args.smooth_sigma)
    save_volume(vol, args.out)
    _write_manifest(args.out, "phantom", args, t0,
                    {"kind": args.kind, "components": args.components})
    print(f"phantom: {args.kind} {args.dims} -> {args.out}")
    return 0


def cmd_degrade(args) -> int:
    t0 = time.perf_counter()
    _require(args, ("in_path", "out"))
    if (args.factor is None) == (args.target_dims is None):
        raise UsageError("give exactly one of --factor or --target-dims")
    src = load_volume(args.in_path)
    if args.factor is not None:
        if args.factor < 1:
            raise UsageError("--factor must be >= 1 (degrade only)")
        target_dims = tuple(-(-d // args.factor) for d in src.grid.dims)
    else:
        target_dims = args.target_dims
        if any(t > d for t, d in zip(target_dims, src.grid.dims)):
            raise UsageError(
                f"target dims {target_dims} exceed source {src.grid.dims} (degrade only)"
            )
    grid = grid_covering_extent(src.grid, target_dims)
    out = resample_trilinear(src, grid)
    save_volume(out, args.out)
    _write_manifest(args.out, "degrade", args, t0, {
        "source_grid": {"dims": list(src.grid.dims), "spacing": list(src.grid.spacing),
                        "origin": list(src.grid.origin)},
        "target_grid": {"dims": list(grid.dims), "spacing": list(grid.spacing),
                        "origin": list(grid.origin)},
    })
    print(f"degrade: {src.grid.dims} -> {grid.dims} ({args.out})")
    return 0


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    _require(args, ("in_path", "out"))
    lr = ensure_unit_range(load_volume(args.in_path))
    init_cfg = InitConfig(background_threshold=args.background_threshold,
                          scale_factor=args.scale_factor,
                          relax_init=args.relax_init)
    fit_cfg = FitConfig(iterations=args.iterations, loss=args.loss,
                        lr_position=args.lr_position, lr_scale=args.lr_scale,
                        lr_rotation=args.lr_rotation,
                        lr_amplitude=args.lr_amplitude, lr_relax=args.lr_relax,
                        seed=args.seed,
                        checkpoint_every=args.checkpoint_every,
                        amplitude_enabled=not args.disable_amplitude,
                        relax_enabled=not args.disable_relax,
                        log_every=args.log_every)
    checkpoint_dir = args.checkpoint_dir
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)
    f, report = fit(lr, init_cfg, fit_cfg, render_opts=_render_options(args),
                    checkpoint_dir=checkpoint_dir)
    save_field(f, args.out)
    report_path = args.out + ".report.jsonl"
    report.save_jsonl(report_path)
    _write_manifest(args.out, "fit", args, t0, {
        "report": report_path,
        "final": report.final,
    })
    print(f"fit: N={f.count}, final loss {report.final['loss']:.3e} -> {args.out}")
    return 0


def _target_grid(args) -> GridSpec:
    if args.like is not None:
        return load_volume(args.like).grid
    if args.dims is None:
        raise UsageError("render target required: --like VOLUME or --dims X,Y,Z")
    if args.cover is not None:
        if args.spacing is not None or args.origin is not None:
            raise UsageError("--cover derives spacing/origin; do not combine with "
                             "--spacing/--origin")
        return grid_covering_extent(load_volume(args.cover).grid, args.dims)
    spacing = args.spacing if args.spacing is not None else (1.0, 1.0, 1.0)
    origin = args.origin if args.origin is not None else (0.0, 0.0, 0.0)
    return GridSpec(args.dims, spacing, origin)


def cmd_render(args) -> int:
    t0 = time.perf_counter()
    _require(args, ("field", "out"))
    f = load_field(args.field)
    grid = _target_grid(args)
    opts = _render_options(args)
    if args.engine == "brick":
        idx = build_brick_index(f, grid, opts)
        vol = forward(f, grid, idx, opts).volume()
    else:
        vol = render_naive(f, grid, opts)
    save_volume(vol, args.out)
    _write_manifest(args.out, "render", args, t0, {
        "target_grid": {"dims": list(grid.dims), "spacing": list(grid.spacing),
                        "origin": list(grid.origin)},
        "engine": args.engine,
    })
    print(f"render[{args.engine}]: N={f.count} -> {grid.dims} ({args.out})")
    return 0


def _write_pgm(path: str, img: np.ndarray) -> None:
    """8-bit binary PGM (P5)."""
    data = np.clip(img, 0.0, 1.0)
    data = np.round(data * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def _export_slices(pred: Volume, ref: Volume, out_base: str) -> list:
    """Per axis midplane: [prediction | reference | abs error] panel."""
    paths = []
    for axis, name in enumerate("xyz"):
        mid = pred.grid.dims[axis] // 2
        p = np.take(pred.data, mid, axis=axis)
        r = np.take(ref.data, mid, axis=axis)
        panel = np.concatenate([p, r, np.abs(p - r)], axis=1)
        path = f"{out_base}_slice_{name}.pgm"
        _write_pgm(path, panel)
        paths.append(path)
    return paths


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    _require(args, ("pred", "ref", "out"))
    pred = load_volume(args.pred)
    ref = load_volume(args.ref)
    report = MetricReport.evaluate(pred, ref)
    payload = report.to_json()
    slice_paths = []
    if args.slices:
        slice_paths = _export_slices(pred, ref, os.path.splitext(args.out)[0])
        payload["slices"] = slice_paths
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2)
    _write_manifest(args.out, "eval", args, t0, {"metrics": payload})
    shown = "inf (identical)" if report.identical else f"{report.psnr:.2f}"
    print(f"eval: psnr {shown} dB, ssim {report.ssim:.4f} -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    from .field import random_field
    from .volume import Volume as _V
    rel_tol = args.rel_tol
    if rel_tol is None:
        # f32 caches round the forward products, so the analytic side is
        # itself only float32-accurate; the documented tolerance is looser.
        rel_tol = 1e-2 if args.precision == "f32" else 1e-4
    grid = GridSpec(args.grid, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    f = random_field(args.n, grid, args.seed)
    rng = np.random.default_rng(args.seed + 1)
    target = _V(grid, rng.uniform(0.0, 1.0, size=grid.dims).astype(np.float64))
    params = tuple(args.params.split(",")) if args.params else PARAM_GROUPS
    opts = RenderOptions(cutoff_sigma=args.cutoff_sigma, epsilon_w=args.epsilon_w,
                         precision=args.precision)
    report = run_gradcheck(f, grid, target, opts=opts, h=args.h,
                           rel_tol=rel_tol, params=params)
    for name, g in report.groups.items():
        print(f"gradcheck[{name}]: max rel err {g.max_rel_error:.3e} "
              f"(checked {g.checked}, excluded {g.excluded}, "
              f"below floor {g.below_floor})")
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck: {status} (tolerance {rel_tol:g})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report.to_json(), fh, indent=2)
        _write_manifest(args.out, "gradcheck", args, t0, {"report": report.to_json()})
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    _require(args, ("out",))
    from .bench import run_bench
    result = run_bench(n=args.n, dims=args.dims, threads=args.threads or 8,
                       repeats=args.repeats, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump(result, fh, indent=2)
    _write_manifest(args.out, "bench", args, t0, {"results": result})
    print(f"bench: naive {result['naive_forward_s']:.3f}s, "
          f"brick {result['brick_forward_s']:.3f}s, "
          f"speedup {result['speedup_forward']:.1f}x -> {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def _add_render_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cutoff-sigma", type=float, default=3.0,
                   help="Mahalanobis truncation radius (inf disables)")
    p.add_argument("--epsilon-w", type=float, default=1e-8,
                   help="denominator floor; uncovered voxels render 0")
    p.add_argument("--precision", choices=("f32", "f64"), default="f32")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gsvol",
        description="Zero-shot volumetric super-resolution with a 3D Gaussian field",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def add(name, func, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="JSON file of option defaults; flags win")
        p.set_defaults(func=func)
        subparsers[name] = p
        return p

    p = add("phantom", cmd_phantom, help="generate a synthetic phantom volume")
    p.add_argument("--kind", choices=("ellipsoids", "gaussian-mixture"),
                   default="ellipsoids")
    p.add_argument("--dims", type=_dims)
    p.add_argument("--spacing", type=_triple, default=(1.0, 1.0, 1.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--components", type=int, default=6)
    p.add_argument("--smooth-sigma", type=float, default=1.0,
                   help="post-rasterization Gaussian blur, voxel units")
    p.add_argument("--out")

    p = add("degrade", cmd_degrade, help="trilinear downsample over a shared extent")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--factor", type=int)
    p.add_argument("--target-dims", type=_dims)
    p.add_argument("--out")

    p = add("fit", cmd_fit,
            help="fit a Gaussian field to one LR volume (zero-shot: no HR input exists)")
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out", help="output GSV1 field file")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--loss", choices=("l1", "l2"), default="l1")
    p.add_argument("--lr-position", type=float, default=None,
                   help="default: 1e-3 * mean voxel spacing")
    p.add_argument("--lr-scale", type=float, default=5e-3)
    p.add_argument("--lr-rotation", type=float, default=1e-3)
    p.add_argument("--lr-amplitude", type=float, default=2.5e-2)
    p.add_argument("--lr-relax", type=float, default=2.5e-2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--background-threshold", type=float, default=0.01)
    p.add_argument("--scale-factor", type=float, default=0.75)
    p.add_argument("--relax-init", type=float, default=0.95)
    p.add_argument("--disable-amplitude", action="store_true",
                   help="freeze amplitudes at their initialization (ablation)")
    p.add_argument("--disable-relax", action="store_true",
                   help="pin the relaxation proxy to 1 (ablation)")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--threads", type=int)
    _add_render_opts(p)

    p = add("render", cmd_render, help="render a field at an arbitrary target grid")
    p.add_argument("--field", help="GSV1 field file")
    p.add_argument("--out")
    p.add_argument("--engine", choices=("brick", "naive"), default="brick")
    p.add_argument("--like", help="copy the target grid from this volume")
    p.add_argument("--dims", type=_dims, help="target dims")
    p.add_argument("--cover", help="derive spacing/origin so --dims covers this "
                                   "volume's world extent (e.g. the LR input)")
    p.add_argument("--spacing", type=_triple)
    p.add_argument("--origin", type=_triple)
    p.add_argument("--threads", type=int)
    _add_render_opts(p)

    p = add("eval", cmd_eval, help="PSNR/SSIM of a prediction against a reference")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--out", help="metric report JSON")
    p.add_argument("--slices", action="store_true",
                   help="write [pred|ref|abs err] PGM panels at the 3 axis midplanes")

    p = add("gradcheck", cmd_gradcheck,
            help="finite-difference check of the analytic gradients")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--grid", type=_dims, default=(8, 8, 8))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-3)
    p.add_argument("--rel-tol", type=float, default=None,
                   help="default 1e-4 (f64) or 1e-2 (f32)")
    p.add_argument("--params", help="comma list from: " + ",".join(PARAM_GROUPS))
    p.add_argument("--out", help="optional JSON report path")
    p.add_argument("--threads", type=int)
    _add_render_opts(p)
    p.set_defaults(precision="f64")

    p = add("bench", cmd_bench, help="brick vs naive forward timing")
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--dims", type=_dims, default=(64, 64, 64))
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="results JSON path")

    return parser, subparsers


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except OSError as e:
            print(f"gsvol: cannot read config: {e}", file=sys.stderr)
            return 3
        except json.JSONDecodeError as e:
            print(f"gsvol: bad config JSON: {e}", file=sys.stderr)
            return 3
        sp = subparsers[args.command]
        valid = {a.dest for a in sp._actions}
        unknown = set(overrides) - valid
        if unknown:
            print(f"gsvol: unknown config keys: {sorted(unknown)}", file=sys.stderr)
            return 2
        sp.set_defaults(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in overrides.items()})
        args = parser.parse_args(argv)
    try:
        _resolve_threads(args)
        return args.func(args)
    except UsageError as e:
        print(f"gsvol: {e}", file=sys.stderr)
        return 2
    except (FormatError, GridMismatchError) as e:
        print(f"gsvol: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"gsvol: {e}", file=sys.stderr)
        return 4
    except GsvolError as e:
        print(f"gsvol: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"gsvol: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"gsvol: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
