"""Command-line entry points: ``bench``, ``reconstruct`` and ``solve-rel``.

Exit codes: 0 success, 2 usage or validation error, 3 I/O error, 4 algorithmic
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats
from .bench import CONFIGS, SOLVER_ALIASES, Grid, QUANTILE_METHOD, parse_grid, run_experiment
from .errors import BootstrapFailure, InsufficientDataError, NoConsensusError, PoseError
from .geometry import decompose_essential
from .ransac import RansacConfig, ransac_essential
from .sfm import default_config, reconstruct

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ALGORITHM = 4

log = logging.getLogger("calibpose")


class UsageError(Exception):
    pass


def _split(values) -> list:
    out = []
    for v in values or []:
        out.extend(s for s in v.replace(";", ",").split(",") if s)
    return out


def _grid_from_args(args) -> Grid:
    grid = Grid()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            grid = parse_grid(path.read_text(), grid)
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from None
    lines = []
    if args.solvers:
        lines.append("solvers=" + ",".join(_split(args.solvers)))
    if args.configs:
        lines.append("configs=" + ",".join(_split(args.configs)))
    if args.sigma:
        lines.append("sigmas=" + ",".join(_split(args.sigma)))
    for key in ("trials", "seed", "alpha", "n_points"):
        value = getattr(args, key)
        if value is not None:
            lines.append(f"{key}={value}")
    try:
        return parse_grid("\n".join(lines), grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_bench(args) -> int:
    grid = _grid_from_args(args)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    summaries, results = run_experiment(grid, workers=args.workers)
    stats = formats.format_stats(summaries)
    try:
        formats.write_text(args.out, stats)
        long_path = args.long or str(Path(args.out).with_name(Path(args.out).stem + "_long.csv"))
        formats.write_text(long_path, formats.format_long(results))
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(summaries)} rows to {args.out} (quartiles: {QUANTILE_METHOD} interpolation)")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    fdir = Path(args.features)
    if not fdir.is_dir():
        raise UsageError(f"features directory not found: {fdir}")
    files = formats.list_feature_files(fdir)
    if not files:
        raise UsageError(f"no feature files in {fdir}")
    if len(files) < 2:
        raise UsageError("need at least two feature files")
    kpath = Path(args.intrinsics)
    if not kpath.is_file():
        raise UsageError(f"intrinsics file not found: {kpath}")
    k = formats.read_intrinsics(kpath)
    features = [formats.read_keypoints(p) for p in files]
    dims = {f.descriptors.shape[1] for f in features if len(f)}
    if len(dims) > 1:
        raise UsageError(f"descriptor dimensions differ between files: {sorted(dims)}")
    if args.threshold_px <= 0 or args.ratio <= 1:
        raise UsageError("--threshold-px must be positive and --ratio must exceed 1")
    try:
        cfg = default_config(features, seed=args.seed, inlier_threshold_px=args.threshold_px)
    except InsufficientDataError as exc:
        raise UsageError(str(exc)) from None
    cfg = replace(cfg, matcher=replace(cfg.matcher, nn_ratio=args.ratio))
    try:
        rec = reconstruct(features, k, cfg)
    except BootstrapFailure as exc:
        print(f"error: bootstrap failed: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    model = rec.model
    out = Path(args.out)
    cams = model.cameras()
    report = {
        "frames": [{"frame": r.frame, "file": files[r.frame].name, "registered": r.registered,
                    "inliers": r.inliers, "new_points": r.new_points, "extended": r.extended,
                    "purged": r.purged, "message": r.message}
                   for r in sorted(model.reports, key=lambda r: r.frame)],
        "registered": len(cams),
        "failures": [{"frame": f, "message": m} for f, m in rec.failures],
        "landmarks": len(model.landmarks),
        "removed_landmarks": model.removed,
        "descriptor_distance_max": cfg.matcher.descriptor_distance_max,
        "inlier_threshold_px": cfg.inlier_threshold_px,
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        formats.write_poses(out / "poses.csv", cams)
        formats.write_ply(out / "points.ply", model.positions())
        formats.write_ply(out / "cameras.ply", np.array([p.center for _, p in cams]),
                          labels=[f for f, _ in cams])
        formats.write_json(out / "report.json", report)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"registered {len(cams)}/{len(files)} frames, {len(model.landmarks)} landmarks -> {out}")
    return EXIT_OK


def cmd_solve_rel(args) -> int:
    for p in (args.correspondences, args.intrinsics):
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
    k = formats.read_intrinsics(args.intrinsics)
    uv1, uv2 = formats.read_correspondences(args.correspondences)
    if len(uv1) < 5:
        raise UsageError(f"need at least 5 correspondences, got {len(uv1)}")
    if args.threshold_px <= 0:
        raise UsageError("--threshold-px must be positive")
    x1, x2 = k.normalize(uv1), k.normalize(uv2)
    cfg = RansacConfig(args.confidence, args.threshold_px / k.focal, args.max_iterations, args.seed)
    try:
        res = ransac_essential(x1, x2, cfg)
        inl = res.inlier_indices
        pose = decompose_essential(res.model, x1[inl], x2[inl])
    except (NoConsensusError, PoseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    e = res.model
    print("E " + " ".join(formats.fmt(v) for v in e.ravel()))
    print("R " + " ".join(formats.fmt(v) for v in pose.rotation.ravel()))
    print("T " + " ".join(formats.fmt(v) for v in pose.translation))
    print(f"inliers {len(inl)} of {len(x1)}")
    print(json.dumps({"E": e.ravel().tolist(), "R": pose.rotation.ravel().tolist(),
                      "T": pose.translation.tolist(), "inliers": int(len(inl)),
                      "total": int(len(x1)), "iterations": res.iterations_run}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calibpose", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="five-point vs seven-point accuracy benchmark")
    b.add_argument("--config", help="grid file with key=value lines")
    b.add_argument("--solvers", nargs="+", help=f"any of {sorted(SOLVER_ALIASES)}")
    b.add_argument("--configs", nargs="+", help=f"any of {sorted(CONFIGS)}")
    b.add_argument("--sigma", nargs="+", help="noise levels in pixels")
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--alpha", type=float, help="rotation angle in degrees")
    b.add_argument("--n-points", dest="n_points", type=int)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", required=True, help="summary CSV path")
    b.add_argument("--long", help="per-trial CSV path (default: <out stem>_long.csv)")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("reconstruct", help="incremental reconstruction from keypoint files")
    r.add_argument("features", help="directory with one keypoint file per frame")
    r.add_argument("--intrinsics", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threshold-px", dest="threshold_px", type=float, default=2.0)
    r.add_argument("--ratio", type=float, default=1.25, help="nearest-neighbour ratio d2/d1")
    r.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("solve-rel", help="relative pose from pixel correspondences")
    s.add_argument("correspondences", help="file with 'u1 v1 u2 v2' lines")
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--threshold-px", dest="threshold_px", type=float, default=2.0)
    s.add_argument("--confidence", type=float, default=0.999)
    s.add_argument("--max-iterations", dest="max_iterations", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_solve_rel)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, formats.FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
