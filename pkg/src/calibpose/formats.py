"""Plain-text file formats read and written by the command-line tools.

Floats are written with ``repr`` (shortest string that round-trips), so every
writer/reader pair is lossless and rewriting a parsed file reproduces it byte
for byte.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .geometry import Pose, is_rotation
from .sfm import ImageFeatures, Intrinsics

STATS_HEADER = ["solver", "config", "sigma_px", "n_trials", "n_failed",
                "r_err_q1", "r_err_med", "r_err_q3", "t_err_q1", "t_err_med", "t_err_q3"]
LONG_HEADER = ["solver", "config", "sigma_px", "trial", "seed", "failed", "r_err", "t_err"]
POSE_HEADER = ["frame"] + [f"r{i}{j}" for i in range(3) for j in range(3)] + ["t0", "t1", "t2"]


class FormatError(ValueError):
    """Malformed input file; the message names the offending line when possible."""


def fmt(x) -> str:
    return repr(float(x))


def _floats(fields, lineno: int, path) -> list:
    try:
        vals = [float(s) for s in fields]
    except ValueError:
        raise FormatError(f"{path}:{lineno}: expected numbers, got {' '.join(fields)!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError(f"{path}:{lineno}: non-finite value")
    return vals


def _content_lines(text: str):
    """(line number, fields) for every non-blank line; ``#`` starts a comment."""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


# -- keypoints ----------------------------------------------------------------

def format_keypoints(f: ImageFeatures) -> str:
    out = [f"D {f.descriptors.shape[1]} N {len(f)}"]
    for uv, d in zip(f.positions, f.descriptors):
        out.append(" ".join(fmt(v) for v in (*uv, *d)))
    return "\n".join(out) + "\n"


def parse_keypoints(text: str, path="<keypoints>") -> ImageFeatures:
    lines = list(_content_lines(text))
    if not lines:
        raise FormatError(f"{path}: empty keypoint file")
    lineno, head = lines[0]
    if len(head) != 4 or head[0] != "D" or head[2] != "N":
        raise FormatError(f"{path}:{lineno}: header must read 'D <dim> N <count>'")
    try:
        dim, count = int(head[1]), int(head[3])
    except ValueError:
        raise FormatError(f"{path}:{lineno}: header dimensions must be integers") from None
    if dim < 1 or count < 0:
        raise FormatError(f"{path}:{lineno}: invalid header values")
    if len(lines) - 1 != count:
        raise FormatError(f"{path}: header declares {count} keypoints, found {len(lines) - 1}")
    rows = []
    for lineno, fields in lines[1:]:
        if len(fields) != dim + 2:
            raise FormatError(f"{path}:{lineno}: expected {dim + 2} values, got {len(fields)}")
        rows.append(_floats(fields, lineno, path))
    arr = np.array(rows, dtype=float).reshape(count, dim + 2)
    return ImageFeatures(arr[:, :2], arr[:, 2:], name=Path(str(path)).name)


def write_keypoints(path, f: ImageFeatures):
    Path(path).write_text(format_keypoints(f))


def read_keypoints(path) -> ImageFeatures:
    return parse_keypoints(Path(path).read_text(), path)


def list_feature_files(directory) -> list:
    """Regular, non-hidden files of ``directory`` in lexicographic order."""
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and not p.name.startswith("."))


# -- intrinsics and correspondences --------------------------------------------

def format_intrinsics(k: Intrinsics) -> str:
    return " ".join(fmt(v) for v in (k.fx, k.fy, k.cx, k.cy, k.skew)) + "\n"


def parse_intrinsics(text: str, path="<intrinsics>") -> Intrinsics:
    lines = list(_content_lines(text))
    if len(lines) != 1 or len(lines[0][1]) != 5:
        raise FormatError(f"{path}: intrinsics must be one line 'fx fy cx cy skew'")
    lineno, fields = lines[0]
    vals = _floats(fields, lineno, path)
    try:
        return Intrinsics(*vals)
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None


def write_intrinsics(path, k: Intrinsics):
    Path(path).write_text(format_intrinsics(k))


def read_intrinsics(path) -> Intrinsics:
    return parse_intrinsics(Path(path).read_text(), path)


def format_correspondences(uv1, uv2) -> str:
    return "".join(f"{fmt(a[0])} {fmt(a[1])} {fmt(b[0])} {fmt(b[1])}\n"
                   for a, b in zip(np.asarray(uv1), np.asarray(uv2)))


def parse_correspondences(text: str, path="<correspondences>"):
    rows = []
    for lineno, fields in _content_lines(text):
        if len(fields) != 4:
            raise FormatError(f"{path}:{lineno}: expected 'u1 v1 u2 v2', got {len(fields)} values")
        rows.append(_floats(fields, lineno, path))
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return arr[:, :2], arr[:, 2:]


def read_correspondences(path):
    return parse_correspondences(Path(path).read_text(), path)


# -- poses ----------------------------------------------------------------------

def format_poses(cameras) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POSE_HEADER)
    for frame, pose in cameras:
        w.writerow([int(frame)] + [fmt(v) for v in pose.rotation.ravel()]
                   + [fmt(v) for v in pose.translation])
    return buf.getvalue()


def parse_poses(text: str, path="<poses>") -> list:
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or rows[0] != POSE_HEADER:
        raise FormatError(f"{path}:1: unexpected pose file header")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(POSE_HEADER):
            raise FormatError(f"{path}:{lineno}: expected {len(POSE_HEADER)} fields")
        try:
            frame = int(row[0])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: frame id must be an integer") from None
        vals = _floats(row[1:], lineno, path)
        r = np.array(vals[:9]).reshape(3, 3)
        if not is_rotation(r):
            raise FormatError(f"{path}:{lineno}: rotation is not orthonormal with det +1")
        out.append((frame, Pose(r, vals[9:])))
    return out


def write_poses(path, cameras):
    Path(path).write_text(format_poses(cameras))


def read_poses(path) -> list:
    return parse_poses(Path(path).read_text(), path)


# -- PLY ------------------------------------------------------------------------

def format_ply(points, labels=None) -> str:
    """ASCII PLY with double x, y, z and an optional integer ``label`` per vertex."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    head = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
            "property double x", "property double y", "property double z"]
    if labels is not None:
        head.append("property int label")
    head.append("end_header")
    body = []
    for k, p in enumerate(points):
        vals = [fmt(v) for v in p]
        if labels is not None:
            vals.append(str(int(labels[k])))
        body.append(" ".join(vals))
    return "\n".join(head + body) + "\n"


def parse_ply(text: str, path="<ply>"):
    """Returns ``(points, labels or None)`` for files written by :func:`format_ply`."""
    lines = text.splitlines()
    if not lines or lines[0] != "ply" or len(lines) < 2 or lines[1] != "format ascii 1.0":
        raise FormatError(f"{path}:1: not an ASCII PLY file")
    try:
        end = lines.index("end_header")
    except ValueError:
        raise FormatError(f"{path}: missing end_header") from None
    count = None
    props = []
    for lineno, line in enumerate(lines[2:end], 3):
        parts = line.split()
        if parts[:2] == ["element", "vertex"] and len(parts) == 3:
            count = int(parts[2])
        elif parts and parts[0] == "property" and len(parts) == 3:
            props.append(parts[2])
        elif parts and parts[0] != "comment":
            raise FormatError(f"{path}:{lineno}: unsupported header line")
    if count is None or props[:3] != ["x", "y", "z"] or props[3:] not in ([], ["label"]):
        raise FormatError(f"{path}: expected vertex x y z [label]")
    body = lines[end + 1:]
    if len(body) != count:
        raise FormatError(f"{path}: header declares {count} vertices, found {len(body)}")
    pts, labels = [], []
    for k, line in enumerate(body):
        fields = line.split()
        if len(fields) != len(props):
            raise FormatError(f"{path}:{end + 2 + k}: expected {len(props)} values")
        pts.append(_floats(fields[:3], end + 2 + k, path))
        if len(props) == 4:
            labels.append(int(fields[3]))
    return np.array(pts, dtype=float).reshape(-1, 3), (np.array(labels, int) if len(props) == 4 else None)


def write_ply(path, points, labels=None):
    Path(path).write_text(format_ply(points, labels))


def read_ply(path):
    return parse_ply(Path(path).read_text(), path)


# -- benchmark tables -------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def format_stats(summaries) -> str:
    rows = [[s.solver, s.config, fmt(s.sigma_px), s.n_trials, s.n_failed,
             fmt(s.r_err_q1), fmt(s.r_err_med), fmt(s.r_err_q3),
             fmt(s.t_err_q1), fmt(s.t_err_med), fmt(s.t_err_q3)] for s in summaries]
    return _csv_text(STATS_HEADER, rows)


def parse_stats(text: str, path="<stats>") -> list:
    from .bench import ErrorSummary

    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or rows[0] != STATS_HEADER:
        raise FormatError(f"{path}:1: unexpected stats header")
    out = []
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != len(STATS_HEADER):
            raise FormatError(f"{path}:{lineno}: expected {len(STATS_HEADER)} fields")
        try:
            out.append(ErrorSummary(r[0], r[1], float(r[2]), int(r[3]), int(r[4]),
                                    *(float(v) for v in r[5:])))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed number") from None
    return out


def format_long(results) -> str:
    rows = []
    counters: dict = {}
    for r in results:
        key = (r.solver, r.config, r.sigma_px)
        k = counters.get(key, 0)
        counters[key] = k + 1
        rows.append([r.solver, r.config, fmt(r.sigma_px), k, r.seed, int(r.failed),
                     fmt(r.r_err), fmt(r.t_err)])
    return _csv_text(LONG_HEADER, rows)


def write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
