import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from calibpose import formats
from calibpose.bench import ErrorSummary
from calibpose.geometry import Pose, random_rotation
from calibpose.sfm import ImageFeatures, Intrinsics

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6).flatmap(lambda d: arrays(float, st.tuples(st.integers(0, 8), st.just(d + 2)),
                                                  elements=finite)))
def test_keypoints_round_trip(arr):
    f = ImageFeatures(arr[:, :2], arr[:, 2:])
    text = formats.format_keypoints(f)
    g = formats.parse_keypoints(text)
    np.testing.assert_array_equal(g.positions, f.positions)
    np.testing.assert_array_equal(g.descriptors, f.descriptors)
    assert formats.format_keypoints(g) == text


def test_keypoint_errors():
    with pytest.raises(formats.FormatError, match="header"):
        formats.parse_keypoints("D 2\n1 2 3 4\n", "k.txt")
    with pytest.raises(formats.FormatError, match="declares 2 keypoints, found 1"):
        formats.parse_keypoints("D 2 N 2\n1 2 3 4\n", "k.txt")
    with pytest.raises(formats.FormatError, match=r"k.txt:3: expected 4 values"):
        formats.parse_keypoints("D 2 N 2\n1 2 3 4\n1 2 3\n", "k.txt")
    with pytest.raises(formats.FormatError, match="empty"):
        formats.parse_keypoints("# nothing\n", "k.txt")


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e6), st.floats(1e-3, 1e6), finite, finite, finite)
def test_intrinsics_round_trip(fx, fy, cx, cy, s):
    k = Intrinsics(fx, fy, cx, cy, s)
    text = formats.format_intrinsics(k)
    assert formats.parse_intrinsics(text) == k
    assert formats.format_intrinsics(formats.parse_intrinsics(text)) == text


def test_intrinsics_errors():
    with pytest.raises(formats.FormatError, match="k.txt:1: focal lengths fx and fy must be positive"):
        formats.parse_intrinsics("0 1500 648 486 0\n", "k.txt")
    with pytest.raises(formats.FormatError, match="one line"):
        formats.parse_intrinsics("1500 1500 648 486\n", "k.txt")
    with pytest.raises(formats.FormatError, match="non-finite"):
        formats.parse_intrinsics("nan 1500 648 486 0\n", "k.txt")


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.tuples(st.integers(0, 10), st.just(4)), elements=finite))
def test_correspondences_round_trip(arr):
    text = formats.format_correspondences(arr[:, :2], arr[:, 2:])
    a, b = formats.parse_correspondences(text)
    np.testing.assert_array_equal(np.hstack([a, b]), arr)
    assert formats.format_correspondences(a, b) == text


def test_correspondence_errors():
    with pytest.raises(formats.FormatError, match=r"c.txt:2: expected numbers, got '1 2 x 4'"):
        formats.parse_correspondences("1 2 3 4\n1 2 x 4\n", "c.txt")
    with pytest.raises(formats.FormatError, match=r"c.txt:1: expected 'u1 v1 u2 v2', got 3"):
        formats.parse_correspondences("1 2 3\n", "c.txt")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 6))
def test_poses_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    cams = [(int(f), Pose(random_rotation(rng), rng.normal(size=3) * 10.0 ** rng.integers(-5, 5)))
            for f in rng.choice(100, n, replace=False)]
    text = formats.format_poses(cams)
    back = formats.parse_poses(text)
    for (fa, a), (fb, b) in zip(cams, back):
        assert fa == fb
        assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)
    assert formats.format_poses(back) == text
    assert text.splitlines()[0].split(",") == formats.POSE_HEADER


def test_pose_errors():
    head = ",".join(formats.POSE_HEADER)
    with pytest.raises(formats.FormatError, match="p.csv:2: rotation"):
        formats.parse_poses(head + "\n0," + ",".join(["2"] * 9 + ["0"] * 3) + "\n", "p.csv")
    with pytest.raises(formats.FormatError, match="header"):
        formats.parse_poses("frame,x\n", "p.csv")


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.tuples(st.integers(0, 12), st.just(3)), elements=finite), st.booleans())
def test_ply_round_trip(pts, with_labels):
    labels = list(range(len(pts))) if with_labels else None
    text = formats.format_ply(pts, labels)
    got, lab = formats.parse_ply(text)
    np.testing.assert_array_equal(got, pts)
    assert (lab is None) == (not with_labels)
    if with_labels:
        np.testing.assert_array_equal(lab, labels)
    assert formats.format_ply(got, lab) == text


def test_ply_errors():
    with pytest.raises(formats.FormatError, match="ASCII PLY"):
        formats.parse_ply("PLY\n")
    text = formats.format_ply(np.zeros((2, 3)))
    with pytest.raises(formats.FormatError, match="declares 2 vertices, found 1"):
        formats.parse_ply(text.rsplit("\n", 2)[0] + "\n")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["five_point", "seven_point"]), st.floats(0, 5),
                          st.integers(0, 10**4), st.lists(st.floats(0, 4), min_size=6, max_size=6)),
                max_size=5))
def test_stats_round_trip(rows):
    sums = [ErrorSummary(s, "general", sig, n, n // 7, *q) for s, sig, n, q in rows]
    text = formats.format_stats(sums)
    assert formats.parse_stats(text) == sums
    assert formats.format_stats(formats.parse_stats(text)) == text


def test_stats_header_and_nan():
    s = ErrorSummary("seven_point", "general", 0.0, 1, 1, *[float("nan")] * 6)
    text = formats.format_stats([s])
    assert text.splitlines()[0] == ",".join(formats.STATS_HEADER)
    back = formats.parse_stats(text)[0]
    assert np.isnan(back.r_err_med) and back.n_failed == 1


def test_file_helpers(tmp_path):
    f = ImageFeatures([[1.5, 2.0]], [[0.25, -1e-300]])
    formats.write_keypoints(tmp_path / "a.txt", f)
    (tmp_path / ".hidden").write_text("x")
    (tmp_path / "sub").mkdir()
    formats.write_keypoints(tmp_path / "b.txt", f)
    assert [p.name for p in formats.list_feature_files(tmp_path)] == ["a.txt", "b.txt"]
    assert formats.read_keypoints(tmp_path / "a.txt").name == "a.txt"
    formats.write_text(tmp_path / "x" / "y" / "z.csv", "1\n")
    assert (tmp_path / "x" / "y" / "z.csv").read_text() == "1\n"
    formats.write_json(tmp_path / "r.json", {"b": 1, "a": [1.0]})
    assert (tmp_path / "r.json").read_text() == '{\n  "a": [\n    1.0\n  ],\n  "b": 1\n}\n'
