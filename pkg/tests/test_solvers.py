import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calibpose.errors import DegenerateConfigurationError
from calibpose.geometry import (Pose, essential_from_pose, essential_residual, random_rotation,
                                rotation_error)
from calibpose.solvers import (det_pencil, five_point_nister, p3p_finsterwalder,
                               project_to_essential, seven_point)

from conftest import aligned_frobenius, random_pose, visible_scene

seeds = st.integers(0, 2**32 - 1)


def best_distance(cands, e):
    return min(aligned_frobenius(c, e) for c in cands)


# five-point

@settings(max_examples=100, deadline=None)
@given(seeds)
def test_five_point_contains_truth(seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    _, x1, x2 = visible_scene(rng, pose, 5)
    cands = five_point_nister(x1, x2)
    assert 1 <= len(cands) <= 10
    assert best_distance(cands, essential_from_pose(pose)) < 1e-6
    for e in cands:
        assert abs(np.linalg.det(e)) < 1e-6
        assert essential_residual(e) < 1e-6
        assert np.max(np.abs(np.einsum("ni,ij,nj->n", np.c_[x2, np.ones(5)], e, np.c_[x1, np.ones(5)]))) < 1e-8


def test_five_point_near_planar(rng):
    for _ in range(50):
        pose = random_pose(rng)
        # depth extent is 1% of the width
        pts = np.column_stack([rng.uniform(-1, 1, (5, 2)), 4.0 + rng.uniform(-0.01, 0.01, 5)])
        if np.any(pose.transform(pts)[:, 2] <= 0.1):
            continue
        cands = five_point_nister(pts[:, :2] / pts[:, 2:], pose.project(pts))
        assert best_distance(cands, essential_from_pose(pose)) < 1e-6


def test_five_point_exactly_planar(rng):
    pose = random_pose(rng)
    pts = np.column_stack([rng.uniform(-1, 1, (5, 2)), np.full(5, 4.0)])
    cands = five_point_nister(pts[:, :2] / 4.0, pose.project(pts))
    assert best_distance(cands, essential_from_pose(pose)) < 1e-6


def test_five_point_duplicates(rng):
    pose = random_pose(rng)
    _, x1, x2 = visible_scene(rng, pose, 5)
    x1[1], x2[1] = x1[0], x2[0]
    with pytest.raises(DegenerateConfigurationError):
        five_point_nister(x1, x2)


def test_five_point_wrong_count(rng):
    with pytest.raises(ValueError):
        five_point_nister(rng.normal(size=(6, 2)), rng.normal(size=(6, 2)))


@pytest.mark.slow
def test_five_point_many_trials():
    rng = np.random.default_rng(2024)
    bad = 0
    trials = 10_000
    for _ in range(trials):
        pose = random_pose(rng)
        _, x1, x2 = visible_scene(rng, pose, 5)
        try:
            cands = five_point_nister(x1, x2)
        except DegenerateConfigurationError:
            bad += 1  # flagged, not silently wrong
            continue
        if not cands or best_distance(cands, essential_from_pose(pose)) >= 1e-6:
            bad += 1
    assert bad <= trials // 1000


# seven-point

@settings(max_examples=100, deadline=None)
@given(seeds)
def test_seven_point_contains_truth(seed):
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    _, x1, x2 = visible_scene(rng, pose, 7)
    cands = seven_point(x1, x2)
    assert 1 <= len(cands) <= 3
    assert best_distance(cands, essential_from_pose(pose)) < 1e-6
    for f in cands:
        assert abs(np.linalg.det(f)) < 1e-8 * np.linalg.norm(f) ** 3


def test_seven_point_single_real_root():
    rng = np.random.default_rng(3)
    for _ in range(200):
        pose = random_pose(rng)
        _, x1, x2 = visible_scene(rng, pose, 7)
        a = np.c_[x2[:, :1] * x1, x2[:, :1], x2[:, 1:] * x1, x2[:, 1:], x1, np.ones(7)]
        null = np.linalg.svd(a)[2][-2:]
        roots = np.polynomial.polynomial.polyroots(det_pencil(null[0].reshape(3, 3), null[1].reshape(3, 3)))
        if np.sum(np.abs(roots.imag) < 1e-9) == 1:
            assert len(seven_point(x1, x2)) == 1
            return
    pytest.fail("no single-root instance found")


def test_det_pencil_matches_determinant(rng):
    a, b = rng.normal(size=(2, 3, 3))
    coeffs = det_pencil(a, b)
    for t in (-1.3, 0.0, 0.7, 2.0):
        assert np.polynomial.polynomial.polyval(t, coeffs) == pytest.approx(np.linalg.det(a + t * b), rel=1e-12, abs=1e-12)


def test_seven_point_duplicates(rng):
    pose = random_pose(rng)
    _, x1, x2 = visible_scene(rng, pose, 7)
    x1[3], x2[3] = x1[0], x2[0]
    with pytest.raises(DegenerateConfigurationError):
        seven_point(x1, x2)


# projection onto essential matrices

def test_project_idempotent(rng):
    e = essential_from_pose(random_pose(rng)) * np.sqrt(2)  # singular values (1, 1, 0)
    np.testing.assert_allclose(project_to_essential(e), e, atol=1e-12)


def test_project_diagonal():
    e = project_to_essential(np.diag([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(np.linalg.svd(e, compute_uv=False), [1, 1, 0], atol=1e-15)


def test_project_is_closest(rng):
    f = rng.normal(size=(3, 3))
    e = project_to_essential(f)
    d = np.linalg.norm(f - e)
    # every matrix U diag(1,1,0) V^T with random rotations is at least as far
    for _ in range(20_000):
        u, v = random_rotation(rng), random_rotation(rng)
        assert np.linalg.norm(f - u @ np.diag([1.0, 1.0, 0.0]) @ v.T) >= d - 1e-12


# P3P

def reprojection(pose, world, obs):
    return np.max(np.abs(pose.project(world) - obs))


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_p3p_recovers_pose(seed):
    rng = np.random.default_rng(seed)
    pose = Pose(random_rotation(rng), rng.normal(size=3))
    cam = np.column_stack([rng.uniform(-1, 1, (3, 2)), rng.uniform(2, 6, 3)])
    world = (cam - pose.translation) @ pose.rotation  # inverse transform
    obs = cam[:, :2] / cam[:, 2:]
    area = np.linalg.norm(np.cross(world[1] - world[0], world[2] - world[0]))
    if area < 1e-2:
        return
    cands = p3p_finsterwalder(world, obs)
    assert 1 <= len(cands) <= 4
    best = min(cands, key=lambda p: rotation_error(pose.rotation, p.rotation))
    assert rotation_error(pose.rotation, best.rotation) < 1e-8
    assert np.linalg.norm(best.translation - pose.translation) < 1e-8
    for p in cands:
        assert p.is_valid()
        assert reprojection(p, world, obs) < 1e-8


def test_p3p_equilateral_on_axis():
    ang = np.deg2rad([90, 210, 330])
    world = np.column_stack([np.cos(ang), np.sin(ang), np.full(3, 4.0)])
    obs = world[:, :2] / 4.0
    cands = p3p_finsterwalder(world, obs)
    best = min(cands, key=lambda p: rotation_error(np.eye(3), p.rotation))
    assert rotation_error(np.eye(3), best.rotation) < 1e-12
    assert np.linalg.norm(best.translation) < 1e-12


def test_p3p_collinear():
    world = np.array([[0.0, 0, 4], [1, 0, 4], [2, 0, 4]])
    with pytest.raises(DegenerateConfigurationError):
        p3p_finsterwalder(world, world[:, :2] / 4.0)
