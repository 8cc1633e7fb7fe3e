import numpy as np
import pytest

from calibpose.bundle import (TERM_GRADIENT, BundleProblem, LmConfig, apply_camera_update, optimize,
                              observation_jacobian, refine_pose, residuals, total_cost)
from calibpose.errors import CheiralityError
from calibpose.geometry import (Pose, random_rotation, reprojection_error, rotation_about,
                                rotation_error)


def ring_problem(rng, n_cam=4, n_pt=60, sigma=0.0):
    """Cameras on an arc looking at a unit cloud centered 5 units in front of camera 0."""
    center = np.array([0.0, 0.0, 5.0])
    cams = []
    for k in range(n_cam):
        r = rotation_about([0, 1, 0], np.deg2rad(-10.0 * k))
        c = center + rotation_about([0, 1, 0], np.deg2rad(10.0 * k)) @ (-center)
        cams.append(Pose.from_center(r, c))
    pts = center + rng.uniform(-1, 1, (n_pt, 3))
    cam_idx = np.repeat(np.arange(n_cam), n_pt)
    pt_idx = np.tile(np.arange(n_pt), n_cam)
    obs = np.vstack([c.project(pts) for c in cams]) + rng.normal(0, sigma, (n_cam * n_pt, 2))
    fixed = np.zeros(n_cam, bool)
    fixed[0] = True
    return BundleProblem(cams, pts, cam_idx, pt_idx, obs, fixed, scale_camera=1)


def perturb(rng, p, angle_deg=0.5, rel=0.01):
    cams = list(p.cameras)
    for c in range(1, len(cams)):
        r = rotation_about(rng.normal(size=3), np.deg2rad(angle_deg)) @ cams[c].rotation
        t = cams[c].translation
        if c == p.scale_camera:
            # keep the frozen norm, tilt the direction by about ``rel``
            t = rotation_about(rng.normal(size=3), rel) @ t
        else:
            t = t + rel * np.linalg.norm(t) * rng.normal(size=3) / np.sqrt(3)
        cams[c] = Pose(r, t)
    pts = p.points + rel * rng.normal(size=p.points.shape)
    return BundleProblem(cams, pts, p.cam_idx, p.pt_idx, p.obs, p.fixed, p.scale_camera)


# Jacobian

def finite_difference(pose, point, obs, h=1e-6):
    def res(ps, x):
        return ps.project(x) - obs

    jc = np.zeros((2, 6))
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        jc[:, i] = (res(apply_camera_update(pose, d), point) - res(apply_camera_update(pose, -d), point)) / (2 * h)
    jp = np.zeros((2, 3))
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        jp[:, i] = (res(pose, point + d) - res(pose, point - d)) / (2 * h)
    return jc, jp


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        cam = np.array([*rng.uniform(-1, 1, 2), rng.uniform(2, 6)])
        point = pose.rotation.T @ (cam - pose.translation)
        obs = pose.project(point) + rng.normal(0, 1e-2, 2)
        r, jc, jp = observation_jacobian(pose, point, obs)
        np.testing.assert_allclose(r, pose.project(point) - obs, atol=1e-15)
        fc, fp = finite_difference(pose, point, obs)
        worst = max(worst, np.linalg.norm(jc - fc) / np.linalg.norm(fc),
                    np.linalg.norm(jp - fp) / np.linalg.norm(fp))
    assert worst < 1e-5


# total_cost

def test_total_cost_exact_and_offset(rng):
    p = ring_problem(rng)
    assert total_cost(p) < 1e-18
    p.obs[7] += [1e-3, 0.0]
    assert total_cost(p) == pytest.approx(1e-6, rel=1e-6)


def test_total_cost_matches_per_observation_sum(rng):
    p = ring_problem(rng, sigma=1e-3)
    expected = sum(reprojection_error(p.cameras[c], p.points[j], o) ** 2
                   for c, j, o in zip(p.cam_idx, p.pt_idx, p.obs))
    assert total_cost(p) == pytest.approx(expected, rel=1e-12)
    assert np.sum(residuals(p) ** 2) == pytest.approx(expected, rel=1e-12)


def test_total_cost_negative_depth(rng):
    p = ring_problem(rng, n_pt=5)
    p.points[3] = [0.0, 0.0, -5.0]
    with pytest.raises(CheiralityError, match=r"\[3, 8, 13, 18\]"):
        total_cost(p)


def test_problem_validation(rng):
    p = ring_problem(rng, n_pt=5)
    p.fixed[:] = False
    with pytest.raises(ValueError, match="fixed"):
        optimize(p)
    q = ring_problem(rng, n_pt=5)
    q.pt_idx[q.pt_idx == 2] = 0  # landmark 2 loses all observations
    with pytest.raises(ValueError, match="two observations"):
        optimize(q)
    with pytest.raises(ValueError):
        LmConfig(initial_damping=0.0)


# optimize

def test_perturbation_recovery():
    rng = np.random.default_rng(21)
    truth = ring_problem(rng)
    start = perturb(rng, truth)
    out, rep = optimize(start)
    assert rep.initial_cost > 1e-4
    assert rep.final_cost < 1e-16
    for a, b in zip(truth.cameras, out.cameras):
        assert rotation_error(a.rotation, b.rotation) < 1e-6
        assert np.linalg.norm(a.translation - b.translation) < 1e-6
    assert np.linalg.norm(out.cameras[1].translation) == pytest.approx(
        np.linalg.norm(truth.cameras[1].translation), rel=1e-12)


def test_already_optimal(rng):
    p = ring_problem(rng)
    out, rep = optimize(p)
    assert rep.accepted_steps == 0
    assert rep.termination == TERM_GRADIENT


def test_noise_never_increases_cost():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        start = perturb(rng, ring_problem(rng, n_cam=3, n_pt=25, sigma=1e-3))
        out, rep = optimize(start, LmConfig(max_iterations=30))
        assert rep.final_cost < rep.initial_cost
        assert rep.final_cost == pytest.approx(total_cost(out), rel=1e-12)


def test_history_fixed_camera_and_report(rng):
    start = perturb(rng, ring_problem(rng, sigma=1e-3))
    before = start.cameras[0]
    out, rep = optimize(start)
    hist = np.array(rep.cost_history)
    assert len(hist) == rep.accepted_steps + 1
    assert np.all(np.diff(hist) < 0)
    assert rep.final_cost == pytest.approx(total_cost(out), rel=1e-12)
    assert np.array_equal(out.cameras[0].rotation, before.rotation)
    assert np.array_equal(out.cameras[0].translation, before.translation)
    assert rep.termination and rep.iterations >= rep.accepted_steps


def test_landmark_permutation_invariance(rng):
    start = perturb(rng, ring_problem(rng, sigma=1e-3))
    _, rep = optimize(start)
    perm = rng.permutation(len(start.points))
    inv = np.argsort(perm)
    shuffled = BundleProblem(start.cameras, start.points[perm], start.cam_idx, inv[start.pt_idx],
                             start.obs, start.fixed, start.scale_camera)
    _, rep2 = optimize(shuffled)
    assert rep2.final_cost == pytest.approx(rep.final_cost, rel=1e-10)


def test_refine_pose_recovers_camera(rng):
    truth = Pose(random_rotation(rng), rng.normal(size=3))
    cam = np.column_stack([rng.uniform(-1, 1, (30, 2)), rng.uniform(3, 6, 30)])
    world = (cam - truth.translation) @ truth.rotation
    start = Pose(rotation_about([1, 0, 0], 0.01) @ truth.rotation, truth.translation + 0.01)
    got = refine_pose(start, world, truth.project(world))
    assert rotation_error(truth.rotation, got.rotation) < 1e-9
    assert np.linalg.norm(truth.translation - got.translation) < 1e-9
