import numpy as np
import pytest

from calibpose.geometry import Pose, rotation_about

# Filled by tests/test_acceptance.py, printed once at the end of the run.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def random_pose(rng, baseline=1.0, max_angle=np.pi / 4) -> Pose:
    """Second camera of a two-view rig: random axis, rotation up to ``max_angle``, unit baseline."""
    r = rotation_about(rng.normal(size=3), rng.uniform(0, max_angle))
    t = rng.normal(size=3)
    return Pose(r, baseline * t / np.linalg.norm(t))


def visible_scene(rng, pose: Pose, n: int, depth=(2.0, 6.0), spread=1.5):
    """Random points in front of the identity camera and ``pose``, with their projections."""
    pts = np.zeros((0, 3))
    for _ in range(100):
        x = np.column_stack([rng.uniform(-spread, spread, (4 * n, 2)), rng.uniform(*depth, 4 * n)])
        pts = np.vstack([pts, x[pose.transform(x)[:, 2] > 0.1]])
        if len(pts) >= n:
            break
    else:
        raise RuntimeError("camera 2 sees none of the sampled points")
    pts = pts[:n]
    return pts, pts[:, :2] / pts[:, 2:], pose.project(pts)


def aligned_frobenius(a, b) -> float:
    """Distance between two matrices after normalizing scale and sign."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
