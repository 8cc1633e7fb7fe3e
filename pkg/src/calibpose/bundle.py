"""Bundle adjustment: Levenberg-Marquardt on total squared reprojection error.

Camera parameters are updated with a left-multiplied rotation increment,
``R <- exp([w]x) R`` and ``t <- t + dt``, so the Jacobian of the camera-frame
point ``p = R X + t`` is ``dp/dw = -[p - t]x``, ``dp/dt = I`` and ``dp/dX = R``.
Landmarks are eliminated with a dense Schur complement.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CheiralityError
from .geometry import Pose, rotvec_to_matrix

TERM_GRADIENT = "gradient below tolerance"
TERM_STEP = "step below tolerance"
TERM_COST = "cost change below tolerance"
TERM_MAX_ITER = "maximum iterations reached"
TERM_DAMPING = "damping limit reached"

_MAX_DAMPING = 1e16


@dataclass(frozen=True)
class LmConfig:
    max_iterations: int = 100
    initial_damping: float = 1e-3
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    cost_tolerance: float = 1e-12
    min_damping: float = 1e-12

    def __post_init__(self):
        if int(self.max_iterations) < 0:
            raise ValueError("max_iterations must be non-negative")
        for key in ("initial_damping", "gradient_tolerance", "step_tolerance", "cost_tolerance"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")


@dataclass
class BundleProblem:
    """Cameras, landmarks and the observations tying them together.

    ``fixed[c]`` freezes camera ``c`` completely.  ``scale_camera`` (optional)
    names a camera whose translation norm is held constant, which fixes the global
    scale of a reconstruction that is otherwise only known up to similarity.
    """

    cameras: list
    points: np.ndarray
    cam_idx: np.ndarray
    pt_idx: np.ndarray
    obs: np.ndarray
    fixed: np.ndarray
    scale_camera: int | None = None

    def __post_init__(self):
        self.cameras = list(self.cameras)
        self.points = np.array(self.points, dtype=float).reshape(-1, 3)
        self.cam_idx = np.asarray(self.cam_idx, dtype=int).ravel()
        self.pt_idx = np.asarray(self.pt_idx, dtype=int).ravel()
        self.obs = np.asarray(self.obs, dtype=float).reshape(-1, 2)
        self.fixed = np.asarray(self.fixed, dtype=bool).ravel()

    def validate(self):
        n_cam, n_pt = len(self.cameras), len(self.points)
        if not (len(self.cam_idx) == len(self.pt_idx) == len(self.obs)):
            raise ValueError("observation arrays differ in length")
        if len(self.fixed) != n_cam:
            raise ValueError("one fixed flag per camera is required")
        if not self.fixed.any():
            raise ValueError("at least one camera must be fixed")
        if len(self.obs) and (self.cam_idx.min() < 0 or self.cam_idx.max() >= n_cam
                              or self.pt_idx.min() < 0 or self.pt_idx.max() >= n_pt):
            raise ValueError("observation references an unknown camera or landmark")
        if n_pt and np.bincount(self.pt_idx, minlength=n_pt).min() < 2:
            raise ValueError("every landmark needs at least two observations")
        if self.scale_camera is not None:
            if not 0 <= self.scale_camera < n_cam or self.fixed[self.scale_camera]:
                raise ValueError("scale_camera must be a free camera")
            if np.linalg.norm(self.cameras[self.scale_camera].translation) == 0:
                raise ValueError("scale_camera has zero translation")


@dataclass
class BundleReport:
    initial_cost: float
    final_cost: float
    iterations: int
    accepted_steps: int
    termination: str
    cost_history: list = field(default_factory=list)


def _stack(cameras):
    r = np.array([c.rotation for c in cameras]).reshape(-1, 3, 3)
    t = np.array([c.translation for c in cameras]).reshape(-1, 3)
    return r, t


def _camera_points(rot, trans, points, cam_idx, pt_idx):
    return np.einsum("kij,kj->ki", rot[cam_idx], points[pt_idx]) + trans[cam_idx]


def residuals(p: BundleProblem) -> np.ndarray:
    """Per-observation reprojection residuals ``(K, 2)`` (projection minus observation)."""
    rot, trans = _stack(p.cameras)
    cam = _camera_points(rot, trans, p.points, p.cam_idx, p.pt_idx)
    return cam[:, :2] / cam[:, 2:3] - p.obs


def total_cost(p: BundleProblem) -> float:
    """Sum of squared reprojection errors."""
    rot, trans = _stack(p.cameras)
    cam = _camera_points(rot, trans, p.points, p.cam_idx, p.pt_idx)
    bad = np.flatnonzero(cam[:, 2] <= 0)
    if len(bad):
        raise CheiralityError(f"non-positive depth for observations {bad.tolist()}")
    r = cam[:, :2] / cam[:, 2:3] - p.obs
    return float(np.sum(r * r))


def _jacobians(rot, trans, points, cam_idx, pt_idx, obs):
    """Residuals ``(K, 2)``, camera Jacobians ``(K, 2, 6)`` and point Jacobians ``(K, 2, 3)``."""
    cam = _camera_points(rot, trans, points, cam_idx, pt_idx)
    z = cam[:, 2]
    r = cam[:, :2] / z[:, None] - obs
    jproj = np.zeros((len(cam), 2, 3))
    jproj[:, 0, 0] = 1.0 / z
    jproj[:, 1, 1] = 1.0 / z
    jproj[:, 0, 2] = -cam[:, 0] / z**2
    jproj[:, 1, 2] = -cam[:, 1] / z**2
    q = cam - trans[cam_idx]  # R X
    neg_skew = np.zeros((len(cam), 3, 3))
    neg_skew[:, 0, 1], neg_skew[:, 0, 2] = q[:, 2], -q[:, 1]
    neg_skew[:, 1, 0], neg_skew[:, 1, 2] = -q[:, 2], q[:, 0]
    neg_skew[:, 2, 0], neg_skew[:, 2, 1] = q[:, 1], -q[:, 0]
    jcam = np.concatenate([jproj @ neg_skew, jproj], axis=2)
    jpt = jproj @ rot[cam_idx]
    return r, jcam, jpt, z


def observation_jacobian(pose: Pose, point, obs):
    """Residual (2,), d/d(w, dt) (2x6) and d/dX (2x3) for one observation."""
    rot, trans = _stack([pose])
    r, jc, jp, _ = _jacobians(rot, trans, np.asarray(point, float).reshape(1, 3),
                              np.zeros(1, int), np.zeros(1, int),
                              np.asarray(obs, float).reshape(1, 2))
    return r[0], jc[0], jp[0]


def apply_camera_update(pose: Pose, delta) -> Pose:
    delta = np.asarray(delta, dtype=float)
    return Pose(rotvec_to_matrix(delta[:3]) @ pose.rotation, pose.translation + delta[3:])


def _tangent_basis(t: np.ndarray) -> np.ndarray:
    """Two orthonormal vectors perpendicular to ``t``, as columns."""
    u = t / np.linalg.norm(t)
    _, _, vt = np.linalg.svd(u[None, :])
    return vt[1:].T


def _camera_bases(p: BundleProblem) -> np.ndarray:
    """Per camera a 6x6 map from its free parameters to (w, dt); unused columns are zero."""
    n = len(p.cameras)
    bases = np.zeros((n, 6, 6))
    for c in range(n):
        if p.fixed[c]:
            continue
        if c == p.scale_camera:
            bases[c, :3, :3] = np.eye(3)
            bases[c, 3:, 3:5] = _tangent_basis(p.cameras[c].translation)
        else:
            bases[c] = np.eye(6)
    return bases


def _update_cameras(p: BundleProblem, bases, dcam) -> list:
    out = list(p.cameras)
    for c in range(len(out)):
        if p.fixed[c]:
            continue
        delta = bases[c] @ dcam[c]
        pose = apply_camera_update(out[c], delta)
        if c == p.scale_camera:
            norm = np.linalg.norm(out[c].translation)
            t = pose.translation
            pose = Pose(pose.rotation, t * (norm / np.linalg.norm(t)))
        out[c] = pose
    return out


def _point_pairs(pt_idx: np.ndarray, n_pt: int):
    """All ordered pairs of observations that share a landmark."""
    order = np.argsort(pt_idx, kind="stable")
    counts = np.bincount(pt_idx, minlength=n_pt)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    first, second = [], []
    for m in np.unique(counts):
        if m == 0:
            continue
        pts = np.flatnonzero(counts == m)
        members = order[starts[pts][:, None] + np.arange(m)]
        first.append(np.repeat(members, m, axis=1).ravel())
        second.append(np.tile(members, (1, m)).ravel())
    if not first:
        return np.zeros(0, int), np.zeros(0, int)
    return np.concatenate(first), np.concatenate(second)


class _Solver:
    """Normal equations of one problem structure, reused across iterations."""

    def __init__(self, p: BundleProblem):
        self.n_cam = len(p.cameras)
        self.n_pt = len(p.points)
        self.pair_a, self.pair_b = _point_pairs(p.pt_idx, self.n_pt)
        self.bases = _camera_bases(p)
        active = np.any(self.bases != 0, axis=1)  # (n_cam, 6) used parameters
        self.active = active.ravel()

    def linearize(self, p: BundleProblem):
        # The frozen-scale basis must stay perpendicular to the current translation.
        self.bases = _camera_bases(p)
        rot, trans = _stack(p.cameras)
        r, jcam, jpt, _ = _jacobians(rot, trans, p.points, p.cam_idx, p.pt_idx, p.obs)
        jcam = jcam @ self.bases[p.cam_idx]
        k = len(r)
        u = np.zeros((self.n_cam, 6, 6))
        np.add.at(u, p.cam_idx, np.einsum("kai,kaj->kij", jcam, jcam))
        v = np.zeros((self.n_pt, 3, 3))
        np.add.at(v, p.pt_idx, np.einsum("kai,kaj->kij", jpt, jpt))
        w = np.einsum("kai,kaj->kij", jcam, jpt)  # (K, 6, 3)
        gc = np.zeros((self.n_cam, 6))
        np.add.at(gc, p.cam_idx, np.einsum("kai,ka->ki", jcam, r))
        gp = np.zeros((self.n_pt, 3))
        np.add.at(gp, p.pt_idx, np.einsum("kai,ka->ki", jpt, r))
        self.parts = (u, v, w, gc, gp, k)
        return np.concatenate([gc.ravel()[self.active], gp.ravel()])

    def solve(self, p: BundleProblem, lam: float):
        u, v, w, gc, gp, _ = self.parts
        du = np.einsum("nii->ni", u)
        dv = np.einsum("nii->ni", v)
        u = u + lam * np.einsum("ni,ij->nij", np.maximum(du, 1e-12), np.eye(6))
        v = v + lam * np.einsum("ni,ij->nij", np.maximum(dv, 1e-12), np.eye(3))
        vinv = np.linalg.inv(v)
        y = np.einsum("kij,kjl->kil", w, vinv[p.pt_idx])  # W V^-1 per observation

        n6 = 6 * self.n_cam
        s = np.zeros((self.n_cam, self.n_cam, 6, 6))
        idx = np.arange(self.n_cam)
        s[idx, idx] = u
        np.add.at(s, (p.cam_idx[self.pair_a], p.cam_idx[self.pair_b]),
                  -np.einsum("kij,klj->kil", y[self.pair_a], w[self.pair_b]))
        s = s.transpose(0, 2, 1, 3).reshape(n6, n6)
        rhs = -gc.copy()
        vg = np.einsum("nij,nj->ni", vinv, gp)
        np.add.at(rhs, p.cam_idx, np.einsum("kij,kj->ki", w, vg[p.pt_idx]))
        act = self.active
        dcam = np.zeros(n6)
        if act.any():
            s_act = s[np.ix_(act, act)]
            try:
                dcam[act] = np.linalg.solve(s_act, rhs.ravel()[act])
            except np.linalg.LinAlgError:
                dcam[act] = np.linalg.lstsq(s_act, rhs.ravel()[act], rcond=None)[0]
        dcam = dcam.reshape(self.n_cam, 6)
        # Back substitution: V dX = -gp - W^T dc
        wt_dc = np.zeros((self.n_pt, 3))
        np.add.at(wt_dc, p.pt_idx, np.einsum("kij,ki->kj", w, dcam[p.cam_idx]))
        dpt = -np.einsum("nij,nj->ni", vinv, gp + wt_dc)
        return dcam, dpt


def optimize(p: BundleProblem, cfg: LmConfig | None = None):
    """Minimize total squared reprojection error; returns ``(refined problem, report)``."""
    cfg = cfg or LmConfig()
    p.validate()
    cost = total_cost(p)
    report = BundleReport(cost, cost, 0, 0, TERM_MAX_ITER, [cost])
    if len(p.obs) == 0:
        report.termination = TERM_GRADIENT
        return p, report
    solver = _Solver(p)
    lam = cfg.initial_damping
    grad = solver.linearize(p)
    for it in range(1, int(cfg.max_iterations) + 1):
        if np.max(np.abs(grad), initial=0.0) <= cfg.gradient_tolerance:
            report.termination = TERM_GRADIENT
            break
        report.iterations = it
        dcam, dpt = solver.solve(p, lam)
        step = np.concatenate([dcam.ravel(), dpt.ravel()])
        scale = np.linalg.norm(p.points) + sum(np.linalg.norm(c.translation) for c in p.cameras)
        if np.linalg.norm(step) <= cfg.step_tolerance * (scale + cfg.step_tolerance):
            report.termination = TERM_STEP
            break
        trial = replace(p, cameras=_update_cameras(p, solver.bases, dcam),
                        points=p.points + dpt)
        try:
            new_cost = total_cost(trial) if np.all(np.isfinite(step)) else np.inf
        except CheiralityError:
            new_cost = np.inf
        if new_cost < cost:
            decrease = cost - new_cost
            p, cost = trial, new_cost
            report.accepted_steps += 1
            report.cost_history.append(cost)
            lam = max(lam / 10.0, cfg.min_damping)
            if decrease <= cfg.cost_tolerance * (cost + decrease):
                report.termination = TERM_COST
                break
            grad = solver.linearize(p)
        else:
            lam *= 10.0
            if lam > _MAX_DAMPING:
                report.termination = TERM_DAMPING
                break
    else:
        report.termination = TERM_MAX_ITER
    report.final_cost = cost
    return p, report


def refine_pose(pose: Pose, world, obs, cfg: LmConfig | None = None, iterations: int = 20) -> Pose:
    """Levenberg-Marquardt on a single camera with the 3D points held fixed."""
    cfg = cfg or LmConfig()
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    obs = np.asarray(obs, dtype=float).reshape(-1, 2)
    idx = np.zeros(len(world), dtype=int)
    pts = np.arange(len(world))

    def cost_of(ps: Pose) -> float:
        cam = ps.transform(world)
        if np.any(cam[:, 2] <= 0):
            return np.inf
        r = cam[:, :2] / cam[:, 2:3] - obs
        return float(np.sum(r * r))

    cost = cost_of(pose)
    if not np.isfinite(cost):
        return pose
    lam = cfg.initial_damping
    for _ in range(iterations):
        rot, trans = _stack([pose])
        r, jc, _, _ = _jacobians(rot, trans, world, idx, pts, obs)
        j = jc.reshape(-1, 6)
        g = j.T @ r.ravel()
        if np.max(np.abs(g)) <= cfg.gradient_tolerance:
            break
        a = j.T @ j
        improved = False
        while lam <= _MAX_DAMPING:
            step = np.linalg.solve(a + lam * np.diag(np.maximum(np.diag(a), 1e-12)), -g)
            trial = apply_camera_update(pose, step)
            new_cost = cost_of(trial)
            if new_cost < cost:
                improved = cost - new_cost > cfg.cost_tolerance * cost
                pose, cost = trial, new_cost
                lam = max(lam / 10.0, cfg.min_damping)
                break
            lam *= 10.0
        if not improved:
            break
    return pose
