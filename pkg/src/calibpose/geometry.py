"""Two-view geometry for calibrated cameras.

Conventions used throughout the package:

* A :class:`Pose` maps world coordinates to camera coordinates,
  ``x_cam = R @ X + t``.  The camera center is ``-R.T @ t``.
* Image points are normalized (``K^-1`` already applied), stored as arrays
  of shape ``(2,)`` or ``(N, 2)``.
* For a pair of cameras with camera 1 at the identity, ``E = [t]x R`` and
  ``x2^T E x1 = 0`` for homogeneous normalized points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import (
    CheiralityError,
    DegenerateBaselineError,
    DegenerateInputError,
    IllConditionedError,
)

# Rays closer to parallel than this cannot be triangulated reliably.
MIN_TRIANGULATION_ANGLE = np.deg2rad(0.1)

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rotation matrix for ``angle`` radians about ``axis`` (right hand rule)."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0:
        raise DegenerateInputError("rotation axis has zero length")
    return rotvec_to_matrix(axis / n * angle)


def rotvec_to_matrix(rotvec) -> np.ndarray:
    return _ScipyRotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()


def matrix_to_rotvec(r) -> np.ndarray:
    return _ScipyRotation.from_matrix(np.asarray(r, dtype=float)).as_rotvec()


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return _ScipyRotation.random(random_state=rng).as_matrix()


def is_rotation(r, tol: float = 1e-9) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.all(np.abs(r.T @ r - np.eye(3)) <= tol)
                and abs(np.linalg.det(r) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, rotation, center) -> "Pose":
        """Pose with the given orientation whose optical center is ``center``."""
        rotation = np.asarray(rotation, dtype=float)
        return cls(rotation, -rotation @ np.asarray(center, dtype=float))

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def transform(self, points) -> np.ndarray:
        """World points ``(N, 3)`` or ``(3,)`` into camera coordinates."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def project(self, points) -> np.ndarray:
        cam = self.transform(points)
        return cam[..., :2] / cam[..., 2:3]

    def relative_to(self, other: "Pose") -> "Pose":
        """Pose of ``self`` expressed in the camera frame of ``other``."""
        r = self.rotation @ other.rotation.T
        return Pose(r, self.translation - r @ other.translation)

    def is_valid(self, tol: float = 1e-9) -> bool:
        return is_rotation(self.rotation, tol) and bool(np.all(np.isfinite(self.translation)))

    def __repr__(self) -> str:
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def homogeneous(points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return np.concatenate([points, np.ones(points.shape[:-1] + (1,))], axis=-1)


def essential_from_pose(pose: Pose) -> np.ndarray:
    """Unit Frobenius norm essential matrix of camera ``pose`` relative to the identity camera."""
    t = pose.translation
    n = np.linalg.norm(t)
    if n == 0 or not np.isfinite(n):
        raise DegenerateBaselineError("essential matrix undefined for zero translation")
    e = skew(t / n) @ pose.rotation
    return e / np.linalg.norm(e)


def essential_residual(e) -> float:
    """Trace-constraint residual ``||2EE^TE - tr(EE^T)E|| / ||E||^3`` (zero for a valid E)."""
    e = np.asarray(e, dtype=float)
    n = np.linalg.norm(e)
    if n == 0:
        raise DegenerateInputError("zero matrix")
    eet = e @ e.T
    return float(np.linalg.norm(2.0 * eet @ e - np.trace(eet) * e) / n**3)


def pose_candidates(e) -> list[Pose]:
    """The four (R, t) pairs consistent with an essential matrix, ``||t|| = 1``."""
    u, _, vt = np.linalg.svd(np.asarray(e, dtype=float))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    t = u[:, 2]
    r1 = u @ _W @ vt
    r2 = u @ _W.T @ vt
    return [Pose(r1, t), Pose(r1, -t), Pose(r2, t), Pose(r2, -t)]


def _dlt(pose_a: Pose, pose_b: Pose, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Homogeneous linear triangulation; returns ``(N, 4)`` homogeneous points."""
    pa = np.hstack([pose_a.rotation, pose_a.translation[:, None]])
    pb = np.hstack([pose_b.rotation, pose_b.translation[:, None]])
    a = np.empty((len(xa), 4, 4))
    a[:, 0] = xa[:, :1] * pa[2] - pa[0]
    a[:, 1] = xa[:, 1:2] * pa[2] - pa[1]
    a[:, 2] = xb[:, :1] * pb[2] - pb[0]
    a[:, 3] = xb[:, 1:2] * pb[2] - pb[1]
    # Row equilibration keeps the smallest singular vector meaningful.
    a /= np.linalg.norm(a, axis=2, keepdims=True)
    _, _, vt = np.linalg.svd(a)
    return vt[:, 3, :]


def _dehomogenize(h: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return h[:, :3] / h[:, 3:4]


def ray_angles(pose_a: Pose, pose_b: Pose, xa, xb) -> np.ndarray:
    """Angle between the two viewing rays of each correspondence (radians)."""
    da = homogeneous(np.atleast_2d(xa)) @ pose_a.rotation
    db = homogeneous(np.atleast_2d(xb)) @ pose_b.rotation
    cross = np.linalg.norm(np.cross(da, db), axis=1)
    return np.arctan2(cross, np.einsum("ij,ij->i", da, db))


def _projection_jacobian(cam: np.ndarray) -> np.ndarray:
    """d(pi)/d(p) for pi(p) = p[:2]/p[2], batched ``(N, 2, 3)``."""
    z = cam[:, 2]
    j = np.zeros((len(cam), 2, 3))
    j[:, 0, 0] = 1.0 / z
    j[:, 1, 1] = 1.0 / z
    j[:, 0, 2] = -cam[:, 0] / z**2
    j[:, 1, 2] = -cam[:, 1] / z**2
    return j


def triangulate_points(pose_a: Pose, pose_b: Pose, xa, xb, refine: bool = True):
    """Vectorized triangulation.

    Returns ``(points, ok)`` where ``ok`` flags points that have positive depth in
    both cameras and a ray angle of at least ``MIN_TRIANGULATION_ANGLE``.  Rejected
    rows still hold the (possibly meaningless) linear estimate.
    """
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    if len(xa) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    h = _dlt(pose_a, pose_b, xa, xb)
    pts = _dehomogenize(h)
    finite = np.all(np.isfinite(pts), axis=1)
    pts[~finite] = 0.0
    if refine and finite.any():
        # One Gauss-Newton step on the four reprojection residuals.
        ca = pose_a.transform(pts)
        cb = pose_b.transform(pts)
        with np.errstate(divide="ignore", invalid="ignore"):
            ra = ca[:, :2] / ca[:, 2:3] - xa
            rb = cb[:, :2] / cb[:, 2:3] - xb
            ja = _projection_jacobian(ca) @ pose_a.rotation
            jb = _projection_jacobian(cb) @ pose_b.rotation
        j = np.concatenate([ja, jb], axis=1)
        r = np.concatenate([ra, rb], axis=1)
        jtj = np.einsum("nki,nkj->nij", j, j)
        jtr = np.einsum("nki,nk->ni", j, r)
        usable = finite & np.all(np.isfinite(jtj), axis=(1, 2)) & (np.abs(np.linalg.det(jtj)) > 0)
        if usable.any():
            step = np.linalg.solve(jtj[usable], -jtr[usable][:, :, None])[:, :, 0]
            pts[usable] += step
    za = pose_a.transform(pts)[:, 2]
    zb = pose_b.transform(pts)[:, 2]
    ok = finite & (za > 0) & (zb > 0) & (ray_angles(pose_a, pose_b, xa, xb) >= MIN_TRIANGULATION_ANGLE)
    return pts, ok


def triangulate(pose_a: Pose, pose_b: Pose, xa, xb) -> np.ndarray:
    """Triangulate one correspondence, raising on ill-conditioned or cheirality-violating input."""
    if np.linalg.norm(pose_a.center - pose_b.center) <= 1e-12:
        raise IllConditionedError("cameras share an optical center")
    xa = np.asarray(xa, dtype=float).reshape(1, 2)
    xb = np.asarray(xb, dtype=float).reshape(1, 2)
    if ray_angles(pose_a, pose_b, xa, xb)[0] < MIN_TRIANGULATION_ANGLE:
        raise IllConditionedError("viewing rays are nearly parallel")
    pts, _ = triangulate_points(pose_a, pose_b, xa, xb)
    p = pts[0]
    if not np.all(np.isfinite(p)):
        raise IllConditionedError("point at infinity")
    if pose_a.transform(p)[2] <= 0 or pose_b.transform(p)[2] <= 0:
        raise CheiralityError("triangulated point lies behind a camera")
    return p


def depths(pose: Pose, points) -> np.ndarray:
    return pose.transform(points)[..., 2]


def reprojection_error(pose: Pose, point, obs):
    """Distance in the normalized image plane between the projection of ``point`` and ``obs``.

    Accepts a single point/observation or stacked ``(N, 3)``/``(N, 2)`` arrays.
    """
    cam = pose.transform(point)
    z = cam[..., 2]
    if np.any(z <= 0):
        raise CheiralityError("point has non-positive depth")
    return np.linalg.norm(cam[..., :2] / z[..., None] - np.asarray(obs, dtype=float), axis=-1)


def sampson_distance(e, x1, x2):
    """First-order geometric distance of correspondences to the epipolar constraint.

    This is the square root of the classic Sampson error, so it is measured in
    normalized image units like a reprojection error.  Invariant to the scale of ``e``.
    """
    e = np.asarray(e, dtype=float)
    h1 = homogeneous(x1)
    h2 = homogeneous(x2)
    ex1 = h1 @ e.T
    etx2 = h2 @ e
    num = np.abs(np.sum(h2 * ex1, axis=-1))
    den = np.sqrt(ex1[..., 0] ** 2 + ex1[..., 1] ** 2 + etx2[..., 0] ** 2 + etx2[..., 1] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return d if d.ndim else float(d)


def ray_depths(pose_b: Pose, x1, x2) -> tuple[np.ndarray, np.ndarray]:
    """Depths ``(d1, d2)`` along both rays closest to meeting, camera 1 at the identity.

    Least squares solution of ``d1 R x1h - d2 x2h = -t``.  Parallel rays give NaN.
    """
    a = homogeneous(np.atleast_2d(x1)) @ pose_b.rotation.T
    b = homogeneous(np.atleast_2d(x2))
    t = pose_b.translation
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    ab = np.einsum("ij,ij->i", a, b)
    at = a @ t
    bt = b @ t
    det = aa * bb - ab * ab
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.where(det > 0, (ab * bt - bb * at) / det, np.nan)
        d2 = np.where(det > 0, (aa * bt - ab * at) / det, np.nan)
    return d1, d2


def count_in_front(pose_b: Pose, x1, x2) -> int:
    """Number of correspondences triangulating in front of the identity camera and ``pose_b``."""
    d1, d2 = ray_depths(pose_b, x1, x2)
    with np.errstate(invalid="ignore"):
        return int(np.count_nonzero((d1 > 0) & (d2 > 0)))


def decompose_essential(e, x1, x2) -> Pose:
    """Recover the pose of camera 2 (camera 1 at identity) with unit-norm translation.

    Of the four algebraic decompositions, the one placing most support
    correspondences in front of both cameras wins.
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    if len(x1) < 1 or len(x1) != len(x2):
        raise DegenerateInputError("need at least one correspondence with matching shapes")
    cands = pose_candidates(e)
    counts = [count_in_front(p, x1, x2) for p in cands]
    best = int(np.argmax(counts))
    if counts[best] == 0:
        raise CheiralityError("no decomposition places any point in front of both cameras")
    return cands[best]


def _angle_from_sin_cos(s, c) -> float:
    return float(np.arctan2(max(s, 0.0), c))


def rotation_error(r_true, r_est) -> float:
    """Angle of ``dR = R_true^-1 R_est``: ``arccos((tr(dR) - 1) / 2)``.

    Evaluated through ``atan2`` of the skew and trace parts of ``dR``, which is the
    same angle but keeps full precision for angles near 0 and pi.
    """
    d = np.asarray(r_true, dtype=float).T @ np.asarray(r_est, dtype=float)
    c = np.clip((np.trace(d) - 1.0) / 2.0, -1.0, 1.0)
    s = 0.5 * np.linalg.norm([d[2, 1] - d[1, 2], d[0, 2] - d[2, 0], d[1, 0] - d[0, 1]])
    return _angle_from_sin_cos(min(s, 1.0), c)


def translation_angular_error(t_true, t_est) -> float:
    """Angle between two translation directions in ``[0, pi]``; antiparallel gives pi."""
    a = np.asarray(t_true, dtype=float).reshape(3)
    b = np.asarray(t_est, dtype=float).reshape(3)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("translation vector has zero length")
    a, b = a / na, b / nb
    return _angle_from_sin_cos(float(np.linalg.norm(np.cross(a, b))), float(np.clip(a @ b, -1.0, 1.0)))


def aligned_distance(a, b) -> float:
    """Frobenius distance between two matrices after normalizing scale and sign."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def similarity_align(source, target):
    """Scale ``s``, rotation ``R`` and shift ``t`` minimizing ``sum |s R a + t - b|^2`` (Umeyama).

    Returns ``(s, R, t, aligned)`` where ``aligned`` is the transformed ``source``.
    """
    a = np.asarray(source, dtype=float).reshape(-1, 3)
    b = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(a) != len(b) or len(a) < 2:
        raise DegenerateInputError("need at least two matching point pairs")
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    da, db = a - ma, b - mb
    var_a = np.sum(da * da) / len(a)
    if var_a == 0:
        raise DegenerateInputError("source points coincide")
    u, d, vt = np.linalg.svd(db.T @ da / len(a))
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    r = u @ np.diag(sign) @ vt
    s = float(np.sum(d * sign) / var_a)
    t = mb - s * r @ ma
    return s, r, t, s * a @ r.T + t
