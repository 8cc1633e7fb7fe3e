"""Minimal solvers: five-point relative pose, seven-point fundamental matrix, P3P.

All image inputs are normalized coordinates (calibrated camera, ``K = I``).
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateConfigurationError, NoSolutionError
from .geometry import Pose, aligned_distance, homogeneous, rotation_error
from .polynomial import real_roots

RANK_TOL = 1e-10
DEDUP_TOL = 1e-9
CONVERGED_RESIDUAL = 1e-9
NEAR_ROOT = 1e-6

# Monomial order of the 10x20 five-point constraint matrix, as exponents (x, y, z).
# The first ten columns are eliminated by Gauss-Jordan; rows 4..9 of the reduced
# system then carry x^2 z, x^2, y^2 z, y^2, xyz, xy, which pair up as
# (x^2 z, x^2), (y^2 z, y^2), (xyz, xy) to build the 3x3 matrix in z.
MONOMIALS = [
    (3, 0, 0), (0, 3, 0), (2, 1, 0), (1, 2, 0), (2, 0, 1),
    (2, 0, 0), (0, 2, 1), (0, 2, 0), (1, 1, 1), (1, 1, 0),
    (1, 0, 2), (1, 0, 1), (1, 0, 0), (0, 1, 2), (0, 1, 1),
    (0, 1, 0), (0, 0, 3), (0, 0, 2), (0, 0, 1), (0, 0, 0),
]



def epipolar_constraint_matrix(x1, x2) -> np.ndarray:
    """Rows ``kron(x2h, x1h)`` so that ``row @ E.ravel() == x2h^T E x1h``."""
    h1 = homogeneous(np.asarray(x1, dtype=float))
    h2 = homogeneous(np.asarray(x2, dtype=float))
    return np.einsum("ni,nj->nij", h2, h1).reshape(len(h1), 9)


def _nullspace(q: np.ndarray, dim: int) -> np.ndarray:
    if not np.all(np.isfinite(q)):
        raise DegenerateConfigurationError("non-finite correspondences")
    _, s, vt = np.linalg.svd(q)
    rank = q.shape[0]
    if s[rank - 1] <= RANK_TOL * s[0]:
        raise DegenerateConfigurationError("epipolar constraint matrix is rank deficient")
    return vt[9 - dim:]


def _dedup(mats: list[np.ndarray]) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    for m in mats:
        if all(aligned_distance(m, o) >= DEDUP_TOL for o in out):
            out.append(m)
    return out


# Homogeneous exponents (x, y, z, w) of the same monomials, w carrying 3 - degree.
_HOMO_EXP = np.array([(ex, ey, ez, 3 - ex - ey - ez) for ex, ey, ez in MONOMIALS])


def _triple_to_monomial() -> np.ndarray:
    """0/1 matrix summing the 64 ordered products ``v_a v_b v_c`` into the 20 monomials."""
    fold = np.zeros((64, 20))
    lookup = {tuple(e): k for k, e in enumerate(_HOMO_EXP.tolist())}
    for n, abc in enumerate(np.ndindex(4, 4, 4)):
        fold[n, lookup[tuple(np.bincount(abc, minlength=4))]] = 1.0
    return fold


_FOLD = _triple_to_monomial()
_LEVI = np.zeros((3, 3, 3))
_LEVI[0, 1, 2] = _LEVI[1, 2, 0] = _LEVI[2, 0, 1] = 1.0
_LEVI[0, 2, 1] = _LEVI[2, 1, 0] = _LEVI[1, 0, 2] = -1.0


def five_point_constraints(basis: np.ndarray) -> np.ndarray:
    """10x20 coefficient matrix of the cubic constraints on ``E = xX + yY + zZ + wW``.

    ``basis`` holds the four nullspace vectors X, Y, Z, W as rows of length 9.
    Row 0 is ``det(E) = 0``; rows 1..9 are the entries of ``2 E E^T E - tr(E E^T) E``
    in row-major order.  Both are cubic forms, so they are evaluated as trilinear
    forms on every ordered triple of basis matrices and then summed per monomial.
    """
    m = basis.reshape(4, 3, 3)
    det = np.einsum("ijk,ai,bj,ck->abc", _LEVI, m[:, 0], m[:, 1], m[:, 2])
    abt = np.einsum("aij,bkj->abik", m, m)
    trace = np.einsum("abii->ab", abt)
    cubic = 2.0 * np.einsum("abik,ckl->abcil", abt, m) \
        - trace[:, :, None, None, None] * m[None, None]
    rows = np.concatenate([det.reshape(1, 64), cubic.reshape(64, 9).T])
    return rows @ _FOLD


def gauss_jordan(a: np.ndarray, ncols: int) -> np.ndarray:
    """Reduce the first ``ncols`` columns to the identity with partial pivoting."""
    a = np.array(a, dtype=float)
    scale = np.max(np.abs(a), axis=1, keepdims=True)
    if np.any(scale == 0):
        raise DegenerateConfigurationError("zero constraint row")
    a /= scale
    n = a.shape[0]
    for col in range(ncols):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) <= 1e-12:
            raise DegenerateConfigurationError("singular elimination pivot")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
        a[col] /= a[col, col]
        others = np.arange(n) != col
        a[others] -= np.outer(a[others, col], a[col])
    return a


def _row_polys(g: np.ndarray, r: int):
    """Split reduced row ``r`` into z-polynomials multiplying x, y and 1 (ascending)."""
    return (np.array([g[r, 2], g[r, 1], g[r, 0]]),
            np.array([g[r, 5], g[r, 4], g[r, 3]]),
            np.array([g[r, 9], g[r, 8], g[r, 7], g[r, 6]]))


def _minus_z_times(e: np.ndarray, f: np.ndarray) -> np.ndarray:
    out = np.zeros(max(len(e), len(f) + 1))
    out[: len(e)] += e
    out[1: len(f) + 1] -= f
    return out


def _det3_poly(b) -> np.ndarray:
    pm = np.polynomial.polynomial.polymul
    det = np.zeros(1)
    for j, sign in ((0, 1.0), (1, -1.0), (2, 1.0)):
        j1, j2 = [k for k in range(3) if k != j]
        minor = np.polynomial.polynomial.polysub(pm(b[1][j1], b[2][j2]), pm(b[1][j2], b[2][j1]))
        det = np.polynomial.polynomial.polyadd(det, sign * pm(b[0][j], minor))
    return det


_LOWERED = np.stack([_HOMO_EXP - np.eye(4, dtype=int)[axis] for axis in range(4)]).clip(0)
_COLS = np.arange(4)


def _monomials_and_jacobian(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cubic monomials of ``v = (x, y, z, w)`` and their derivatives, ``(20,)`` and ``(20, 4)``."""
    powers = np.ones((4, 4))
    powers[1] = v
    powers[2] = v * v
    powers[3] = powers[2] * v
    vals = np.prod(powers[_HOMO_EXP, _COLS], axis=1)
    jac = _HOMO_EXP * np.prod(powers[_LOWERED, _COLS], axis=2).T
    return vals, jac


def _residual(constraints: np.ndarray, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(constraints @ _monomials_and_jacobian(v / np.linalg.norm(v))[0]))


def _polish(constraints: np.ndarray, v: np.ndarray, iters: int = 10) -> np.ndarray:
    """Gauss-Newton on the homogeneous cubic constraints over the unit sphere.

    Working with ``(x, y, z, w)`` instead of ``w = 1`` keeps solutions whose W
    component is tiny well scaled.  Returns the best unit-norm iterate.
    """
    v = v / np.linalg.norm(v)
    vals, jac = _monomials_and_jacobian(v)
    r = constraints @ vals
    best, best_norm = v, np.linalg.norm(r)
    for _ in range(iters):
        # The extra row keeps the step tangent to the sphere.
        j = np.vstack([constraints @ jac, v])
        step, *_ = np.linalg.lstsq(j, np.append(-r, 0.0), rcond=None)
        v = v + step
        v /= np.linalg.norm(v)
        vals, jac = _monomials_and_jacobian(v)
        r = constraints @ vals
        n = np.linalg.norm(r)
        if not np.isfinite(n) or n >= best_norm:
            break
        best, best_norm = v, n
        if np.max(np.abs(step)) <= 1e-15:
            break
    return best


def _quadratic_roots(a: float, b: float, c: float) -> list[float]:
    if a == 0:
        return [-c / b] if b != 0 else []
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    q = -0.5 * (b + np.copysign(np.sqrt(disc), b))
    return [q / a] + ([c / q] if q != 0 else [])


def _xyzw_for_root(constraints, g, b, z, converged_only: bool = False) -> list[np.ndarray]:
    """Polished unit (x, y, z, w) solutions belonging to a root z of det(B(z)).

    Normally (x, y, 1) spans the nullspace of the rank-2 matrix B(z).  When B(z) is
    close to rank 1 that nullspace is two dimensional, so the single reliable linear
    equation is also intersected with the reduced quadratic rows (x^2, y^2 and xy).
    Every starting point is polished on the cubic system; all that converge are kept.
    """
    bz = np.array([[np.polynomial.polynomial.polyval(z, b[i][k]) for k in range(3)]
                   for i in range(3)])
    if not np.all(np.isfinite(bz)):
        return []
    _, sv, vt = np.linalg.svd(bz)
    starts = []
    if abs(vt[2, 2]) > 1e-14:
        starts.append(vt[2, :2] / vt[2, 2])
    if sv[1] < 1e-3 * sv[0]:
        line = vt[0]
        n2 = line[0] ** 2 + line[1] ** 2
        if n2 > 0:
            p0 = -line[2] * line[:2] / n2
            d = np.array([-line[1], line[0]])
            for row in (5, 7, 9):
                px, py, pc = (np.polynomial.polynomial.polyval(z, q) for q in _row_polys(g, row))

                def f(t, row=row, px=px, py=py, pc=pc):
                    x, y = p0 + t * d
                    lead = x * x if row == 5 else y * y if row == 7 else x * y
                    return lead + px * x + py * y + pc

                f0, fp, fm = f(0.0), f(1.0), f(-1.0)
                for t in _quadratic_roots(0.5 * (fp + fm) - f0, 0.5 * (fp - fm), f0):
                    starts.append(p0 + t * d)
    polished = [_polish(constraints, np.array([x, y, z, 1.0])) for x, y in starts]
    polished = [p for p in polished if np.all(np.isfinite(p))]
    if not polished:
        return []
    res = [_residual(constraints, p) for p in polished]
    good = [p for p, r in zip(polished, res) if r <= CONVERGED_RESIDUAL]
    if good or converged_only:
        return good
    return [polished[int(np.argmin(res))]]


def five_point_nister(x1, x2) -> list[np.ndarray]:
    """All real essential matrices consistent with exactly five correspondences.

    Returns unit Frobenius norm matrices (at most ten).
    """
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) != 5 or len(x2) != 5:
        raise ValueError("five_point_nister needs exactly 5 correspondences")
    basis = _nullspace(epipolar_constraint_matrix(x1, x2), 4)
    constraints = five_point_constraints(basis)
    constraints /= np.max(np.abs(constraints), axis=1, keepdims=True)
    g = gauss_jordan(constraints, 10)[:, 10:]

    b = []
    for e_row, f_row in ((4, 5), (6, 7), (8, 9)):
        e, f = _row_polys(g, e_row), _row_polys(g, f_row)
        b.append([_minus_z_times(e[k], f[k]) for k in range(3)])
    det = _det3_poly(b)
    if not np.any(det):
        raise DegenerateConfigurationError("degree-10 polynomial vanished")

    roots = real_roots(det)
    starts = [(z, False) for z in roots]
    # Cancellation in the expanded determinant can push a close pair of real roots
    # into the complex plane.  Such a pair leaves a critical point where |det| is
    # nearly zero; it is tried as well, but kept only if the polish converges.
    abs_det = np.abs(det)
    for c in real_roots(np.polynomial.polynomial.polyder(det)):
        scale = np.polynomial.polynomial.polyval(abs(c), abs_det)
        if (abs(np.polynomial.polynomial.polyval(c, det)) <= NEAR_ROOT * scale
                and not np.any(np.abs(roots - c) <= 1e-9 * max(1.0, abs(c)))):
            starts.append((c, True))

    cands = []
    for z, converged_only in starts:
        # Every root is re-polished against the cubic system itself.
        for v in _xyzw_for_root(constraints, g, b, z, converged_only):
            e = (v @ basis).reshape(3, 3)
            n = np.linalg.norm(e)
            if n > 0 and np.isfinite(n):
                cands.append(e / n)
    return _dedup(cands)[:10]


def _adjugate(m: np.ndarray) -> np.ndarray:
    return np.column_stack([np.cross(m[1], m[2]), np.cross(m[2], m[0]), np.cross(m[0], m[1])])


def det_pencil(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Ascending coefficients of ``det(a + t b)`` for 3x3 matrices."""
    return np.array([np.linalg.det(a), np.trace(_adjugate(a) @ b),
                     np.trace(_adjugate(b) @ a), np.linalg.det(b)])


def seven_point(x1, x2) -> list[np.ndarray]:
    """Rank-2 matrices ``F`` with ``x2^T F x1 = 0`` on exactly seven correspondences (1 to 3 of them)."""
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) != 7 or len(x2) != 7:
        raise ValueError("seven_point needs exactly 7 correspondences")
    null = _nullspace(epipolar_constraint_matrix(x1, x2), 2)
    f1, f2 = null[0].reshape(3, 3), null[1].reshape(3, 3)
    out = []
    for lam in real_roots(det_pencil(f1, f2)):
        f = f1 + lam * f2
        out.append(f / np.linalg.norm(f))
    if not out:
        raise DegenerateConfigurationError("no real solution of the determinant cubic")
    return _dedup(out)


def project_to_essential(f) -> np.ndarray:
    """Closest matrix with singular values (1, 1, 0): ``U diag(1,1,0) V^T``."""
    u, _, vt = np.linalg.svd(np.asarray(f, dtype=float))
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt


def _unit_bearings(obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    h = homogeneous(obs) if obs.shape[-1] == 2 else obs
    return h / np.linalg.norm(h, axis=-1, keepdims=True)


def absolute_orientation(world: np.ndarray, cam: np.ndarray) -> Pose:
    """Rigid transform with ``cam ~= R @ world + t`` (least squares, no scale)."""
    mw = world.mean(axis=0)
    mc = cam.mean(axis=0)
    h = (world - mw).T @ (cam - mc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r, mc - r @ mw)


def _split_degenerate_conic(m: np.ndarray) -> list[np.ndarray]:
    """Two lines ``l . (u, v, 1) = 0`` forming a rank-deficient conic (empty if complex)."""
    d2 = m[0, 1] ** 2 - m[0, 0] * m[1, 1]
    if d2 < -1e-12 * np.max(np.abs(m)) ** 2:
        return []
    alpha = np.sqrt(max(d2, 0.0))
    if abs(m[0, 0]) >= abs(m[1, 1]):
        d0 = m[0, 2] ** 2 - m[0, 0] * m[2, 2]
        d1 = m[0, 1] * m[0, 2] - m[0, 0] * m[1, 2]
        beta = np.copysign(np.sqrt(max(d0, 0.0)), d1)
        return [np.array([m[0, 0], m[0, 1] - sg * alpha, m[0, 2] - sg * beta]) for sg in (1.0, -1.0)]
    d0 = m[1, 2] ** 2 - m[1, 1] * m[2, 2]
    d1 = m[0, 1] * m[1, 2] - m[1, 1] * m[0, 2]
    beta = np.copysign(np.sqrt(max(d0, 0.0)), d1)
    return [np.array([m[0, 1] - sg * alpha, m[1, 1], m[1, 2] - sg * beta]) for sg in (1.0, -1.0)]


def _intersect_line_conic(line: np.ndarray, m: np.ndarray) -> list[tuple[float, float]]:
    n2 = line[0] ** 2 + line[1] ** 2
    if n2 == 0:
        return []
    p0 = np.array([-line[0] * line[2] / n2, -line[1] * line[2] / n2, 1.0])
    d = np.array([-line[1], line[0], 0.0])
    a2 = d @ m @ d
    a1 = d @ m @ p0
    a0 = p0 @ m @ p0
    if abs(a2) <= 1e-14 * (abs(a1) + abs(a0)):
        ts = [-a0 / (2 * a1)] if a1 != 0 else []
    else:
        disc = a1 * a1 - a2 * a0
        if disc < 0:
            disc = 0.0 if disc > -1e-12 * a1 * a1 else disc
        if disc < 0:
            return []
        sq = np.sqrt(disc)
        q = -(a1 + np.copysign(sq, a1))
        ts = [q / a2] + ([a0 / q] if q != 0 else [])
    return [(p0[0] + t * d[0], p0[1] + t * d[1]) for t in ts]


def _polish_distances(s, cos_ab, sides2, iters: int = 3):
    """Newton steps on the three law-of-cosines equations."""
    pairs = ((1, 2, 0), (0, 2, 1), (0, 1, 2))
    for _ in range(iters):
        f = np.empty(3)
        j = np.zeros((3, 3))
        for row, (p, q, k) in enumerate(pairs):
            f[row] = s[p] ** 2 + s[q] ** 2 - 2 * s[p] * s[q] * cos_ab[k] - sides2[k]
            j[row, p] = 2 * s[p] - 2 * s[q] * cos_ab[k]
            j[row, q] = 2 * s[q] - 2 * s[p] * cos_ab[k]
        try:
            step = np.linalg.solve(j, f)
        except np.linalg.LinAlgError:
            break
        s = s - step
        if np.max(np.abs(step)) <= 1e-15 * np.max(np.abs(s)):
            break
    return s


def p3p_finsterwalder(world, obs) -> list[Pose]:
    """Camera poses that project three world points onto three normalized image points.

    Finsterwalder's reduction: two quadratic relations in the distance ratios
    ``u = s1/s0`` and ``v = s2/s0`` are combined into a degenerate conic
    ``A + lam B`` (``lam`` from a cubic), which splits into two lines; each line
    meets ``B`` in at most two points.  Distances are then turned into a pose by
    absolute orientation.  At most four candidates are returned.
    """
    world = np.asarray(world, dtype=float).reshape(3, 3)
    j = _unit_bearings(np.asarray(obs, dtype=float).reshape(3, -1))

    sides = np.array([np.linalg.norm(world[1] - world[2]),
                      np.linalg.norm(world[0] - world[2]),
                      np.linalg.norm(world[0] - world[1])])
    area = 0.5 * np.linalg.norm(np.cross(world[1] - world[0], world[2] - world[0]))
    if area < 1e-12 * np.max(sides) ** 2:
        raise DegenerateConfigurationError("world points are collinear")
    a2, b2, c2 = sides**2
    ca, cb, cg = j[1] @ j[2], j[0] @ j[2], j[0] @ j[1]

    # Conics in (u, v, 1):
    #   A: b2 (u^2 + v^2 - 2uv ca) - a2 (1 + v^2 - 2v cb) = 0
    #   B: c2 (u^2 + v^2 - 2uv ca) - a2 (1 + u^2 - 2u cg) = 0
    ma = np.array([[b2, -b2 * ca, 0.0],
                   [-b2 * ca, b2 - a2, a2 * cb],
                   [0.0, a2 * cb, -a2]])
    mb = np.array([[c2 - a2, -c2 * ca, a2 * cg],
                   [-c2 * ca, c2, 0.0],
                   [a2 * cg, 0.0, -a2]])

    best = None
    for lam in real_roots(det_pencil(ma, mb)):
        m = ma + lam * mb
        margin = (m[0, 1] ** 2 - m[0, 0] * m[1, 1]) / (np.sum(m[:2, :2] ** 2) or 1.0)
        if best is None or margin > best[0]:
            best = (margin, m)
    if best is None:
        raise NoSolutionError("determinant cubic has no real root")

    cos_ab = np.array([ca, cb, cg])
    poses: list[Pose] = []
    for line in _split_degenerate_conic(best[1]):
        for u, v in _intersect_line_conic(line, mb):
            den_c = 1 + u * u - 2 * u * cg
            den_b = 1 + v * v - 2 * v * cb
            s0_sq = c2 / den_c if den_c >= den_b else b2 / den_b
            if not (s0_sq > 0 and u > 0 and v > 0):
                continue
            s = _polish_distances(np.sqrt(s0_sq) * np.array([1.0, u, v]), cos_ab, sides**2)
            if np.any(s <= 0) or not np.all(np.isfinite(s)):
                continue
            pose = absolute_orientation(world, s[:, None] * j)
            if any(rotation_error(pose.rotation, p.rotation) < DEDUP_TOL
                   and np.linalg.norm(pose.translation - p.translation) < DEDUP_TOL for p in poses):
                continue
            poses.append(pose)
    if not poses:
        raise NoSolutionError("no solution with positive distances")
    return poses
