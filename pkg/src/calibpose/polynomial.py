"""Real roots of univariate polynomials by Sturm-sequence isolation.

Coefficients are stored in ascending order (``c[k]`` multiplies ``z**k``), as in
``numpy.polynomial.polynomial``.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import DegenerateInputError

TRIM_TOL = 1e-13
MERGE_TOL = 1e-10
# A floating point Sturm remainder must exceed its rounding error by this factor.
CHAIN_TRUST = 1e8
_EPS = np.finfo(float).eps


def trim(coeffs, tol: float = TRIM_TOL) -> np.ndarray:
    """Drop leading (highest-degree) coefficients below ``tol * max|c|``."""
    c = np.asarray(coeffs, dtype=float).ravel()
    if c.size == 0 or not np.all(np.isfinite(c)):
        raise DegenerateInputError("polynomial coefficients must be finite and non-empty")
    scale = np.max(np.abs(c))
    if scale == 0:
        raise DegenerateInputError("zero polynomial")
    keep = np.nonzero(np.abs(c) > tol * scale)[0] if tol > 0 else np.nonzero(c)[0]
    return c[: keep[-1] + 1]


def polyval(c: np.ndarray, x: float) -> float:
    acc = 0.0
    for a in c[::-1]:
        acc = acc * x + a
    return acc


_SPLIT = 134217729.0  # 2**27 + 1


def _two_prod(a: float, b: float) -> tuple[float, float]:
    p = a * b
    t = _SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _polyval_with_derivative(c: np.ndarray, x: float) -> tuple[float, float]:
    """Compensated Horner for ``p(x)`` (about twice working precision) and plain Horner for ``p'(x)``."""
    p = 0.0
    err = 0.0
    dp = 0.0
    for a in c[::-1].tolist():
        dp = dp * x + (p + err)
        prod, pe = _two_prod(p, x)
        s = prod + a
        bb = s - prod
        se = (prod - (s - bb)) + (a - bb)
        err = err * x + (pe + se)
        p = s
    return p + err, dp


def _float_chain(p: np.ndarray) -> tuple[list[np.ndarray], bool]:
    """Sturm chain in floating point, and whether every remainder is trustworthy.

    A remainder is trusted when it is well above the rounding error of the
    division that produced it; cancellation (near-multiple roots, or a divisor
    whose leading coefficient nearly vanishes) makes it fail.
    """
    chain = [p / np.max(np.abs(p))]
    dp = np.polynomial.polynomial.polyder(p)
    chain.append(dp / np.max(np.abs(dp)))
    while len(chain[-1]) > 1:
        a, b = chain[-2], chain[-1]
        with np.errstate(all="ignore"):
            q, r = np.polynomial.polynomial.polydiv(a, b)
            r = -np.asarray(r, dtype=float)[: len(b) - 1]
            noise = len(a) * _EPS * (np.max(np.abs(a)) + np.max(np.abs(q)) * np.max(np.abs(b)))
        if r.size == 0 or not np.isfinite(noise) or not np.max(np.abs(r)) > CHAIN_TRUST * noise:
            return chain, False
        r = r[: np.flatnonzero(r)[-1] + 1]
        chain.append(r / np.max(np.abs(r)))
    return chain, True


def _exact_rem(a: list, b: list) -> list:
    a = list(a)
    db = len(b) - 1
    while len(a) > db:
        f = a[-1] / b[-1]
        if f:
            for i in range(db):
                a[len(a) - 1 - db + i] -= f * b[i]
        a.pop()
    while a and a[-1] == 0:
        a.pop()
    return a


def _exact_chain(p: np.ndarray) -> list[np.ndarray]:
    """Sturm chain computed in rational arithmetic (floats convert exactly), rounded at the end.

    Stops only on an exactly zero remainder, so the last member is the true GCD of
    the given polynomial and its derivative.
    """
    members = [[Fraction(x) for x in p.tolist()]]
    members.append([k * members[0][k] for k in range(1, len(p))])
    while len(members[-1]) > 1:
        r = _exact_rem(members[-2], members[-1])
        if not r:
            break
        m = max(abs(x) for x in r)
        members.append([-x / m for x in r])
    out = []
    for mem in members:
        m = max(abs(x) for x in mem)
        out.append(np.array([float(x / m) for x in mem]))
    return out


def sturm_sequence(coeffs) -> list[np.ndarray]:
    """Sturm chain ``p, p', -rem(p, p'), ...``; each member scaled to unit max-abs coefficient.

    The chain is computed in floating point and recomputed exactly when
    cancellation makes a remainder untrustworthy.  It stops at a zero remainder,
    so the last member is the GCD of ``p`` and ``p'``.
    """
    p = trim(coeffs, tol=0.0)
    if len(p) == 1:
        return [p / np.max(np.abs(p))]
    chain, ok = _float_chain(p)
    return chain if ok else _exact_chain(p)


class _Chain:
    def __init__(self, chain: list[np.ndarray]):
        width = max(len(c) for c in chain)
        self.table = np.zeros((len(chain), width))
        for i, c in enumerate(chain):
            self.table[i, : len(c)] = c

    def values(self, x: float) -> np.ndarray:
        vals = np.zeros(self.table.shape[0])
        for k in range(self.table.shape[1] - 1, -1, -1):
            vals = vals * x + self.table[:, k]
        return vals

    def variations(self, x: float) -> int:
        s = np.sign(self.values(x))
        s = s[s != 0]
        return int(np.count_nonzero(s[1:] != s[:-1]))


def root_bound(c: np.ndarray) -> float:
    """Cauchy bound: every root satisfies ``|z| < 1 + max|c_k / c_n|``."""
    return 1.0 + float(np.max(np.abs(c[:-1] / c[-1])))


def _horner_with_bound(c: list, x: float) -> tuple[float, float, float]:
    """Plain Horner for ``p(x)``, ``p'(x)`` and a rounding-error bound on ``p(x)``."""
    p = dp = bound = 0.0
    ax = abs(x)
    for a in c[::-1]:
        dp = dp * x + p
        p = p * x + a
        bound = bound * ax + abs(a)
    return p, dp, 4 * len(c) * _EPS * bound


def _rtsafe(c: np.ndarray, lo: float, hi: float, flo: float) -> float:
    """Newton iteration safeguarded by bisection on a sign-changing bracket.

    Cheap double-precision evaluation brings the iterate close; the bracket is only
    moved on signs that exceed the rounding-error bound.  Compensated evaluation
    then finishes the job.
    """
    cl = c.tolist()
    x = 0.5 * (lo + hi)
    for _ in range(100):
        f, df, bound = _horner_with_bound(cl, x)
        if abs(f) <= bound:
            break
        if (f < 0) == (flo < 0):
            lo = x
        else:
            hi = x
        xn = x - f / df if df != 0 else x
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 4 * _EPS * max(1.0, abs(x)):
            x = xn
            break
        x = xn
    for _ in range(100):
        f, df = _polyval_with_derivative(c, x)
        if f == 0:
            return x
        if df != 0 and abs(f / df) <= 2 * _EPS * max(1.0, abs(x)):
            return x - f / df
        if (f < 0) == (flo < 0):
            lo = x
        else:
            hi = x
        xn = x - f / df if df != 0 else x
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        x = xn
        if hi - lo <= 2 * _EPS * max(1.0, abs(x)):
            return x
    return x


def _sign_right_of(c: np.ndarray, x: float) -> float:
    """Sign of ``p`` just right of ``x``: the first nonzero derivative at ``x``."""
    d = c
    while len(d) > 1:
        d = np.polynomial.polynomial.polyder(d)
        v = _polyval_with_derivative(d, x)[0]
        if v != 0:
            return float(np.sign(v))
    return float(np.sign(d[0]))


def _polish(c: np.ndarray, lo: float, hi: float) -> float:
    """The single distinct root in the half-open interval ``(lo, hi]``."""
    flo = _polyval_with_derivative(c, lo)[0]
    fhi = _polyval_with_derivative(c, hi)[0]
    if fhi == 0:
        return hi
    if flo == 0:
        # A root sitting on ``lo`` was counted in the neighbouring interval.
        flo = _sign_right_of(c, lo)
    if (flo < 0) != (fhi < 0):
        return _rtsafe(c, lo, hi, flo)
    # No sign change: the single distinct root has even multiplicity and is also a
    # root of the derivative.  The derivative may have other roots in the interval,
    # so the critical point where |p| is smallest is taken.
    crit = real_roots(np.polynomial.polynomial.polyder(c))
    crit = crit[(crit > lo) & (crit <= hi)]
    if crit.size == 0:
        return 0.5 * (lo + hi)
    return float(crit[np.argmin([abs(_polyval_with_derivative(c, x)[0]) for x in crit])])


def _balance_exponent(c: np.ndarray) -> int:
    """Power-of-two variable scale ``z = 2**k w`` that brings the largest root near ``|w| = 1``.

    Uses Fujiwara's bound ``max_j |c[n-j] / c[n]| ** (1/j)`` on the root magnitudes,
    evaluated on logarithms so that no ratio overflows.
    """
    n = len(c) - 1
    with np.errstate(divide="ignore"):
        logs = (np.log2(np.abs(c[:-1][::-1])) - np.log2(abs(c[-1]))) / np.arange(1, n + 1)
    logs = logs[np.isfinite(logs)]
    if logs.size == 0:
        return 0
    return int(np.round(np.max(logs)))


def _rescale(c: np.ndarray, k: int) -> np.ndarray:
    """Coefficients of ``p(2**k w) / (c[n] 2**(k n))``; exact up to underflow of negligible terms."""
    n = len(c) - 1
    m, e = np.frexp(c)
    mn, en = np.frexp(c[-1])
    return np.ldexp(m / mn, e - en + k * (np.arange(n + 1) - n))


def real_roots(coeffs) -> np.ndarray:
    """All distinct real roots, ascending.

    Roots are isolated with a Sturm sequence by bisection, then polished with
    safeguarded Newton iterations.  Roots closer than ``MERGE_TOL`` (relative to
    ``max(1, |z|)``) are reported once.
    """
    c = trim(coeffs, tol=0.0)
    # Exact roots at zero are factored out first; they are the usual source of
    # multiple roots, which the floating point Sturm chain handles poorly.
    nz = np.flatnonzero(c)[0]
    if nz > 0:
        rest = real_roots(c[nz:]) if len(c) - nz > 1 else np.zeros(0)
        keep = rest[np.abs(rest) > MERGE_TOL]
        return np.sort(np.append(keep, 0.0))
    if len(c) == 1:
        return np.zeros(0)
    if len(c) == 2:
        return np.array([-c[0] / c[1]])
    # Rescale the variable so that the largest root is near 1.  Power-of-two
    # scalings are exact, so polished roots belong to the caller's polynomial.
    k = _balance_exponent(c)
    c = _rescale(c, k)
    chain = _Chain(sturm_sequence(c))
    bound = root_bound(c) * (1 + 1e-6)
    lo, hi = -bound, bound
    vlo, vhi = chain.variations(lo), chain.variations(hi)
    intervals = []
    stack = [(lo, hi, vlo, vhi)]
    while stack:
        a, b, va, vb = stack.pop()
        n = va - vb
        if n <= 0:
            continue
        if n == 1:
            intervals.append((a, b))
            continue
        m = 0.5 * (a + b)
        if b - a <= 4 * _EPS * max(1.0, abs(m)):
            intervals.append((a, b))
            continue
        # Splitting on a root of p would leave it on an interval end, where the
        # count is fragile; any other interior point serves just as well.
        for shift in (0.0, 1 / 128, -1 / 64, 1 / 32):
            x = m + shift * (b - a)
            if chain.values(x)[0] != 0:
                break
        m = x
        vm = chain.variations(m)
        stack.append((m, b, vm, vb))
        stack.append((a, m, va, vm))
    roots = sorted(np.ldexp(_polish(c, a, b), k) for a, b in intervals)
    merged: list[float] = []
    for r in roots:
        if merged and abs(r - merged[-1]) <= MERGE_TOL * max(1.0, abs(r)):
            continue
        merged.append(r)
    return np.array(merged)


def polynomial_real_roots(coeffs) -> np.ndarray:
    """Alias of :func:`real_roots` with the degree >= 1 precondition enforced."""
    c = trim(coeffs)
    if len(c) < 2:
        raise DegenerateInputError("constant polynomial has no roots to find")
    return real_roots(c)
