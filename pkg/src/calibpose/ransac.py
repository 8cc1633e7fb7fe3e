"""Random sample consensus around the minimal solvers."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InsufficientDataError, NoConsensusError, PoseError
from .geometry import Pose, sampson_distance
from .solvers import five_point_nister, p3p_finsterwalder

# Default inlier thresholds.  sampson_distance is a distance (square root of the
# Sampson error), so sqrt(1e-5) is the square-root-scale equivalent of a 1e-5
# Sampson error.
ESSENTIAL_THRESHOLD = math.sqrt(1e-5)
DEFAULT_MAX_ITERATIONS = 1000


def required_iterations(confidence: float, inlier_ratio: float, sample_size: int,
                        max_iterations: int = 10**9) -> int:
    """Samples needed to draw one all-inlier sample with probability ``confidence``.

    ``ceil(log(1 - confidence) / log(1 - inlier_ratio**sample_size))``, at least 1
    and at most ``max_iterations`` (also returned when ``inlier_ratio**sample_size``
    underflows to zero).
    """
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    if not 0 < inlier_ratio <= 1:
        raise ValueError("inlier_ratio must lie in (0, 1]")
    if sample_size < 1:
        raise ValueError("sample_size must be at least 1")
    p = inlier_ratio**sample_size
    if p >= 1.0:
        return 1
    if p == 0.0:
        return int(max_iterations)
    n = math.ceil(math.log1p(-confidence) / math.log1p(-p))
    return int(min(max(n, 1), max_iterations))


@dataclass(frozen=True)
class RansacConfig:
    confidence: float = 0.99
    inlier_threshold: float = ESSENTIAL_THRESHOLD
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass
class RansacResult:
    model: object
    inlier_indices: np.ndarray
    iterations_run: int
    scores: np.ndarray

    @property
    def n_inliers(self) -> int:
        return len(self.inlier_indices)


def ransac(n: int, sample_size: int, fit: Callable, score: Callable, cfg: RansacConfig,
           min_inliers: int | None = None) -> RansacResult:
    """Generic loop.

    ``fit(indices)`` returns a list of candidate models (or raises a PoseError for a
    degenerate sample); ``score(model)`` returns one non-negative score per datum.
    The best model has most inliers, then the smallest summed inlier score, then
    came first.
    """
    if n < sample_size:
        raise InsufficientDataError(f"need at least {sample_size} data, got {n}")
    min_inliers = sample_size if min_inliers is None else min_inliers
    thr = cfg.inlier_threshold
    rng = np.random.default_rng(int(cfg.seed))
    best = None
    best_key = (-1, 0.0)
    budget = int(cfg.max_iterations)
    it = 0
    while it < budget:
        sample = rng.choice(n, size=sample_size, replace=False)
        it += 1
        try:
            models = fit(sample)
        except PoseError:
            continue
        for model in models:
            s = np.asarray(score(model), dtype=float)
            inl = s < thr
            count = int(np.count_nonzero(inl))
            total = float(np.sum(s[inl]))
            if count > best_key[0] or (count == best_key[0] and total < best_key[1]):
                best_key = (count, total)
                best = model
                if count > 0:
                    budget = min(budget, required_iterations(
                        cfg.confidence, count / n, sample_size, cfg.max_iterations))
    if best is None or best_key[0] < min_inliers:
        raise NoConsensusError(f"no model reached {min_inliers} inliers in {it} iterations")
    s = np.asarray(score(best), dtype=float)
    return RansacResult(best, np.flatnonzero(s < thr), it, s)


def ransac_essential(x1, x2, cfg: RansacConfig | None = None) -> RansacResult:
    """Essential matrix from normalized correspondences with the five-point solver."""
    cfg = cfg or RansacConfig()
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if len(x1) != len(x2):
        raise ValueError("x1 and x2 must have the same length")
    if len(x1) < 5:
        raise InsufficientDataError(f"need at least 5 correspondences, got {len(x1)}")
    return ransac(len(x1), 5,
                  lambda idx: five_point_nister(x1[idx], x2[idx]),
                  lambda e: sampson_distance(e, x1, x2), cfg)


def reprojection_scores(pose: Pose, world, obs) -> np.ndarray:
    """Reprojection error per pair; points at or behind the camera score ``inf``."""
    cam = pose.transform(world)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.linalg.norm(cam[:, :2] / z[:, None] - obs, axis=1)
    return np.where(z > 0, err, np.inf)


def ransac_p3p(world, obs, cfg: RansacConfig) -> RansacResult:
    """Absolute camera pose from 3D points and their normalized image observations."""
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    obs = np.asarray(obs, dtype=float).reshape(-1, 2)
    if len(world) != len(obs):
        raise ValueError("world and obs must have the same length")
    if len(world) < 3:
        raise InsufficientDataError(f"need at least 3 pairs, got {len(world)}")
    return ransac(len(world), 3,
                  lambda idx: p3p_finsterwalder(world[idx], obs[idx]),
                  lambda pose: reprojection_scores(pose, world, obs), cfg)
