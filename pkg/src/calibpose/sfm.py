"""Incremental reconstruction from a calibrated image sequence.

The first two images are related by RANSAC over the five-point solver, the
matches are triangulated and refined by bundle adjustment.  Every later image
is matched against the 3D points built so far, posed with RANSAC over P3P, then
guided matching against all earlier images adds new points and extends tracks,
and bundle adjustment refines everything again.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .bundle import BundleProblem, LmConfig, optimize, refine_pose
from .errors import (BootstrapFailure, InsufficientDataError, NoConsensusError,
                     RegistrationFailure)
from .geometry import (Pose, decompose_essential, homogeneous, skew,
                       triangulate_points)
from .ransac import RansacConfig, ransac_essential, ransac_p3p, reprojection_scores

log = logging.getLogger(__name__)

MIN_BOOTSTRAP_POINTS = 20
MIN_REGISTRATION_INLIERS = 8


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.skew)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths fx and fy must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def normalize(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        y = (uv[..., 1] - self.cy) / self.fy
        x = (uv[..., 0] - self.cx - self.skew * y) / self.fx
        return np.stack([x, y], axis=-1)

    def denormalize(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        u = self.fx * xy[..., 0] + self.skew * xy[..., 1] + self.cx
        v = self.fy * xy[..., 1] + self.cy
        return np.stack([u, v], axis=-1)


@dataclass
class ImageFeatures:
    positions: np.ndarray
    descriptors: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.descriptors = np.asarray(self.descriptors, dtype=float)
        if self.descriptors.ndim != 2 or len(self.descriptors) != len(self.positions):
            raise ValueError("need one descriptor row per keypoint")

    def __len__(self) -> int:
        return len(self.positions)


def normalize_points(features: list, k: Intrinsics) -> list:
    """Per-image arrays of normalized image points."""
    return [k.normalize(f.positions) for f in features]


@dataclass(frozen=True)
class MatcherConfig:
    """``nn_ratio`` is the threshold on d2/d1 (second-nearest over nearest distance)."""

    nn_ratio: float = 1.25
    descriptor_distance_max: float = np.inf

    def __post_init__(self):
        if not self.nn_ratio > 1:
            raise ValueError("nn_ratio must exceed 1")
        if not self.descriptor_distance_max > 0:
            raise ValueError("descriptor_distance_max must be positive")


def _ratio_ok(d1: np.ndarray, d2: np.ndarray, cfg: MatcherConfig) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_pass = np.where(d1 > 0, d2 >= cfg.nn_ratio * d1, d2 > 0)
    return ratio_pass & (d1 <= cfg.descriptor_distance_max)


def _one_to_one(a_idx: np.ndarray, b_idx: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Keep, for every b, only the pair with the smallest distance (then smallest a)."""
    order = np.lexsort((a_idx, dist))
    _, first = np.unique(b_idx[order], return_index=True)
    keep = np.sort(order[first])
    return np.column_stack([a_idx[keep], b_idx[keep]]).astype(int)


def match_pair(desc_a, desc_b, cfg: MatcherConfig | None = None) -> np.ndarray:
    """Index pairs ``(i, j)`` of mutually exclusive nearest-neighbour matches from a to b."""
    cfg = cfg or MatcherConfig()
    desc_a = np.asarray(desc_a, dtype=float)
    desc_b = np.asarray(desc_b, dtype=float)
    if len(desc_a) == 0 or len(desc_b) == 0:
        return np.zeros((0, 2), dtype=int)
    if desc_a.shape[1] != desc_b.shape[1]:
        raise ValueError("descriptor dimensions differ")
    tree = cKDTree(desc_b)
    if len(desc_b) == 1:
        d1, j = tree.query(desc_a, k=1)
        d2 = np.full(len(desc_a), np.inf)
    else:
        d, jj = tree.query(desc_a, k=2)
        d1, d2, j = d[:, 0], d[:, 1], jj[:, 0]
    ok = _ratio_ok(d1, d2, cfg)
    a_idx = np.flatnonzero(ok)
    return _one_to_one(a_idx, j[ok], d1[ok])


def median_nn_distance(features: list) -> float:
    """Median over all keypoints of the distance to the nearest other descriptor in the same image."""
    dists = []
    for f in features:
        if len(f) < 2:
            continue
        d, _ = cKDTree(f.descriptors).query(f.descriptors, k=2)
        dists.append(d[:, 1])
    if not dists:
        raise InsufficientDataError("no image has two or more keypoints")
    return float(np.median(np.concatenate(dists)))


@dataclass(frozen=True)
class PipelineConfig:
    matcher: MatcherConfig = MatcherConfig()
    inlier_threshold_px: float = 2.0
    confidence: float = 0.999
    max_iterations: int = 2000
    seed: int = 0
    band_factor: float = 3.0
    purge_factor: float = 3.0
    min_bootstrap_points: int = MIN_BOOTSTRAP_POINTS
    min_registration_inliers: int = MIN_REGISTRATION_INLIERS
    lm: LmConfig = LmConfig()


def default_config(features: list, seed: int = 0, **kw) -> PipelineConfig:
    """Configuration with descriptor_distance_max at 0.7 of the dataset's median NN distance."""
    matcher = MatcherConfig(descriptor_distance_max=0.7 * median_nn_distance(features))
    return PipelineConfig(matcher=matcher, seed=seed, **kw)


@dataclass
class Landmark:
    position: np.ndarray
    track: dict  # frame -> feature index
    descriptor_sum: np.ndarray
    count: int = 0

    @property
    def descriptor(self) -> np.ndarray:
        return self.descriptor_sum / self.count


@dataclass
class FrameReport:
    frame: int
    registered: bool
    inliers: int = 0
    new_points: int = 0
    extended: int = 0
    purged: int = 0
    message: str = ""


class ReconstructionModel:
    """Cameras, landmarks with tracks, and the normalized keypoints they refer to."""

    def __init__(self, features: list, intrinsics: Intrinsics, cfg: PipelineConfig):
        self.features = features
        self.intrinsics = intrinsics
        self.points2d = normalize_points(features, intrinsics)
        self.cfg = cfg
        self.threshold = cfg.inlier_threshold_px / intrinsics.focal
        self.poses: dict[int, Pose] = {}
        self.order: list[int] = []
        self.landmarks: dict[int, Landmark] = {}
        self.owner: list[dict] = [dict() for _ in features]  # frame -> {feature: landmark id}
        self.reports: list[FrameReport] = []
        self._next_id = 0
        self.removed = 0

    # -- bookkeeping -------------------------------------------------------
    def add_landmark(self, position, track: dict) -> int:
        lid = self._next_id
        self._next_id += 1
        dsum = sum(self.features[f].descriptors[i] for f, i in track.items())
        self.landmarks[lid] = Landmark(np.asarray(position, float), dict(track), dsum, len(track))
        for f, i in track.items():
            self.owner[f][i] = lid
        return lid

    def extend(self, lid: int, frame: int, feature: int):
        lm = self.landmarks[lid]
        if frame in lm.track or feature in self.owner[frame]:
            return False
        lm.track[frame] = feature
        lm.descriptor_sum = lm.descriptor_sum + self.features[frame].descriptors[feature]
        lm.count += 1
        self.owner[frame][feature] = lid
        return True

    def remove_landmark(self, lid: int):
        lm = self.landmarks.pop(lid)
        for f, i in lm.track.items():
            self.owner[f].pop(i, None)

    def observations(self):
        """``(landmark ids, frame, feature)`` arrays over every track entry."""
        lids, frames, feats = [], [], []
        for lid, lm in self.landmarks.items():
            for f, i in lm.track.items():
                lids.append(lid)
                frames.append(f)
                feats.append(i)
        return np.array(lids, int), np.array(frames, int), np.array(feats, int)

    def landmark_ids(self) -> list:
        return list(self.landmarks)

    def positions(self) -> np.ndarray:
        return np.array([lm.position for lm in self.landmarks.values()]).reshape(-1, 3)

    def cameras(self) -> list:
        return [(f, self.poses[f]) for f in self.order]

    # -- refinement --------------------------------------------------------
    def bundle_adjust(self):
        lids, frames, feats = self.observations()
        if len(lids) == 0:
            return None
        lid_index = {lid: k for k, lid in enumerate(self.landmarks)}
        cam_index = {f: k for k, f in enumerate(self.order)}
        cameras = [self.poses[f] for f in self.order]
        fixed = np.zeros(len(cameras), bool)
        fixed[0] = True
        obs = np.array([self.points2d[f][i] for f, i in zip(frames, feats)])
        problem = BundleProblem(cameras, self.positions(),
                                [cam_index[f] for f in frames], [lid_index[l] for l in lids],
                                obs, fixed, scale_camera=1 if len(cameras) > 1 else None)
        out, report = optimize(problem, self.cfg.lm)
        for f, pose in zip(self.order, out.cameras):
            self.poses[f] = pose
        for lid, pos in zip(self.landmarks, out.points):
            self.landmarks[lid].position = pos
        return report

    def purge(self, factor: float | None = None) -> int:
        """Drop landmarks behind any observing camera or reprojecting beyond ``factor`` thresholds."""
        limit = (factor or self.cfg.purge_factor) * self.threshold
        doomed = []
        for lid, lm in self.landmarks.items():
            for f, i in lm.track.items():
                cam = self.poses[f].transform(lm.position)
                if cam[2] <= 0 or np.linalg.norm(cam[:2] / cam[2] - self.points2d[f][i]) > limit:
                    doomed.append(lid)
                    break
        for lid in doomed:
            self.remove_landmark(lid)
        self.removed += len(doomed)
        return len(doomed)

    def max_reprojection_error(self) -> float:
        worst = 0.0
        for lm in self.landmarks.values():
            for f, i in lm.track.items():
                cam = self.poses[f].transform(lm.position)
                if cam[2] <= 0:
                    return np.inf
                worst = max(worst, float(np.linalg.norm(cam[:2] / cam[2] - self.points2d[f][i])))
        return worst


def _reproj(pose: Pose, pts: np.ndarray, obs: np.ndarray) -> np.ndarray:
    return reprojection_scores(pose, pts, obs)


def bootstrap_pair(model: ReconstructionModel, first: int = 0, second: int = 1) -> FrameReport:
    """Relative pose of two images, initial landmarks and the first bundle adjustment."""
    cfg = model.cfg
    thr = model.threshold
    fa, fb = model.features[first], model.features[second]
    pairs = match_pair(fa.descriptors, fb.descriptors, cfg.matcher)
    if len(pairs) < 5:
        raise BootstrapFailure(f"only {len(pairs)} putative matches between the first two images")
    xa = model.points2d[first][pairs[:, 0]]
    xb = model.points2d[second][pairs[:, 1]]
    rcfg = RansacConfig(cfg.confidence, thr, cfg.max_iterations, cfg.seed)
    try:
        result = ransac_essential(xa, xb, rcfg)
    except (NoConsensusError, InsufficientDataError) as exc:
        raise BootstrapFailure(f"relative pose failed: {exc}") from exc
    inl = result.inlier_indices
    pose = decompose_essential(result.model, xa[inl], xb[inl])
    ident = Pose.identity()
    pts, ok = triangulate_points(ident, pose, xa[inl], xb[inl])
    with np.errstate(invalid="ignore"):
        ok &= (_reproj(ident, pts, xa[inl]) <= thr) & (_reproj(pose, pts, xb[inl]) <= thr)
    if np.count_nonzero(ok) < cfg.min_bootstrap_points:
        raise BootstrapFailure(f"only {np.count_nonzero(ok)} points triangulated from the first pair")
    model.poses = {first: ident, second: pose}
    model.order = [first, second]
    for k in np.flatnonzero(ok):
        m = inl[k]
        model.add_landmark(pts[k], {first: int(pairs[m, 0]), second: int(pairs[m, 1])})
    added = len(model.landmarks)
    model.bundle_adjust()
    purged = model.purge()
    model.reports.append(FrameReport(first, True, len(inl)))
    model.reports.append(FrameReport(second, True, len(inl), added, 0, purged))
    return model.reports[-1]


def _epipolar_distances(rel: Pose, xj: np.ndarray, xk: np.ndarray) -> np.ndarray:
    """Sampson distances between every keypoint of image j (columns) and image k (rows)."""
    e = skew(rel.translation) @ rel.rotation
    e = e / np.linalg.norm(e)
    hj = homogeneous(xj)
    hk = homogeneous(xk)
    lines_j = hj @ e.T  # E xj
    lines_k = hk @ e  # E^T xk
    num = np.abs(hk @ lines_j.T)
    den = np.sqrt(lines_k[:, :1] ** 2 + lines_k[:, 1:2] ** 2
                  + (lines_j[:, 0] ** 2 + lines_j[:, 1] ** 2)[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.inf)


def _guided_matches(model: ReconstructionModel, frame: int, prev: int, free_k: np.ndarray) -> np.ndarray:
    """Pairs (feature in frame, feature in prev) inside the epipolar band that pass the ratio test."""
    cfg = model.cfg
    pose_k, pose_j = model.poses[frame], model.poses[prev]
    rel = pose_k.relative_to(pose_j)
    if len(free_k) == 0:
        return np.zeros((0, 2), int)
    # Skip image pairs with too short a baseline for triangulation.
    depth = np.median([pose_j.transform(lm.position)[2] for lm in model.landmarks.values()]) \
        if model.landmarks else 1.0
    if np.linalg.norm(rel.translation) < np.tan(np.deg2rad(0.1)) * depth:
        return np.zeros((0, 2), int)
    cand_j = np.arange(len(model.features[prev]))
    if len(cand_j) == 0:
        return np.zeros((0, 2), int)
    band = _epipolar_distances(rel, model.points2d[prev][cand_j], model.points2d[frame][free_k])
    dk = model.features[frame].descriptors[free_k]
    dj = model.features[prev].descriptors[cand_j]
    dist = np.sqrt(np.maximum(
        np.sum(dk**2, 1)[:, None] + np.sum(dj**2, 1)[None, :] - 2 * dk @ dj.T, 0.0))
    dist[band > cfg.band_factor * model.threshold] = np.inf
    if dist.shape[1] == 1:
        best = np.zeros(len(free_k), int)
        d1 = dist[:, 0]
        d2 = np.full(len(free_k), np.inf)
    else:
        part = np.argpartition(dist, 1, axis=1)[:, :2]
        two = np.take_along_axis(dist, part, axis=1)
        swap = two[:, 1] < two[:, 0]
        best = np.where(swap, part[:, 1], part[:, 0])
        d1 = np.minimum(two[:, 0], two[:, 1])
        d2 = np.maximum(two[:, 0], two[:, 1])
    ok = np.isfinite(d1) & _ratio_ok(d1, d2, cfg.matcher)
    pairs = _one_to_one(free_k[ok], cand_j[best[ok]], d1[ok])
    return pairs


def register_image(model: ReconstructionModel, frame: int) -> FrameReport:
    """Pose a new image against the model, grow the model, then bundle adjust."""
    cfg = model.cfg
    thr = model.threshold
    feats = model.features[frame]
    lids = model.landmark_ids()
    if not lids or len(feats) == 0:
        raise RegistrationFailure(f"frame {frame}: nothing to match")
    lm_desc = np.array([model.landmarks[l].descriptor for l in lids])
    pairs = match_pair(feats.descriptors, lm_desc, cfg.matcher)
    if len(pairs) < 3:
        raise RegistrationFailure(f"frame {frame}: only {len(pairs)} 2D-3D matches")
    world = np.array([model.landmarks[lids[j]].position for j in pairs[:, 1]])
    obs = model.points2d[frame][pairs[:, 0]]
    rcfg = RansacConfig(cfg.confidence, thr, cfg.max_iterations, cfg.seed + frame)
    try:
        result = ransac_p3p(world, obs, rcfg)
    except (NoConsensusError, InsufficientDataError) as exc:
        raise RegistrationFailure(f"frame {frame}: absolute pose failed: {exc}") from exc
    if result.n_inliers < cfg.min_registration_inliers:
        raise RegistrationFailure(f"frame {frame}: only {result.n_inliers} pose inliers")
    inl = result.inlier_indices
    pose = refine_pose(result.model, world[inl], obs[inl], cfg.lm)
    # Re-score after refinement; only observations within the threshold join tracks.
    keep = inl[_reproj(pose, world[inl], obs[inl]) <= thr]

    model.poses[frame] = pose
    model.order.append(frame)
    report = FrameReport(frame, True, len(inl))
    for m in keep:
        if model.extend(lids[pairs[m, 1]], frame, int(pairs[m, 0])):
            report.extended += 1

    # Guided matching against every earlier image.
    for prev in model.order[:-1]:
        free_k = np.array([i for i in range(len(feats)) if i not in model.owner[frame]], int)
        gm = _guided_matches(model, frame, prev, free_k)
        if len(gm) == 0:
            continue
        xk = model.points2d[frame][gm[:, 0]]
        xj = model.points2d[prev][gm[:, 1]]
        pts, ok = triangulate_points(model.poses[prev], pose, xj, xk)
        for (fk, fj), p, good in zip(gm, pts, ok):
            owner = model.owner[prev].get(int(fj))
            if owner is not None:
                lm = model.landmarks[owner]
                if frame in lm.track:
                    continue
                if _reproj(pose, lm.position[None], model.points2d[frame][fk][None])[0] <= thr:
                    if model.extend(owner, frame, int(fk)):
                        report.extended += 1
                continue
            if not good:
                continue
            if (_reproj(pose, p[None], model.points2d[frame][fk][None])[0] <= thr
                    and _reproj(model.poses[prev], p[None], model.points2d[prev][fj][None])[0] <= thr):
                model.add_landmark(p, {prev: int(fj), frame: int(fk)})
                report.new_points += 1

    model.bundle_adjust()
    report.purged = model.purge()
    model.reports.append(report)
    return report


@dataclass
class Reconstruction:
    model: ReconstructionModel
    failures: list = field(default_factory=list)

    @property
    def registered(self) -> list:
        return list(self.model.order)


def reconstruct(features: list, intrinsics: Intrinsics, cfg: PipelineConfig | None = None) -> Reconstruction:
    """Run the whole sequence in the given order; registration failures are recorded and skipped."""
    if len(features) < 2:
        raise BootstrapFailure("need at least two images")
    cfg = cfg or default_config(features)
    model = ReconstructionModel(features, intrinsics, cfg)
    bootstrap_pair(model, 0, 1)
    out = Reconstruction(model)
    for frame in range(2, len(features)):
        try:
            register_image(model, frame)
        except RegistrationFailure as exc:
            log.warning("%s", exc)
            model.reports.append(FrameReport(frame, False, message=str(exc)))
            out.failures.append((frame, str(exc)))
    return out
