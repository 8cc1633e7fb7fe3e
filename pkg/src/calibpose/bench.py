"""Synthetic accuracy benchmark: five-point versus seven-point relative pose.

Camera 1 sits at the origin looking down +z.  Random points fill an axis-aligned
box whose front face is ``dist`` away and subtends ``visual_angle``.  Camera 2 is
obtained by rotating the points by ``alpha`` about a vertical axis through the box
center B, which is the same as moving the camera to the optical center
``T = B - R^-1 B`` with orientation R.
"""
from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoSolutionError, PoseError
from .geometry import (Pose, count_in_front, decompose_essential, rotation_about, rotation_error,
                       sampson_distance, translation_angular_error)
from .solvers import five_point_nister, project_to_essential, seven_point

# Depth-to-width ratios of the three scene configurations.
CONFIGS = {"almost-planar": 0.01, "semi-planar": 0.1, "general": 1.0}
SOLVERS = {"five_point": 5, "seven_point": 7}
SOLVER_ALIASES = {"5pt": "five_point", "7pt": "seven_point",
                  "five_point": "five_point", "seven_point": "seven_point"}
DEFAULT_SIGMAS = tuple(round(0.1 * k, 1) for k in range(11))
RESAMPLE_LIMIT = 100
QUANTILE_METHOD = "linear"


@dataclass(frozen=True)
class SceneConfig:
    name: str = "general"
    focal: float = 1.0
    dist: float = 4.0
    visual_angle: float = 45.0
    depth_width_ratio: float = 1.0
    rotation_angle_alpha: float = 10.0
    n_points: int = 50
    x_resolution_px: int = 1296

    def __post_init__(self):
        for key in ("focal", "dist", "visual_angle", "depth_width_ratio", "x_resolution_px"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if not self.visual_angle < 180:
            raise ValueError("visual_angle must be below 180 degrees")
        if int(self.n_points) < 5:
            raise ValueError("n_points must be at least 5")

    @property
    def pixel_to_focal(self) -> float:
        """Focal-length units per pixel: ``focal * tan(visual_angle / 2) / (x_resolution / 2)``."""
        half = math.tan(math.radians(self.visual_angle) / 2)
        return self.focal * half / (self.x_resolution_px / 2)


def scene_config(name: str, **overrides) -> SceneConfig:
    if name not in CONFIGS:
        raise ValueError(f"unknown configuration {name!r}; choose from {sorted(CONFIGS)}")
    return SceneConfig(name=name, depth_width_ratio=CONFIGS[name], **overrides)


@dataclass(frozen=True)
class NoiseModel:
    sigma_px: float
    pixel_to_focal: float

    def __post_init__(self):
        if not self.sigma_px >= 0:
            raise ValueError("sigma_px must be non-negative")

    @classmethod
    def for_scene(cls, sigma_px: float, cfg: SceneConfig) -> "NoiseModel":
        return cls(sigma_px, cfg.pixel_to_focal)

    @property
    def sigma(self) -> float:
        return self.sigma_px * self.pixel_to_focal


@dataclass
class TrialGroundTruth:
    pose: Pose
    points: np.ndarray
    x1: np.ndarray
    x2: np.ndarray


@dataclass(frozen=True)
class TrialResult:
    solver: str
    config: str
    sigma_px: float
    seed: int
    r_err: float = math.nan
    t_err: float = math.nan
    failed: bool = False
    reason: str = ""


@dataclass(frozen=True)
class ErrorSummary:
    solver: str
    config: str
    sigma_px: float
    n_trials: int
    n_failed: int
    r_err_q1: float
    r_err_med: float
    r_err_q3: float
    t_err_q1: float
    t_err_med: float
    t_err_q3: float


def box_dimensions(cfg: SceneConfig) -> tuple[float, float, float]:
    width = 2 * cfg.dist * math.tan(math.radians(cfg.visual_angle) / 2)
    return width, width, cfg.depth_width_ratio * width


def box_center(cfg: SceneConfig) -> np.ndarray:
    depth = box_dimensions(cfg)[2]
    return np.array([0.0, 0.0, cfg.dist + depth / 2])


def ground_truth_pose(cfg: SceneConfig) -> Pose:
    """Camera 2: orientation R (alpha about y) and optical center ``B - R^-1 B``."""
    r = rotation_about([0.0, 1.0, 0.0], math.radians(cfg.rotation_angle_alpha))
    b = box_center(cfg)
    return Pose.from_center(r, b - r.T @ b)


def rotate_about_center(points, cfg: SceneConfig) -> np.ndarray:
    """``X' = R (X - B) + B``: the scene motion that camera 2 stands in for."""
    r = rotation_about([0.0, 1.0, 0.0], math.radians(cfg.rotation_angle_alpha))
    b = box_center(cfg)
    return (np.asarray(points, dtype=float) - b) @ r.T + b


def sample_points(cfg: SceneConfig, pose: Pose, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the box; any point not in front of camera 2 is redrawn."""
    w, h, d = box_dimensions(cfg)
    lo = np.array([-w / 2, -h / 2, cfg.dist])
    hi = np.array([w / 2, h / 2, cfg.dist + d])
    pts = rng.uniform(lo, hi, size=(cfg.n_points, 3))
    for _ in range(RESAMPLE_LIMIT):
        behind = pose.transform(pts)[:, 2] <= 0
        if not behind.any():
            return pts
        pts[behind] = rng.uniform(lo, hi, size=(int(behind.sum()), 3))
    raise PoseError("could not place points in front of camera 2")


def generate_trial(cfg: SceneConfig, noise: NoiseModel, seed):
    """Ground truth and noisy normalized projections ``(truth, x1_noisy, x2_noisy)``."""
    rng = np.random.default_rng(seed)
    pose = ground_truth_pose(cfg)
    pts = sample_points(cfg, pose, rng)
    x1 = Pose.identity().project(pts)
    x2 = pose.project(pts)
    truth = TrialGroundTruth(pose, pts, x1, x2)
    if noise.sigma_px == 0:
        return truth, x1.copy(), x2.copy()
    s = noise.sigma
    return truth, x1 + rng.normal(0.0, s, x1.shape), x2 + rng.normal(0.0, s, x2.shape)


def trial_seed(master_seed: int, config: str, sigma_px: float, trial: int) -> int:
    """Per-trial seed; independent of the solver so that both solvers see the same scenes."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(config.encode()),
                                 int(round(sigma_px * 1e6)), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


def estimate_pose(solver: str, x1: np.ndarray, x2: np.ndarray, sample: np.ndarray) -> Pose:
    """Minimal solve on ``sample`` and candidate selection on all points.

    Each candidate is decomposed with every point as support.  The winner places
    most points in front of both cameras; ties go to the least squared Sampson
    error on the points outside the sample.  Cheirality comes first because on
    near-planar scenes the two twisted planar solutions fit the epipolar
    constraint almost equally well, but only one keeps the scene in front.
    """
    if solver == "five_point":
        cands = five_point_nister(x1[sample], x2[sample])
    else:
        cands = [project_to_essential(f) for f in seven_point(x1[sample], x2[sample])]
    rest = np.setdiff1d(np.arange(len(x1)), sample)
    if len(rest) == 0:
        rest = sample
    best = None
    for e in cands:
        try:
            pose = decompose_essential(e, x1, x2)
        except PoseError:
            continue
        key = (-count_in_front(pose, x1, x2),
               float(np.sum(sampson_distance(e, x1[rest], x2[rest]) ** 2)))
        if best is None or key < best[0]:
            best = (key, pose)
    if best is None:
        raise NoSolutionError("minimal solver returned no usable solution")
    return best[1]


def run_trial(solver: str, cfg: SceneConfig, noise: NoiseModel, seed: int) -> TrialResult:
    solver = SOLVER_ALIASES[solver]
    truth, x1, x2 = generate_trial(cfg, noise, seed)
    base = dict(solver=solver, config=cfg.name, sigma_px=noise.sigma_px, seed=int(seed))
    if cfg.n_points < SOLVERS[solver]:
        return TrialResult(**base, failed=True, reason="too few points")
    # A separate stream keeps the minimal sample independent of the noise draws.
    perm = np.random.default_rng([int(seed), 1]).permutation(cfg.n_points)
    try:
        est = estimate_pose(solver, x1, x2, perm[: SOLVERS[solver]])
    except PoseError as exc:
        return TrialResult(**base, failed=True, reason=type(exc).__name__)
    r_err = rotation_error(truth.pose.rotation, est.rotation)
    t_err = translation_angular_error(truth.pose.center, est.center)
    return TrialResult(**base, r_err=r_err, t_err=t_err)


def quartiles(values) -> tuple[float, float, float]:
    """(q1, median, q3) with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    q = np.percentile(v, [25, 50, 75], method=QUANTILE_METHOD)
    return float(q[0]), float(q[1]), float(q[2])


def summarize(results: list[TrialResult]) -> ErrorSummary:
    first = results[0]
    ok = [r for r in results if not r.failed]
    rq = quartiles([r.r_err for r in ok])
    tq = quartiles([r.t_err for r in ok])
    return ErrorSummary(first.solver, first.config, first.sigma_px, len(results),
                        len(results) - len(ok), *rq, *tq)


@dataclass(frozen=True)
class Grid:
    solvers: tuple = ("five_point", "seven_point")
    configs: tuple = tuple(CONFIGS)
    sigmas: tuple = DEFAULT_SIGMAS
    trials: int = 1000
    seed: int = 0
    scene: dict = field(default_factory=dict)

    def cells(self):
        for solver in self.solvers:
            for config in self.configs:
                for sigma in self.sigmas:
                    yield SOLVER_ALIASES[solver], config, float(sigma)


def _run_cell_chunk(args):
    solver, cfg, sigma, seeds = args
    noise = NoiseModel.for_scene(sigma, cfg)
    return [run_trial(solver, cfg, noise, s) for s in seeds]


def run_experiment(grid: Grid, workers: int = 1, chunk: int = 100):
    """Run every (solver, config, sigma) cell; returns ``(summaries, trial results)``.

    Results are identical for any ``workers``: seeds depend only on the master
    seed, the cell and the trial index, and chunks are reassembled in order.
    """
    if grid.trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = []
    cells = []
    for solver, config, sigma in grid.cells():
        cfg = scene_config(config, **grid.scene)
        seeds = [trial_seed(grid.seed, config, sigma, k) for k in range(grid.trials)]
        cells.append(len(jobs))
        for i in range(0, len(seeds), chunk):
            jobs.append((solver, cfg, sigma, seeds[i: i + chunk]))
    cells.append(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell_chunk, jobs))
    else:
        chunks = [_run_cell_chunk(job) for job in jobs]
    summaries, results = [], []
    for a, b in zip(cells[:-1], cells[1:]):
        cell = [r for c in chunks[a:b] for r in c]
        results.extend(cell)
        summaries.append(summarize(cell))
    return summaries, results


_SCENE_KEYS = {"focal": float, "dist": float, "visual_angle": float, "alpha": float,
               "n_points": int, "x_resolution_px": int}


def _split_list(text: str) -> tuple:
    return tuple(s.strip() for s in text.replace(";", ",").split(",") if s.strip())


def parse_grid(text: str, base: Grid | None = None) -> Grid:
    """Grid from ``key=value`` lines (``#`` starts a comment).

    Keys: solvers, configs, sigmas, trials, seed, and the scene overrides
    focal, dist, visual_angle, alpha, n_points, x_resolution_px.
    """
    grid = base or Grid()
    scene = dict(grid.scene)
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "solvers":
                names = _split_list(value)
                bad = [n for n in names if n not in SOLVER_ALIASES]
                if bad or not names:
                    raise ValueError(f"unknown solver(s) {bad}")
                updates[key] = tuple(SOLVER_ALIASES[n] for n in names)
            elif key == "configs":
                names = _split_list(value)
                bad = [n for n in names if n not in CONFIGS]
                if bad or not names:
                    raise ValueError(f"unknown configuration(s) {bad}")
                updates[key] = names
            elif key == "sigmas":
                sig = tuple(float(s) for s in _split_list(value))
                if not sig or any(not s >= 0 for s in sig):
                    raise ValueError("sigmas must be non-negative")
                updates[key] = sig
            elif key in ("trials", "seed"):
                n = int(value)
                if n < (1 if key == "trials" else 0):
                    raise ValueError(f"{key} out of range")
                updates[key] = n
            elif key in _SCENE_KEYS:
                name = "rotation_angle_alpha" if key == "alpha" else key
                scene[name] = _SCENE_KEYS[key](value)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    grid = replace(grid, scene=scene, **updates)
    scene_config("general", **grid.scene)  # validates the overrides
    return grid
