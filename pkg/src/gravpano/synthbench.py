"""Synthetic scenes, error metrics and noise sweeps."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateError,
    InfeasibleConfigError,
    InvalidInputError,
    NotDivisibleError,
)
from .geometry import (
    Correspondence,
    DistortedPoint,
    GravityPrior,
    StitchModel,
    compose_model,
    distort_points,
    rot_x,
    rot_z,
    rotation_error,
    transfer_errors,
)
from .robust import worker_count
from .solvers import HomographyModel, SolverCandidateSet, SolverId, _cayley_terms, dlt_homography, solve_arrays

SWEEPS = ("image_noise", "roll_noise", "pitch_noise")
IMAGE_NOISE_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0)
GRAVITY_NOISE_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
RECORD_HEADER = (
    "solver_id", "level", "trial", "focal_error", "rotation_error", "distortion_error",
    "reprojection_error", "solve_time_us", "candidate_count", "failed",
)


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 200
    box: tuple = ((-3.0, 3.0), (-3.0, 3.0), (4.0, 6.0))
    f1_gt: float = 1000.0
    f2_gt: float = 1000.0
    lambda1_gt: float = 0.0
    lambda2_gt: float = 0.0
    yaw_range: tuple[float, float] = (5.0, 60.0)
    prior_range: tuple[float, float] = (-15.0, 15.0)
    image_noise_sigma: float = 0.0
    roll_noise_sigma: float = 0.0
    pitch_noise_sigma: float = 0.0
    n_trials: int = 1000
    seed: int = 0
    image_bound: float = 1000.0
    norm_scale: float = 1000.0
    outlier_ratio: float = 0.0
    n_holdout: int = 50
    aligned: bool = False

    def __post_init__(self):
        (x0, x1), (y0, y1), (z0, z1) = self.box
        if not (0.0 < z0 <= z1 and x0 <= x1 and y0 <= y1):
            raise InvalidInputError("box must satisfy lo <= hi with a strictly positive depth range")
        for name in ("image_noise_sigma", "roll_noise_sigma", "pitch_noise_sigma"):
            if getattr(self, name) < 0.0:
                raise InvalidInputError(f"{name} must be non-negative")
        if self.n_points < 1 or self.n_trials < 0:
            raise InvalidInputError("n_points must be positive and n_trials non-negative")
        if not (self.f1_gt > 0.0 and self.f2_gt > 0.0 and self.norm_scale > 0.0):
            raise InvalidInputError("focal lengths and norm_scale must be positive")
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise InvalidInputError("outlier_ratio must lie in [0, 1)")
        if self.lambda1_gt * self.lambda2_gt < 0.0:
            raise InvalidInputError("both distortion coefficients must share a sign")

    @classmethod
    def with_distortion(cls, **kwargs) -> "SceneConfig":
        kwargs.setdefault("lambda1_gt", -0.4)
        kwargs.setdefault("lambda2_gt", -0.4)
        return cls(**kwargs)


@dataclass
class Scene:
    gt: StitchModel
    pts1: np.ndarray
    pts2: np.ndarray
    clean1: np.ndarray
    clean2: np.ndarray
    holdout1: np.ndarray
    holdout2: np.ndarray
    inlier_mask: np.ndarray
    prior1: GravityPrior
    prior2: GravityPrior

    def __iter__(self):
        yield self.gt
        yield self.correspondences

    @cached_property
    def correspondences(self) -> list[Correspondence]:
        S = self.gt.norm_scale
        return [
            Correspondence(DistortedPoint(a[0], a[1], S), DistortedPoint(b[0], b[1], S), self.prior1, self.prior2)
            for a, b in zip(self.pts1.tolist(), self.pts2.tolist())
        ]


def _prior(rng, lo, hi) -> np.ndarray:
    pitch, roll = np.radians(rng.uniform(lo, hi, 2))
    return rot_x(pitch) @ rot_z(roll)


def _project(model: StitchModel, X: np.ndarray, bound: float):
    """Distorted pixel projections of camera-1 frame points; NaN rows when invisible."""
    S = model.norm_scale
    with np.errstate(divide="ignore", invalid="ignore"):
        u1 = (model.f1 / S) * X[:, :2] / X[:, 2:3]
        d2 = X @ model.R.T
        u2 = (model.f2 / S) * d2[:, :2] / d2[:, 2:3]
        p1 = distort_points(u1, model.lambda1) * S
        p2 = distort_points(u2, model.lambda2) * S
    ok = (X[:, 2] > 0.0) & (d2[:, 2] > 0.0)
    ok &= np.all(np.isfinite(p1), axis=1) & np.all(np.isfinite(p2), axis=1)
    with np.errstate(invalid="ignore"):
        ok &= np.all(np.abs(p1) <= bound, axis=1) & np.all(np.abs(p2) <= bound, axis=1)
    return p1, p2, ok


def _visible_points(rng, model, config: SceneConfig, count: int):
    (x0, x1), (y0, y1), (z0, z1) = config.box
    got1, got2 = [], []
    have = 0
    attempts = 0
    limit = 100 * max(count, 1)
    while have < count:
        if attempts >= limit:
            raise InfeasibleConfigError(
                f"only {have} of {count} points visible after {attempts} attempts; widen the overlap"
            )
        k = min(max(2 * (count - have), 64), limit - attempts)
        X = np.column_stack([rng.uniform(x0, x1, k), rng.uniform(y0, y1, k), rng.uniform(z0, z1, k)])
        attempts += k
        p1, p2, ok = _project(model, X, config.image_bound)
        got1.append(p1[ok])
        got2.append(p2[ok])
        have += int(ok.sum())
    return np.concatenate(got1)[:count], np.concatenate(got2)[:count]


def generate_scene(config: SceneConfig, trial_seed) -> Scene:
    """Draw one synthetic image pair; deterministic in ``trial_seed``."""
    rng = np.random.default_rng(trial_seed)
    yaw = math.radians(rng.uniform(*config.yaw_range))
    if config.aligned:
        R1 = R2 = np.eye(3)
    else:
        R1 = _prior(rng, *config.prior_range)
        R2 = _prior(rng, *config.prior_range)
    gt = compose_model(
        math.tan(0.5 * yaw), config.f1_gt, config.f2_gt, config.lambda1_gt, config.lambda2_gt,
        GravityPrior(R1), GravityPrior(R2), config.norm_scale,
    )
    n = config.n_points
    clean1, clean2 = _visible_points(rng, gt, config, n + config.n_holdout)
    clean1, hold1 = clean1[:n], clean1[n:]
    clean2, hold2 = clean2[:n], clean2[n:]

    # noise is always drawn and then scaled, so scenes that differ only in a
    # noise level share geometry and noise directions (paired sweeps)
    pts1 = clean1 + config.image_noise_sigma * rng.standard_normal(clean1.shape)
    pts2 = clean2 + config.image_noise_sigma * rng.standard_normal(clean2.shape)

    inliers = np.ones(n, dtype=bool)
    n_out = int(round(config.outlier_ratio * n))
    if n_out:
        idx = rng.choice(n, size=n_out, replace=False)
        inliers[idx] = False
        b = config.image_bound
        pts2[idx] = rng.uniform(-b, b, (n_out, 2))

    # prior noise: small camera-frame rotations, pitch about x and roll about z
    def noisy(R):
        dp = math.radians(config.pitch_noise_sigma * rng.standard_normal())
        dr = math.radians(config.roll_noise_sigma * rng.standard_normal())
        if dp == 0.0 and dr == 0.0:
            return R
        return R @ rot_x(dp) @ rot_z(dr)

    prior1 = GravityPrior(noisy(gt.R1))
    prior2 = GravityPrior(noisy(gt.R2))
    return Scene(gt, pts1, pts2, clean1, clean2, hold1, hold2, inliers, prior1, prior2)


# ---------------------------------------------------------------------------
# broad-range instances for exactness checks
# ---------------------------------------------------------------------------


def random_instance(
    rng: np.random.Generator,
    solver_id,
    yaw_deg: tuple[float, float] = (-80.0, 80.0),
    focal_px: tuple[float, float] = (500.0, 2000.0),
    lambda_range: tuple[float, float] = (-0.7, 0.0),
    prior_deg: tuple[float, float] = (-30.0, 30.0),
    norm_scale: float = 1000.0,
    max_radius: float = 3.0,
) -> tuple[StitchModel, list[Correspondence]]:
    """Noise-free minimal sample for a solver with randomly drawn parameters.

    Rays are drawn around the bisector of the two optical axes so that wide
    yaw ranges still give points visible in both views; undistorted radii
    are kept below ``max_radius`` (normalized units).
    """
    sid = SolverId(solver_id)
    base = sid.base
    S = norm_scale
    while True:
        f1 = rng.uniform(*focal_px)
        f2 = f1 if base in (SolverId.H1f, SolverId.H2lambda) else rng.uniform(*focal_px)
        if base in (SolverId.H2lambda, SolverId.H3l1l2):
            l1 = rng.uniform(*lambda_range)
            l2 = l1 if base is SolverId.H2lambda else rng.uniform(*lambda_range)
        else:
            l1 = l2 = 0.0
        yaw = math.radians(rng.uniform(*yaw_deg))
        if sid.aligned:
            R1 = R2 = np.eye(3)
        else:
            R1 = _prior(rng, *prior_deg)
            R2 = _prior(rng, *prior_deg)
        model = compose_model(math.tan(0.5 * yaw), f1, f2, l1, l2, GravityPrior(R1), GravityPrior(R2), S)
        corrs = _bisector_sample(rng, model, sid.sample_size, max_radius)
        if corrs is not None:
            return model, corrs


def _bisector_sample(rng, model: StitchModel, n: int, max_radius: float):
    R = model.R
    S = model.norm_scale
    axis2 = R.T @ np.array([0.0, 0.0, 1.0])
    b = axis2 + np.array([0.0, 0.0, 1.0])
    nb = np.linalg.norm(b)
    if nb < 0.2:
        return None
    b /= nb
    prior1 = GravityPrior(model.R1)
    prior2 = GravityPrior(model.R2)
    out = []
    for _ in range(200 * n):
        d = b + 0.3 * rng.normal(size=3)
        d2 = R @ d
        if d[2] <= 0.05 * np.linalg.norm(d) or d2[2] <= 0.05 * np.linalg.norm(d2):
            continue
        u1 = (model.f1 / S) * d[:2] / d[2]
        u2 = (model.f2 / S) * d2[:2] / d2[2]
        if np.hypot(*u1) > max_radius or np.hypot(*u2) > max_radius:
            continue
        p1 = distort_points(u1[None], model.lambda1)[0] * S
        p2 = distort_points(u2[None], model.lambda2)[0] * S
        if not (np.all(np.isfinite(p1)) and np.all(np.isfinite(p2))):
            continue
        out.append(
            Correspondence(
                DistortedPoint(float(p1[0]), float(p1[1]), S), DistortedPoint(float(p2[0]), float(p2[1]), S),
                prior1, prior2,
            )
        )
        if len(out) == n:
            return out
    return None


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------


@dataclass
class TrialRecord:
    solver_id: str
    level: float
    trial: int
    focal_error: float
    rotation_error: float
    distortion_error: float
    reprojection_error: float
    solve_time_us: float
    candidate_count: int
    failed: bool

    def row(self) -> list[str]:
        return [
            self.solver_id, _fmt(self.level), str(self.trial), _fmt(self.focal_error), _fmt(self.rotation_error),
            _fmt(self.distortion_error), _fmt(self.reprojection_error), _fmt(self.solve_time_us),
            str(self.candidate_count), "1" if self.failed else "0",
        ]


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class _Estimate:
    R: np.ndarray
    f1: float
    f2: float
    lambda1: float
    lambda2: float
    H: np.ndarray
    norm_scale: float


def _as_estimate(model) -> _Estimate:
    if isinstance(model, HomographyModel):
        R, f1, f2 = model.decompose()
        return _Estimate(R, f1, f2, model.lambda1, model.lambda2, model.H, model.norm_scale)
    return _Estimate(model.R, model.f1, model.f2, model.lambda1, model.lambda2, model.H, model.norm_scale)


def geometric_lambda(l1: float, l2: float) -> float:
    """Geometric mean of |l1 l2| carrying the common sign of the pair."""
    g = math.sqrt(abs(l1 * l2))
    return math.copysign(g, l1 + l2) if g else 0.0


def failed_record(solver_id: str, level: float = 0.0, trial: int = 0, solve_time_us: float = math.nan) -> TrialRecord:
    inf = math.inf
    return TrialRecord(str(solver_id), float(level), int(trial), inf, inf, inf, inf, solve_time_us, 0, True)


def compute_errors(
    candidates: SolverCandidateSet | Sequence,
    gt: StitchModel,
    holdout: tuple[np.ndarray, np.ndarray] | None = None,
    level: float = 0.0,
    trial: int = 0,
    solve_time_us: float = math.nan,
) -> TrialRecord:
    """Score the candidate closest in rotation to the ground truth."""
    sid = candidates.solver_id.value if isinstance(candidates, SolverCandidateSet) else "custom"
    models = list(candidates)
    estimates = []
    for m in models:
        try:
            estimates.append(_as_estimate(m))
        except DegenerateError:
            continue
    if not estimates:
        return failed_record(sid, level, trial, solve_time_us)
    R_gt = gt.R
    best = min(estimates, key=lambda e: rotation_error(e.R, R_gt))
    fg = math.sqrt(gt.f1 * gt.f2)
    fe = math.sqrt(best.f1 * best.f2)
    reproj = math.nan
    if holdout is not None and len(holdout[0]):
        err = transfer_errors(best.H, holdout[0], holdout[1], best.lambda1, best.lambda2, best.norm_scale)
        reproj = float(np.mean(err))
    return TrialRecord(
        sid,
        float(level),
        int(trial),
        abs(fe - fg) / fg,
        rotation_error(best.R, R_gt),
        geometric_lambda(gt.lambda1, gt.lambda2) - geometric_lambda(best.lambda1, best.lambda2),
        reproj,
        solve_time_us,
        len(models),
        False,
    )


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

_SOLVER_INDEX = {sid: i for i, sid in enumerate(SolverId)}


def _config_for(config: SceneConfig, sweep: str, level: float) -> SceneConfig:
    if sweep == "image_noise":
        return replace(config, image_noise_sigma=float(level))
    if sweep == "roll_noise":
        return replace(config, roll_noise_sigma=float(level))
    if sweep == "pitch_noise":
        return replace(config, pitch_noise_sigma=float(level))
    raise InvalidInputError(f"unknown sweep {sweep!r}; expected one of {SWEEPS}")


def run_trial(scene: Scene, sid: SolverId, rng: np.random.Generator, level=0.0, trial=0, timing=True) -> TrialRecord:
    """Solve one minimal sample drawn from the scene's inliers and score it."""
    inl = np.flatnonzero(scene.inlier_mask)
    idx = rng.choice(inl, size=sid.sample_size, replace=False)
    S = scene.gt.norm_scale
    R1 = scene.prior1.rotation
    R2 = scene.prior2.rotation
    t0 = time.perf_counter_ns()
    try:
        if sid is SolverId.H4dlt:
            cands = SolverCandidateSet(sid, [HomographyModel(dlt_homography(scene.pts1[idx], scene.pts2[idx]), norm_scale=S)], 1)
        else:
            pts = np.hstack([scene.pts1[idx], scene.pts2[idx]]) / S
            Ms = None if sid.aligned else np.broadcast_to(_cayley_terms(R1, R2), (len(idx), 3, 3, 3)).copy()
            cands = solve_arrays(sid, pts, Ms, S, R1, R2)
    except (DegenerateError, InvalidInputError, NotDivisibleError, np.linalg.LinAlgError):
        dt = (time.perf_counter_ns() - t0) / 1e3 if timing else math.nan
        return failed_record(sid.value, level, trial, dt)
    dt = (time.perf_counter_ns() - t0) / 1e3 if timing else math.nan
    return compute_errors(cands, scene.gt, (scene.holdout1, scene.holdout2), level, trial, dt)


def run_sweep(
    config: SceneConfig,
    sweep: str,
    levels: Iterable[float],
    solver_ids: Sequence,
    workers: int | None = None,
    timing: bool = True,
) -> list[TrialRecord]:
    """Records ordered by level, then trial, then the order of ``solver_ids``.

    Each trial's scene is seeded from ``(config.seed, trial)`` and shared by
    all solvers and all levels, so levels differ only in the swept noise
    scale.  The sample a solver draws is seeded additionally by its
    identity; records therefore do not depend on which other solvers run or
    on the worker count.
    """
    sids = [SolverId(s) for s in solver_ids]
    levels = [float(v) for v in levels]
    for lv in levels:
        _config_for(config, sweep, lv)

    def task(key):
        li, t = key
        cfg = _config_for(config, sweep, levels[li])
        scene = generate_scene(cfg, (config.seed, t))
        out = []
        for sid in sids:
            rng = np.random.default_rng((config.seed, t, 1000 + _SOLVER_INDEX[sid]))
            out.append(run_trial(scene, sid, rng, levels[li], t, timing))
        return out

    keys = [(li, t) for li in range(len(levels)) for t in range(config.n_trials)]
    n = worker_count(workers)
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            chunks = list(pool.map(task, keys))
    else:
        chunks = [task(k) for k in keys]
    return [rec for chunk in chunks for rec in chunk]


def medians(records: Iterable[TrialRecord], field_name: str) -> dict[tuple[str, float], float]:
    """Median of a field per (solver, level); failures count as +inf."""
    groups: dict[tuple[str, float], list[float]] = {}
    for r in records:
        v = math.inf if r.failed else getattr(r, field_name)
        groups.setdefault((r.solver_id, r.level), []).append(abs(v) if field_name == "distortion_error" else v)
    return {k: float(np.median(v)) for k, v in groups.items()}


# ---------------------------------------------------------------------------
# CDFs and CSV
# ---------------------------------------------------------------------------


def aggregate_cdf(records: Sequence, field_name: str | None = None) -> list[tuple[float, float]]:
    """Empirical CDF of a record field (or of plain numbers when ``field_name`` is None).

    Failed records count at +inf, so the curve tops out below 1 when any exist.
    """
    records = list(records)
    if not records:
        raise InvalidInputError("cannot build a CDF from no records")
    vals = []
    for r in records:
        if field_name is None:
            vals.append(float(r))
        elif getattr(r, "failed", False):
            vals.append(math.inf)
        else:
            vals.append(float(getattr(r, field_name)))
    vals.sort()
    n = len(vals)
    return [(v, (i + 1) / n) for i, v in enumerate(vals) if math.isfinite(v)]


def cdf_quantile(cdf: Sequence[tuple[float, float]], q: float = 0.5) -> float:
    """Quantile read off a CDF; at an exact step the two neighbours are averaged."""
    for i, (v, frac) in enumerate(cdf):
        if math.isclose(frac, q, rel_tol=0.0, abs_tol=1e-12):
            nxt = cdf[i + 1][0] if i + 1 < len(cdf) else math.inf
            return 0.5 * (v + nxt)
        if frac > q:
            return v
    return math.inf


def write_records_csv(path, records: Iterable[TrialRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow(r.row())


def write_cdf_csv(path, cdf: Iterable[tuple[float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("value", "fraction"))
        for v, f in cdf:
            w.writerow((_fmt(v), _fmt(f)))


def read_records_csv(path) -> list[TrialRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                TrialRecord(
                    row["solver_id"], float(row["level"]), int(row["trial"]), float(row["focal_error"]),
                    float(row["rotation_error"]), float(row["distortion_error"]), float(row["reprojection_error"]),
                    float(row["solve_time_us"]), int(row["candidate_count"]), row["failed"] == "1",
                )
            )
    return out
