"""Locally optimized RANSAC around the minimal solvers, plus LM polishing."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateError, InvalidInputError, NoModelError, NotDivisibleError
from .geometry import Correspondence, StitchModel, correspondence_arrays, transfer_errors
from .solvers import HomographyModel, SolverId, _cayley_terms, dlt_homography, solve_arrays

MIN_INLIERS = 4
MAX_LO_ROUNDS = 10


def worker_count(requested: int | None = None) -> int:
    """Thread count, capped by ``GRAVPANO_THREADS`` when set."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("GRAVPANO_THREADS")
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise InvalidInputError(f"GRAVPANO_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def iteration_budget(confidence: float, inlier_ratio: float, sample_size: int, max_iterations: int = 10000) -> int:
    """Number of samples needed to draw one all-inlier sample with ``confidence``."""
    if not 0.0 < confidence < 1.0:
        raise InvalidInputError("confidence must lie in (0, 1)")
    if inlier_ratio <= 0.0:
        return max_iterations
    if inlier_ratio > 1.0:
        raise InvalidInputError("inlier_ratio must lie in (0, 1]")
    p = inlier_ratio**sample_size
    if p >= 1.0:
        return 1
    denom = math.log1p(-p)
    if denom == 0.0:
        return max_iterations
    return max(1, math.ceil(math.log(1.0 - confidence) / denom))


@dataclass(frozen=True)
class RansacConfig:
    confidence: float = 0.99
    inlier_threshold: float = 3.0
    max_iterations: int = 10000
    min_sample_size: int | None = None
    lo_enabled: bool = True
    seed: int = 0
    scoring: Literal["inliers", "msac"] = "inliers"
    min_inliers: int = MIN_INLIERS
    workers: int | None = 1

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise InvalidInputError("confidence must lie in (0, 1)")
        if not self.inlier_threshold > 0.0:
            raise InvalidInputError("inlier_threshold must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")
        if self.scoring not in ("inliers", "msac"):
            raise InvalidInputError(f"unknown scoring {self.scoring!r}")


@dataclass
class RansacResult:
    model: StitchModel | HomographyModel
    inlier_mask: np.ndarray
    iterations_run: int
    score: float
    lo_rounds: int = 0
    errors: np.ndarray | None = field(default=None, repr=False)

    @property
    def inlier_count(self) -> int:
        return int(self.inlier_mask.sum())

    @property
    def inlier_indices(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.inlier_mask)]


# ---------------------------------------------------------------------------
# non-minimal refinement
# ---------------------------------------------------------------------------


@dataclass
class RefineResult:
    model: StitchModel
    converged: bool
    iterations: int
    initial_cost: float
    cost: float
    gradient_norm: float


class TransferProblem:
    """Symmetric transfer residuals over ``(theta, f1, f2, lambda1, lambda2)``.

    Focal lengths are carried in normalized units (pixels / norm_scale) so all
    parameters have comparable magnitude; residuals are in pixels.  The
    residual evaluation is written to be complex-analytic, which gives exact
    derivatives through the complex step.
    """

    def __init__(
        self,
        pts1: np.ndarray,
        pts2: np.ndarray,
        R1: np.ndarray,
        R2: np.ndarray,
        norm_scale: float,
        distortion: bool = False,
        shared_focal: bool = False,
        shared_distortion: bool = False,
    ):
        self.S = float(norm_scale)
        self.p1 = np.asarray(pts1, dtype=float) / self.S
        self.p2 = np.asarray(pts2, dtype=float) / self.S
        self.R1 = np.asarray(R1, dtype=float)
        self.R2 = np.asarray(R2, dtype=float)
        self.distortion = distortion
        self.shared_focal = shared_focal
        self.shared_distortion = shared_distortion
        self.r1 = np.einsum("ij,ij->i", self.p1, self.p1)
        self.r2 = np.einsum("ij,ij->i", self.p2, self.p2)

    # parameter packing -------------------------------------------------
    def pack(self, model: StitchModel) -> np.ndarray:
        S = self.S
        x = [model.theta, model.f1 / S]
        if not self.shared_focal:
            x.append(model.f2 / S)
        if self.distortion:
            x.append(model.lambda1)
            if not self.shared_distortion:
                x.append(model.lambda2)
        return np.array(x, dtype=float)

    def expand(self, x, fixed_lambdas=(0.0, 0.0)):
        theta, f1 = x[0], x[1]
        k = 2
        if self.shared_focal:
            f2 = f1
        else:
            f2 = x[k]
            k += 1
        if self.distortion:
            l1 = x[k]
            l2 = l1 if self.shared_distortion else x[k + 1]
        else:
            l1, l2 = fixed_lambdas
        return theta, f1, f2, l1, l2

    def unpack(self, x, template: StitchModel) -> StitchModel:
        theta, f1, f2, l1, l2 = self.expand(x, (template.lambda1, template.lambda2))
        S = self.S
        return StitchModel(
            math.tan(0.5 * float(theta)), float(f1) * S, float(f2) * S, float(l1), float(l2),
            template.R1, template.R2, S,
        )

    # residuals ----------------------------------------------------------
    def _transfer(self, H, src, r_src, lam_src, lam_dst, dst):
        z = 1.0 + lam_src * r_src
        m0 = H[0, 0] * src[:, 0] + H[0, 1] * src[:, 1] + H[0, 2] * z
        m1 = H[1, 0] * src[:, 0] + H[1, 1] * src[:, 1] + H[1, 2] * z
        m2 = H[2, 0] * src[:, 0] + H[2, 1] * src[:, 1] + H[2, 2] * z
        ux = m0 / m2
        uy = m1 / m2
        ru = ux * ux + uy * uy
        k = 2.0 / (1.0 + np.sqrt(1.0 - 4.0 * lam_dst * ru))
        return np.concatenate([(ux * k - dst[:, 0]) * self.S, (uy * k - dst[:, 1]) * self.S])

    def residuals(self, x, fixed_lambdas=(0.0, 0.0)) -> np.ndarray:
        theta, f1, f2, l1, l2 = self.expand(x, fixed_lambdas)
        c = np.cos(theta)
        sn = np.sin(theta)
        dtype = np.result_type(theta, f1, f2, l1, l2, float)
        Ry = np.array([[c, 0.0, sn], [0.0, 1.0, 0.0], [-sn, 0.0, c]], dtype=dtype)
        R = self.R2.T @ Ry @ self.R1
        H = R * np.array([1.0 / f1, 1.0 / f1, 1.0], dtype=dtype)[None, :]
        H = H * np.array([f2, f2, 1.0], dtype=dtype)[:, None]
        Hi = R.T * np.array([1.0 / f2, 1.0 / f2, 1.0], dtype=dtype)[None, :]
        Hi = Hi * np.array([f1, f1, 1.0], dtype=dtype)[:, None]
        fwd = self._transfer(H, self.p1, self.r1, l1, l2, self.p2)
        bwd = self._transfer(Hi, self.p2, self.r2, l2, l1, self.p1)
        return np.concatenate([fwd, bwd])

    def jacobian(self, x, fixed_lambdas=(0.0, 0.0), h: float = 1e-20) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cols = []
        for j in range(len(x)):
            xc = x.astype(complex)
            xc[j] += 1j * h
            cols.append(self.residuals(xc, fixed_lambdas).imag / h)
        return np.column_stack(cols)

    def cost(self, x, fixed_lambdas=(0.0, 0.0)) -> float:
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.residuals(x, fixed_lambdas)
        c = float(r @ r)
        return c if math.isfinite(c) else math.inf


def refine_nonminimal(
    correspondences: Sequence[Correspondence] | tuple[np.ndarray, np.ndarray],
    initial: StitchModel,
    mode: Literal["distortion", "no-distortion"] = "no-distortion",
    shared_focal: bool = False,
    shared_distortion: bool = False,
    max_iterations: int = 100,
) -> RefineResult:
    """Levenberg-Marquardt polish of a model on an inlier set.

    Minimizes the summed squared forward plus backward transfer residuals.
    ``correspondences`` may be a list or a ``(pts1, pts2)`` pair of pixel arrays.
    """
    if mode not in ("distortion", "no-distortion"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    if isinstance(correspondences, tuple):
        pts1, pts2 = correspondences
    else:
        pts1, pts2 = correspondence_arrays(correspondences)
    if len(pts1) < 4:
        raise InvalidInputError("refinement needs at least 4 correspondences")
    prob = TransferProblem(
        pts1, pts2, initial.R1, initial.R2, initial.norm_scale,
        distortion=(mode == "distortion"), shared_focal=shared_focal, shared_distortion=shared_distortion,
    )
    fixed = (initial.lambda1, initial.lambda2)
    x = prob.pack(initial)
    cost0 = prob.cost(x, fixed)
    cost = cost0
    if not math.isfinite(cost0):
        return RefineResult(initial, False, 0, cost0, cost0, math.inf)

    r = prob.residuals(x, fixed)
    J = prob.jacobian(x, fixed)
    g = 2.0 * (J.T @ r)
    A = J.T @ J
    mu = 1e-3 * float(np.max(np.diag(A))) if A.size else 1e-3
    mu = max(mu, 1e-12)
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < 1e-6 * (1.0 + cost):
            converged = True
            break
        accepted = False
        while mu < 1e20:
            damp = np.diag(np.maximum(np.diag(A), 1e-12))
            try:
                step = np.linalg.solve(A + mu * damp, -0.5 * g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            xn = x + step
            cn = prob.cost(xn, fixed) if _valid(prob, xn, fixed) else math.inf
            if cn < cost:
                tiny = cost - cn <= 1e-15 * cost and np.linalg.norm(step) <= 1e-14 * (1.0 + np.linalg.norm(x))
                x, cost = xn, cn
                mu = max(mu / 3.0, 1e-15)
                accepted = True
                break
            mu *= 4.0
        if not accepted:
            break
        r = prob.residuals(x, fixed)
        J = prob.jacobian(x, fixed)
        g = 2.0 * (J.T @ r)
        A = J.T @ J
        if tiny:
            break
    gnorm = float(np.linalg.norm(g))
    converged = converged or gnorm < 1e-6 * (1.0 + cost)
    if cost > cost0:
        return RefineResult(initial, converged, it, cost0, cost0, gnorm)
    try:
        model = prob.unpack(x, initial)
    except InvalidInputError:
        return RefineResult(initial, False, it, cost0, cost0, gnorm)
    return RefineResult(model, converged, it, cost0, cost, gnorm)


def _valid(prob: TransferProblem, x, fixed) -> bool:
    _, f1, f2, _, _ = prob.expand(x, fixed)
    return f1 > 0.0 and f2 > 0.0 and abs(x[0]) < math.pi


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------


class _Scorer:
    def __init__(self, pts1, pts2, S, threshold, scoring):
        self.pts1 = pts1
        self.pts2 = pts2
        self.S = S
        self.t = threshold
        self.scoring = scoring

    def __call__(self, model):
        err = transfer_errors(model.H, self.pts1, self.pts2, model.lambda1, model.lambda2, self.S)
        mask = err <= self.t
        if self.scoring == "inliers":
            score = float(mask.sum())
        else:
            e2 = np.minimum(np.where(np.isfinite(err), err, self.t) ** 2, self.t**2)
            score = float(np.sum(1.0 - e2 / self.t**2))
        return score, mask, err


def _shared_priors(corrs: Sequence[Correspondence]):
    R1 = corrs[0].g1.rotation
    R2 = corrs[0].g2.rotation
    for c in corrs[1:]:
        if c.g1.rotation is R1 and c.g2.rotation is R2:
            continue
        if not (np.array_equal(c.g1.rotation, R1) and np.array_equal(c.g2.rotation, R2)):
            raise InvalidInputError("all correspondences must share the per-image gravity priors")
    return np.ascontiguousarray(R1, dtype=float), np.ascontiguousarray(R2, dtype=float)


def ransac(correspondences: Sequence[Correspondence], solver_id, config: RansacConfig | None = None) -> RansacResult:
    """LO-RANSAC with adaptive termination.

    Each iteration draws its sample from a generator seeded by
    ``(config.seed, iteration)``, so results do not depend on the number of
    worker threads: hypotheses are produced in parallel batches and merged
    strictly in iteration order.
    """
    config = config or RansacConfig()
    sid = SolverId(solver_id)
    corrs = list(correspondences)
    m = config.min_sample_size or sid.sample_size
    if m != sid.sample_size:
        raise InvalidInputError(f"{sid.value} draws samples of {sid.sample_size}, not {m}")
    n = len(corrs)
    if n < max(m, 1):
        raise InvalidInputError(f"{sid.value} needs at least {m} correspondences, got {n}")
    S = corrs[0].norm_scale
    R1, R2 = _shared_priors(corrs)
    if sid.aligned and not (corrs[0].g1.is_identity() and corrs[0].g2.is_identity()):
        raise InvalidInputError(f"{sid.value} requires identity gravity priors")
    pts1, pts2 = correspondence_arrays(corrs)
    ptsn = np.hstack([pts1, pts2]) / S
    Ms = np.broadcast_to(_cayley_terms(R1, R2), (m, 3, 3, 3)).copy()
    score_fn = _Scorer(pts1, pts2, S, config.inlier_threshold, config.scoring)

    def hypothesis(i: int):
        rng = np.random.default_rng((config.seed, i))
        idx = rng.choice(n, size=m, replace=False)
        try:
            if sid is SolverId.H4dlt:
                models = [HomographyModel(dlt_homography(pts1[idx], pts2[idx]), norm_scale=S)]
            else:
                models = solve_arrays(sid, ptsn[idx], Ms, S, R1, R2).candidates
        except (DegenerateError, InvalidInputError, NotDivisibleError, np.linalg.LinAlgError):
            return None
        best = None
        for model in models:
            score, mask, err = score_fn(model)
            if best is None or score > best[0]:
                best = (score, model, mask, err)
        return best

    def local_opt(best):
        score, model, mask, err = best
        rounds = 0
        for _ in range(MAX_LO_ROUNDS):
            idx = np.flatnonzero(mask)
            if len(idx) < max(m + 1, 4):
                break
            try:
                if sid is SolverId.H4dlt:
                    refined = HomographyModel(dlt_homography(pts1[idx], pts2[idx]), norm_scale=S)
                else:
                    refined = refine_nonminimal(
                        (pts1[idx], pts2[idx]), model,
                        mode="distortion" if sid.models_distortion else "no-distortion",
                        shared_focal=sid.shared_focal, shared_distortion=sid.shared_distortion,
                        max_iterations=20,
                    ).model
            except (DegenerateError, InvalidInputError, np.linalg.LinAlgError):
                break
            new = score_fn(refined)
            if not new[0] > score:
                break
            assert new[0] >= score
            score, model, mask, err = new[0], refined, new[1], new[2]
            rounds += 1
        return (score, model, mask, err), rounds

    workers = worker_count(config.workers)
    batch = 1 if workers == 1 else 8 * workers
    best = None
    lo_rounds = 0
    budget = config.max_iterations
    iterations = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        start = 0
        while start < budget:
            stop = min(start + batch, budget)
            if pool is None:
                results = [hypothesis(i) for i in range(start, stop)]
            else:
                results = list(pool.map(hypothesis, range(start, stop)))
            for i, hyp in zip(range(start, stop), results):
                if i >= budget:
                    break
                iterations = i + 1
                if hyp is not None and (best is None or hyp[0] > best[0]):
                    best = hyp
                    if config.lo_enabled:
                        best, r = local_opt(best)
                        lo_rounds += r
                    ratio = float(best[2].sum()) / n
                    budget = min(config.max_iterations, iteration_budget(config.confidence, ratio, m, config.max_iterations))
            start = stop
    finally:
        if pool is not None:
            pool.shutdown()

    diagnostics = {
        "iterations": iterations,
        "best_inliers": int(best[2].sum()) if best is not None else 0,
        "best_score": best[0] if best is not None else None,
    }
    if best is None:
        raise NoModelError("no hypothesis produced a model", diagnostics)
    if int(best[2].sum()) < config.min_inliers:
        raise NoModelError(
            f"best model has {int(best[2].sum())} inliers, below the floor of {config.min_inliers}", diagnostics
        )
    score, model, mask, err = best
    return RansacResult(model, mask, iterations, score, lo_rounds, err)
