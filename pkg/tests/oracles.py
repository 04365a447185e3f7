"""Independent reference implementations used as test oracles."""

import math

import numpy as np


def companion_real_roots(p, imag_tol=1e-7):
    """Real roots from companion-matrix eigenvalues (numpy), ascending."""
    p = np.asarray(p, dtype=float)
    nz = np.flatnonzero(np.abs(p) > 1e-13 * np.max(np.abs(p)))
    p = p[: nz[-1] + 1]
    r = np.roots(p[::-1])
    return np.sort(r[np.abs(r.imag) < imag_tol * (1.0 + np.abs(r))].real)


def hausdorff(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return math.inf
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def axis_angle_matrix(axis, angle):
    """Rodrigues formula written out independently of the library."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def project_pair(model, d1):
    """Project a camera-1 ray into both (undistorted, normalized) images."""
    S = model.norm_scale
    d2 = model.R @ d1
    u1 = (model.f1 / S) * d1[:2] / d1[2]
    u2 = (model.f2 / S) * d2[:2] / d2[2]
    return u1, u2


def parameter_gap(candidate, gt):
    """Largest of the relative focal, absolute lambda and absolute yaw errors."""
    return max(
        abs(candidate.f1 - gt.f1) / gt.f1,
        abs(candidate.f2 - gt.f2) / gt.f2,
        abs(candidate.lambda1 - gt.lambda1),
        abs(candidate.lambda2 - gt.lambda2),
        abs(candidate.theta - gt.theta),
    )


def best_gap(candidates, gt):
    gaps = [parameter_gap(c, gt) for c in candidates]
    return min(gaps) if gaps else math.inf


def sample_correspondences(model, n, rng, spread=0.25, max_radius=1.2):
    """Noise-free correspondences for ``model`` from rays near the optical-axis bisector.

    Written against the camera equations directly: project with K R, then
    invert the division model in closed form.
    """
    from gravpano.geometry import Correspondence, DistortedPoint, GravityPrior

    S = model.norm_scale
    axis2 = model.R.T @ np.array([0.0, 0.0, 1.0])
    b = np.array([0.0, 0.0, 1.0]) + axis2
    b /= np.linalg.norm(b)
    out = []
    while len(out) < n:
        d1 = b + spread * rng.normal(size=3)
        d2 = model.R @ d1
        if d1[2] <= 0.1 or d2[2] <= 0.1:
            continue
        u1 = (model.f1 / S) * d1[:2] / d1[2]
        u2 = (model.f2 / S) * d2[:2] / d2[2]
        if max(np.linalg.norm(u1), np.linalg.norm(u2)) > max_radius:
            continue
        pts = []
        for u, lam in ((u1, model.lambda1), (u2, model.lambda2)):
            r2 = u @ u
            disc = 1.0 - 4.0 * lam * r2
            if disc < 0.0:
                break
            pts.append(u * 2.0 / (1.0 + math.sqrt(disc)))
        if len(pts) < 2:
            continue
        out.append(
            Correspondence(
                DistortedPoint(pts[0][0] * S, pts[0][1] * S, S),
                DistortedPoint(pts[1][0] * S, pts[1][1] * S, S),
                GravityPrior(model.R1),
                GravityPrior(model.R2),
            )
        )
    return out
