"""Camera, rotation and distortion primitives shared by all solvers.

Conventions
-----------
* Image points are principal-point-centred pixels.  All distortion math runs on
  normalized coordinates ``pixel / norm_scale``; ``lambda`` values are therefore
  expressed in normalized units while focal lengths stay in pixels.
* A gravity prior ``R_k`` maps camera-k coordinates into a frame whose y-axis
  is vertical.  The relative rotation from camera 1 to camera 2 is
  ``R2.T @ Ry(s) @ R1`` with ``s = tan(theta / 2)``.
* Homogeneous undistorted points follow the one-parameter division model:
  ``[u, v, 1 + lambda * (u**2 + v**2)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .errors import InvalidInputError, OutOfRangeError, SingularConfigurationError

Vec3 = np.ndarray
Mat3 = np.ndarray

_DOWN = np.array([0.0, -1.0, 0.0])

# Unnormalized Cayley yaw matrix split by powers of s: Ry(s) ~ Y0 + s*Y1 + s^2*Y2.
CAYLEY_BASIS = np.array(
    [
        np.eye(3),
        [[0.0, 0.0, 2.0], [0.0, 0.0, 0.0], [-2.0, 0.0, 0.0]],
        np.diag([-1.0, 1.0, -1.0]),
    ]
)


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------


def skew(v: Vec3) -> Mat3:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def axis_angle(axis, angle: float) -> Mat3:
    """Rotation by ``angle`` radians about ``axis`` (Rodrigues)."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.eye(3)
    K = skew(axis / n)
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rot_x(angle: float) -> Mat3:
    return axis_angle((1.0, 0.0, 0.0), angle)


def rot_y(angle: float) -> Mat3:
    return axis_angle((0.0, 1.0, 0.0), angle)


def rot_z(angle: float) -> Mat3:
    return axis_angle((0.0, 0.0, 1.0), angle)


def rotation_angle(R: Mat3) -> float:
    """Angle of a rotation matrix in radians, robust near 0 and pi."""
    # atan2 form keeps precision for tiny angles where acos loses it
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return math.atan2(0.5 * float(np.linalg.norm(w)), 0.5 * (float(np.trace(R)) - 1.0))


def rotation_error(R_est: Mat3, R_gt: Mat3) -> float:
    """Angular distance ``angle(R_est @ R_gt.T)`` in radians."""
    return rotation_angle(R_est @ R_gt.T)


def cayley_yaw(s: float) -> Mat3:
    """Rotation about the y-axis parameterized by ``s = tan(theta / 2)``.

    The parameterization cannot represent a 180 degree yaw (s -> infinity).
    """
    s = float(s)
    return (CAYLEY_BASIS[0] + s * CAYLEY_BASIS[1] + s * s * CAYLEY_BASIS[2]) / (1.0 + s * s)


def cayley_terms(R1: Mat3, R2: Mat3) -> np.ndarray:
    """Coefficients ``M[k]`` with ``R2.T @ Ry_unnorm(s) @ R1 = sum_k s**k M[k]``."""
    return np.einsum("ji,kjl,lm->kim", R2, CAYLEY_BASIS, R1)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistortedPoint:
    u: float
    v: float
    norm_scale: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise InvalidInputError("point coordinates must be finite")
        if not (self.norm_scale > 0.0 and math.isfinite(self.norm_scale)):
            raise InvalidInputError("norm_scale must be positive")

    @property
    def normalized(self) -> tuple[float, float]:
        return self.u / self.norm_scale, self.v / self.norm_scale


@dataclass(frozen=True)
class GravityPrior:
    rotation: Mat3 = field(default_factory=lambda: np.eye(3))

    @classmethod
    def identity(cls) -> "GravityPrior":
        return cls(np.eye(3))

    @classmethod
    def from_gravity(cls, gravity) -> "GravityPrior":
        return gravity_alignment(gravity)

    @cached_property
    def _identity_gap(self) -> float:
        return float(np.max(np.abs(self.rotation - np.eye(3))))

    def is_identity(self, tol: float = 1e-9) -> bool:
        return self._identity_gap <= tol


@dataclass(frozen=True)
class Correspondence:
    p1: DistortedPoint
    p2: DistortedPoint
    g1: GravityPrior = field(default_factory=GravityPrior.identity)
    g2: GravityPrior = field(default_factory=GravityPrior.identity)

    @classmethod
    def from_pixels(cls, u1, v1, u2, v2, R1=None, R2=None, norm_scale: float = 1.0):
        return cls(
            DistortedPoint(float(u1), float(v1), norm_scale),
            DistortedPoint(float(u2), float(v2), norm_scale),
            GravityPrior(np.eye(3) if R1 is None else np.asarray(R1, dtype=float)),
            GravityPrior(np.eye(3) if R2 is None else np.asarray(R2, dtype=float)),
        )

    @property
    def norm_scale(self) -> float:
        return self.p1.norm_scale


def scale_divisor(M: Mat3) -> float:
    """Divisor used to fix the projective scale of G/H deterministically."""
    if abs(M[2, 2]) > 1e-12:
        return float(M[2, 2])
    idx = np.unravel_index(np.argmax(np.abs(M)), M.shape)
    return float(M[idx])


@dataclass(frozen=True)
class StitchModel:
    """Yaw, focal lengths and division-model coefficients of a camera pair.

    ``f1``/``f2`` are in pixels, ``lambda1``/``lambda2`` in normalized units
    (see ``norm_scale``).  ``G`` and ``H`` are derived on first access.
    """

    s: float
    f1: float
    f2: float
    lambda1: float = 0.0
    lambda2: float = 0.0
    R1: Mat3 = field(default_factory=lambda: np.eye(3), repr=False)
    R2: Mat3 = field(default_factory=lambda: np.eye(3), repr=False)
    norm_scale: float = 1.0

    def __post_init__(self):
        if not (self.f1 > 0.0 and self.f2 > 0.0):
            raise InvalidInputError(f"focal lengths must be positive, got {self.f1}, {self.f2}")

    @property
    def theta(self) -> float:
        return 2.0 * math.atan(self.s)

    @cached_property
    def R(self) -> Mat3:
        """Relative rotation taking camera-1 rays to camera-2 rays."""
        return self.R2.T @ cayley_yaw(self.s) @ self.R1

    @cached_property
    def _raw_H(self) -> Mat3:
        K2 = np.diag([self.f2, self.f2, 1.0])
        K1inv = np.diag([1.0 / self.f1, 1.0 / self.f1, 1.0])
        return K2 @ self.R @ K1inv

    @cached_property
    def H(self) -> Mat3:
        """Pixel-unit homography, scaled so that ``H[2, 2] == 1`` when possible."""
        return self._raw_H / scale_divisor(self._raw_H)

    @cached_property
    def G(self) -> Mat3:
        """``diag(1, 1, 1/f2) R diag(1, 1, f1)``, sharing the scale divisor of ``H``."""
        return (self.f1 / self.f2) * self.H

    @cached_property
    def H_normalized(self) -> Mat3:
        """Homography acting on normalized homogeneous (undistorted) points."""
        S = self.norm_scale
        return np.diag([1.0 / S, 1.0 / S, 1.0]) @ self.H @ np.diag([S, S, 1.0])

    def params(self) -> dict:
        return {
            "s": self.s,
            "theta_deg": math.degrees(self.theta),
            "f1": self.f1,
            "f2": self.f2,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
        }


def compose_model(
    s: float,
    f1: float,
    f2: float,
    lambda1: float = 0.0,
    lambda2: float = 0.0,
    g1: GravityPrior | None = None,
    g2: GravityPrior | None = None,
    norm_scale: float = 1.0,
) -> StitchModel:
    if not (f1 > 0.0 and f2 > 0.0):
        raise InvalidInputError("focal lengths must be positive")
    return StitchModel(
        float(s),
        float(f1),
        float(f2),
        float(lambda1),
        float(lambda2),
        np.eye(3) if g1 is None else g1.rotation,
        np.eye(3) if g2 is None else g2.rotation,
        float(norm_scale),
    )


# ---------------------------------------------------------------------------
# Gravity alignment
# ---------------------------------------------------------------------------


def gravity_alignment(gravity) -> GravityPrior:
    """Minimal-angle rotation taking the measured gravity direction to (0, -1, 0).

    The rotation axis lies in the plane orthogonal to the target, so the
    result carries no yaw.
    """
    g = np.asarray(gravity, dtype=float).reshape(3)
    n = np.linalg.norm(g)
    if not np.all(np.isfinite(g)) or n == 0.0:
        raise InvalidInputError("gravity vector must be finite and nonzero")
    g = g / n
    c = float(g @ _DOWN)
    if 1.0 + c < 1e-10:
        raise SingularConfigurationError(
            "gravity is anti-parallel to the target axis; alignment is ambiguous"
        )
    K = skew(np.cross(g, _DOWN))
    return GravityPrior(np.eye(3) + K + (K @ K) / (1.0 + c))


# ---------------------------------------------------------------------------
# Division model
# ---------------------------------------------------------------------------


def undistort(p: DistortedPoint, lam: float) -> Vec3:
    """Homogeneous undistorted point in normalized coordinates."""
    x, y = p.normalized
    return np.array([x, y, 1.0 + lam * (x * x + y * y)])


def undistort_points(xy: np.ndarray, lam: float) -> np.ndarray:
    """Vectorized ``undistort`` on an ``(n, 2)`` array of normalized points."""
    xy = np.asarray(xy, dtype=float)
    z = 1.0 + lam * np.einsum("ij,ij->i", xy, xy)
    return np.column_stack([xy, z])


def distort_points(xy_u: np.ndarray, lam: float) -> np.ndarray:
    """Inverse of the division model for inhomogeneous normalized points.

    Out-of-range points (no real distorted radius) come back as NaN.
    """
    xy_u = np.asarray(xy_u, dtype=float)
    r2 = np.einsum("ij,ij->i", xy_u, xy_u)
    disc = 1.0 - 4.0 * lam * r2
    with np.errstate(invalid="ignore"):
        # 2 r_u / (1 + sqrt(disc)) is the small root of lam r_u r_d^2 - r_d + r_u = 0
        scale = 2.0 / (1.0 + np.sqrt(disc))
    scale = np.where(disc >= 0.0, scale, np.nan)
    return xy_u * scale[:, None]


def distort(q: Vec3, lam: float, norm_scale: float = 1.0) -> DistortedPoint:
    q = np.asarray(q, dtype=float)
    if q[2] == 0.0:
        raise InvalidInputError("homogeneous point at infinity cannot be distorted")
    xy = distort_points((q[:2] / q[2])[None, :], lam)[0]
    if not np.all(np.isfinite(xy)):
        raise OutOfRangeError(f"point {q} is outside the distortable range for lambda={lam}")
    return DistortedPoint(float(xy[0] * norm_scale), float(xy[1] * norm_scale), norm_scale)


# ---------------------------------------------------------------------------
# Constraint expansion
# ---------------------------------------------------------------------------

A12_BASIS = ("s2fw", "s2f", "s2w", "s2", "sfw", "sf", "sw", "s", "fw", "f", "w", "1")
A3_BASIS = ("s2f", "s2", "sf", "s", "f", "1")
B_BASIS = ("s2fl1", "s2f", "s2", "sfl1", "sf", "s", "fl1", "f", "1")
# rows 1/2 with both distortions unknown: s^k times each of these
_DIST_ROW_MONOS = ("fl1w", "fw", "w", "fl1l2", "fl1", "fl2", "f", "l2", "1")
DIST_ROW_BASIS = tuple(p + m for p in ("s2", "s", "") for m in _DIST_ROW_MONOS)


@dataclass(frozen=True)
class ConstraintRows:
    """Coefficient rows of ``[p2]_x G p1 = 0`` for one correspondence.

    ``a1``/``a2`` come from the first two rows of ``[p2]_x``; their basis is
    ``A12_BASIS`` in zero-distortion mode and ``DIST_ROW_BASIS`` in distortion
    mode.  The third row never involves ``w`` or ``lambda2`` and is exposed as
    ``a3`` (``A3_BASIS``) or ``b`` (``B_BASIS``).
    """

    mode: str
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray | None = None
    b: np.ndarray | None = None


def _row_blocks(c: Correspondence):
    """Quadratics A_i(s), B_i(s) with ``R2.T Ry R1 [x1, y1, f z] = A + f z B``."""
    M = cayley_terms(c.g1.rotation, c.g2.rotation)
    x1, y1 = c.p1.normalized
    A = (M[:, :, 0] * x1 + M[:, :, 1] * y1).T  # A[i, k]: row i, power k
    B = M[:, :, 2].T
    return A, B


def _by_power(*coeffs):
    """Interleave per-monomial quadratics into an s^2, s, 1 ordered vector."""
    return np.array([[c[k] for c in coeffs] for k in (2, 1, 0)]).ravel()


def expand_constraints(
    c: Correspondence, mode: Literal["zero-distortion", "distortion"] = "zero-distortion"
) -> ConstraintRows:
    A, B = _row_blocks(c)
    x1, y1 = c.p1.normalized
    x2, y2 = c.p2.normalized
    N = x2 * A[1] - y2 * A[0]
    D = x2 * B[1] - y2 * B[0]
    if mode == "zero-distortion":
        # pre-undistorted points: z = 1
        a1 = _by_power(y2 * B[2], -B[1], y2 * A[2], -A[1])
        a2 = _by_power(-x2 * B[2], B[0], -x2 * A[2], A[0])
        a3 = _by_power(D, N)
        return ConstraintRows(mode, a1, a2, a3=a3)
    if mode == "distortion":
        r1 = x1 * x1 + y1 * y1
        r2 = x2 * x2 + y2 * y2
        # [fl1w, fw, w, fl1l2, fl1, fl2, f, l2, 1]
        a1 = _by_power(
            y2 * r1 * B[2], y2 * B[2], y2 * A[2],
            -r1 * r2 * B[1], -r1 * B[1], -r2 * B[1], -B[1], -r2 * A[1], -A[1],
        )
        a2 = _by_power(
            -x2 * r1 * B[2], -x2 * B[2], -x2 * A[2],
            r1 * r2 * B[0], r1 * B[0], r2 * B[0], B[0], r2 * A[0], A[0],
        )
        b = _by_power(r1 * D, D, N)
        return ConstraintRows(mode, a1, a2, b=b)
    raise InvalidInputError(f"unknown mode {mode!r}")


def monomial_values(basis, s: float, f: float = 1.0, w: float = 1.0, l1: float = 0.0, l2: float = 0.0):
    """Evaluate a monomial basis (names as in ``A12_BASIS`` etc.) at a point."""
    vals = {"s2": s * s, "s": s, "f": f, "w": w, "l1": l1, "l2": l2}
    out = []
    for name in basis:
        v = 1.0
        rest = name
        for tok in ("s2", "s", "f", "l1", "l2", "w"):
            while rest.startswith(tok):
                v *= vals[tok]
                rest = rest[len(tok):]
        if rest not in ("", "1"):
            raise InvalidInputError(f"cannot parse monomial {name!r}")
        out.append(v)
    return np.array(out)


# ---------------------------------------------------------------------------
# Transfer error
# ---------------------------------------------------------------------------


def _map_points(H: Mat3, pts: np.ndarray, lam_src: float, lam_dst: float, S: float) -> np.ndarray:
    q = undistort_points(pts / S, lam_src)
    q[:, :2] *= S
    m = q @ H.T
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = m[:, :2] / m[:, 2:3] / S
    return distort_points(xy, lam_dst) * S


def transfer_errors(
    H: Mat3,
    pts1: np.ndarray,
    pts2: np.ndarray,
    lambda1: float = 0.0,
    lambda2: float = 0.0,
    norm_scale: float = 1.0,
    mode: Literal["symmetric", "forward"] = "symmetric",
) -> np.ndarray:
    """Per-point pixel transfer errors of a (pixel-unit) homography.

    Points that cannot be mapped (division by zero, out of distortion range)
    score ``+inf``.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    fwd = np.linalg.norm(_map_points(H, pts1, lambda1, lambda2, norm_scale) - pts2, axis=1)
    fwd = np.where(np.isfinite(fwd), fwd, np.inf)
    if mode == "forward":
        return fwd
    if mode != "symmetric":
        raise InvalidInputError(f"unknown mode {mode!r}")
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(pts1), np.inf)
    bwd = np.linalg.norm(_map_points(Hinv, pts2, lambda2, lambda1, norm_scale) - pts1, axis=1)
    bwd = np.where(np.isfinite(bwd), bwd, np.inf)
    return 0.5 * (fwd + bwd)


def model_transfer_errors(model, pts1, pts2, mode="symmetric") -> np.ndarray:
    """``transfer_errors`` for anything exposing ``H``, ``lambda1/2`` and ``norm_scale``."""
    return transfer_errors(
        model.H, pts1, pts2, model.lambda1, model.lambda2, model.norm_scale, mode
    )


def transfer_error(model, c: Correspondence, mode: Literal["symmetric", "forward"] = "symmetric") -> float:
    return float(
        model_transfer_errors(model, [[c.p1.u, c.p1.v]], [[c.p2.u, c.p2.v]], mode)[0]
    )


def correspondence_arrays(corrs) -> tuple[np.ndarray, np.ndarray]:
    """Stack correspondences into ``(n, 2)`` pixel arrays for both images."""
    pts1 = np.array([[c.p1.u, c.p1.v] for c in corrs], dtype=float).reshape(-1, 2)
    pts2 = np.array([[c.p2.u, c.p2.v] for c in corrs], dtype=float).reshape(-1, 2)
    return pts1, pts2


def constraint_residuals(model: StitchModel, corrs) -> np.ndarray:
    """Relative residuals of the three rows of ``[p2]_x G p1 = 0``, shape ``(n, 3)``.

    Points are undistorted with the model's own coefficients; each row is
    divided by ``|p2| |G p1|`` so the values are scale free.
    """
    S = model.norm_scale
    G = (model.f1 / model.f2) * model.H_normalized
    out = np.empty((len(corrs), 3))
    for k, c in enumerate(corrs):
        x1, y1 = c.p1.u / S, c.p1.v / S
        x2, y2 = c.p2.u / S, c.p2.v / S
        p1 = np.array([x1, y1, 1.0 + model.lambda1 * (x1 * x1 + y1 * y1)])
        p2 = np.array([x2, y2, 1.0 + model.lambda2 * (x2 * x2 + y2 * y2)])
        m = G @ p1
        out[k] = np.abs(np.cross(p2, m)) / (np.linalg.norm(p2) * np.linalg.norm(m))
    return out
