"""Gravity-prior minimal solvers for rotation-only stitching.

Every solver works in normalized image coordinates (pixels divided by the
correspondences' ``norm_scale``) and returns a :class:`SolverCandidateSet`
whose models carry pixel focal lengths.

Notation used in the kernels: for one correspondence with first-image point
``(x1, y1)`` the rotated ray ``R2.T Ry(s) R1 [x1, y1, f z1]`` splits into
``A(s) + f z1 B(s)`` where ``A``/``B`` are 3-vectors of quadratics in ``s``.
The third row of ``[p2]_x G p1 = 0`` then reads ``N(s) + f z1 D(s) = 0`` with
``N = x2 A_2 - y2 A_1`` and ``D = x2 B_2 - y2 B_1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DegenerateError, InvalidInputError, NotDivisibleError
from .geometry import Correspondence, StitchModel, scale_divisor
from .polysolve import (
    _cauchy_bound,
    _deflate_kernel,
    _degree,
    _det2,
    _det3,
    _polymul,
    _polysub,
    _polyval,
    _quadratic_roots,
    _quartic_kernel,
    _sturm_kernel,
    TRIM_RTOL,
)


class SolverId(str, Enum):
    H1f = "H1f"
    H2f1f2 = "H2f1f2"
    H2lambda = "H2lambda"
    H3l1l2 = "H3l1l2"
    H1f_aligned = "H1f_aligned"
    H2f1f2_aligned = "H2f1f2_aligned"
    H2lambda_aligned = "H2lambda_aligned"
    H3l1l2_aligned = "H3l1l2_aligned"
    H4dlt = "H4dlt"

    @property
    def sample_size(self) -> int:
        return SAMPLE_SIZE[self]

    @property
    def max_solutions(self) -> int:
        return MAX_RAW_ROOTS[self]

    @property
    def aligned(self) -> bool:
        return self.value.endswith("_aligned")

    @property
    def base(self) -> "SolverId":
        return SolverId(self.value.removesuffix("_aligned"))

    @property
    def models_distortion(self) -> bool:
        return self.base in (SolverId.H2lambda, SolverId.H3l1l2)

    @property
    def shared_focal(self) -> bool:
        return self.base in (SolverId.H1f, SolverId.H2lambda)

    @property
    def shared_distortion(self) -> bool:
        return self.base is SolverId.H2lambda


SAMPLE_SIZE = {
    SolverId.H1f: 1,
    SolverId.H2f1f2: 2,
    SolverId.H2lambda: 2,
    SolverId.H3l1l2: 3,
    SolverId.H1f_aligned: 1,
    SolverId.H2f1f2_aligned: 2,
    SolverId.H2lambda_aligned: 2,
    SolverId.H3l1l2_aligned: 3,
    SolverId.H4dlt: 4,
}

# Bounds on the number of real roots of the univariate polynomial each solver
# solves (before any feasibility filtering).
MAX_RAW_ROOTS = {
    SolverId.H1f: 4,
    SolverId.H2f1f2: 4,
    SolverId.H2lambda: 8,
    SolverId.H3l1l2: 6,
    SolverId.H1f_aligned: 2,
    SolverId.H2f1f2_aligned: 2,
    SolverId.H2lambda_aligned: 2,
    SolverId.H3l1l2_aligned: 2,
    SolverId.H4dlt: 1,
}
MAX_CANDIDATES = {**MAX_RAW_ROOTS, SolverId.H2lambda: 6}

LAMBDA_WINDOW = (-2.0, 0.5)
S_BRACKET = (-15.0, 15.0)
DEGENERATE_RTOL = 1e-12


@dataclass
class SolverCandidateSet:
    solver_id: SolverId
    candidates: list[StitchModel]
    raw_count: int
    polynomial: np.ndarray | None = field(default=None, repr=False)
    residuals: list[float] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


@dataclass(frozen=True)
class HomographyModel:
    """Plain 8-DOF homography (no parameter decomposition)."""

    H: np.ndarray
    lambda1: float = 0.0
    lambda2: float = 0.0
    norm_scale: float = 1.0

    def decompose(self) -> tuple[np.ndarray, float, float]:
        """Rotation and focal lengths of ``H ~ K2 R K1^-1`` (principal points at 0).

        Uses the orthogonality of the rows and columns of ``K2^-1 H K1``;
        raises :class:`DegenerateError` when no positive focal estimate exists
        (e.g. near-identity motion).
        """
        h = self.H / np.linalg.norm(self.H)
        # rows 0/1 against row 2 constrain f1; columns 0/1 against column 2 constrain f2
        f1 = _best_square(
            [(-h[0, 2] * h[2, 2], h[0, 0] * h[2, 0] + h[0, 1] * h[2, 1]),
             (-h[1, 2] * h[2, 2], h[1, 0] * h[2, 0] + h[1, 1] * h[2, 1])]
        )
        f2 = _best_square(
            [(-(h[0, 0] * h[0, 2] + h[1, 0] * h[1, 2]), h[2, 0] * h[2, 2]),
             (-(h[0, 1] * h[0, 2] + h[1, 1] * h[1, 2]), h[2, 1] * h[2, 2])]
        )
        if f1 is None or f2 is None:
            raise DegenerateError("homography does not determine positive focal lengths")
        M = np.diag([1.0 / f2, 1.0 / f2, 1.0]) @ h @ np.diag([f1, f1, 1.0])
        if np.linalg.det(M) < 0.0:
            M = -M
        U, _, Vt = np.linalg.svd(M)
        R = U @ Vt
        if np.linalg.det(R) < 0.0:
            U[:, -1] *= -1.0
            R = U @ Vt
        return R, f1, f2


def _best_square(pairs) -> float | None:
    """sqrt(num / den) for the pair with the largest |den| that gives a positive ratio."""
    best = None
    best_den = 0.0
    for num, den in pairs:
        if den != 0.0 and num / den > 0.0 and abs(den) > best_den:
            best = math.sqrt(num / den)
            best_den = abs(den)
    return best


# status codes returned by the kernels
_OK = 0
_DEGENERATE = 1
_NOT_DIVISIBLE = 2


# ---------------------------------------------------------------------------
# shared kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _cayley_terms(R1, R2):
    # M[k] = R2.T @ Y_k @ R1 for the unnormalized Cayley yaw basis
    Y = np.zeros((3, 3, 3))
    Y[0, 0, 0] = 1.0
    Y[0, 1, 1] = 1.0
    Y[0, 2, 2] = 1.0
    Y[1, 0, 2] = 2.0
    Y[1, 2, 0] = -2.0
    Y[2, 0, 0] = -1.0
    Y[2, 1, 1] = 1.0
    Y[2, 2, 2] = -1.0
    M = np.empty((3, 3, 3))
    for k in range(3):
        M[k] = R2.T @ (Y[k] @ R1)
    return M


@njit(cache=True)
def _blocks(M, x1, y1):
    """A[i] and B[i] quadratics (ascending in s) for one first-image point."""
    A = np.empty((3, 3))
    B = np.empty((3, 3))
    for i in range(3):
        for k in range(3):
            A[i, k] = M[k, i, 0] * x1 + M[k, i, 1] * y1
            B[i, k] = M[k, i, 2]
    return A, B


@njit(cache=True)
def _row3(A, B, x2, y2):
    N = x2 * A[1] - y2 * A[0]
    D = x2 * B[1] - y2 * B[0]
    return N, D


@njit(cache=True)
def _maxabs(a):
    m = 0.0
    for v in a:
        m = max(m, abs(v))
    return m


@njit(cache=True)
def _front(A, B, s, F, z2):
    """Point in front of both cameras: positive rotated depth and third coordinates."""
    if F <= 0.0 or z2 <= 0.0:
        return False
    q3 = _polyval(A[2], s) + F * _polyval(B[2], s)
    return q3 > 0.0


@njit(cache=True)
def _q_at(A, B, s, F):
    q = np.empty(3)
    for i in range(3):
        q[i] = _polyval(A[i], s) + F * _polyval(B[i], s)
    return q


@njit(cache=True)
def _w_from_row(q, x2, y2, z2):
    """w = 1/f2 from whichever of the first two rows is better conditioned."""
    if abs(y2) >= abs(x2):
        den = y2 * q[2]
        return z2 * q[1] / den if den != 0.0 else np.nan
    den = x2 * q[2]
    return z2 * q[0] / den if den != 0.0 else np.nan


@njit(cache=True)
def _row_residual(q, w, x2, y2, z2):
    """Relative residual of the better-conditioned first/second row."""
    if abs(y2) >= abs(x2):
        a = y2 * w * q[2]
        b = z2 * q[1]
    else:
        a = x2 * w * q[2]
        b = z2 * q[0]
    den = abs(a) + abs(b)
    return abs(a - b) / den if den > 0.0 else 0.0


# ---------------------------------------------------------------------------
# H1f
# ---------------------------------------------------------------------------


@njit(cache=True)
def _h1f_poly(M, x1, y1, x2, y2):
    A, B = _blocks(M, x1, y1)
    N, D = _row3(A, B, x2, y2)
    if abs(y2) >= abs(x2):
        c, Ai, Bi = y2, A[1], B[1]
    else:
        c, Ai, Bi = x2, A[0], B[0]
    # c A3 D^2 - (c B3 - Ai) N D - Bi N^2, from f = -N/D in (f x row)
    DD = _polymul(D, D)
    ND = _polymul(N, D)
    NN = _polymul(N, N)
    p = _polymul(c * A[2], DD)
    p = _polysub(p, _polymul(c * B[2] - Ai, ND))
    p = _polysub(p, _polymul(Bi, NN))
    scale = _maxabs(A[2]) * _maxabs(D) ** 2 + (_maxabs(B[2]) + _maxabs(Ai)) * _maxabs(N) * _maxabs(D)
    scale += _maxabs(Bi) * _maxabs(N) ** 2
    return p, N, D, A, B, scale


@njit(cache=True)
def _h1f_kernel(M, pts):
    x1, y1, x2, y2 = pts[0, 0], pts[0, 1], pts[0, 2], pts[0, 3]
    p6, N, D, A, B, scale = _h1f_poly(M, x1, y1, x2, y2)
    out = np.empty((4, 6))
    if _maxabs(p6) <= DEGENERATE_RTOL * scale:
        return _DEGENERATE, 0, out[:0], p6
    q, rem = _deflate_kernel(p6)
    if rem > 1e-8 * _maxabs(p6):
        return _NOT_DIVISIBLE, 0, out[:0], p6
    roots = _quartic_kernel(q)
    nN = _maxabs(N)
    nD = _maxabs(D)
    n = 0
    for s in roots:
        d = _polyval(D, s)
        nv = _polyval(N, s)
        g = 1.0 + s * s
        if abs(d) <= 1e-9 * nD * g and abs(nv) <= 1e-9 * nN * g:
            # row 3 vanishes for every f: the sample cannot fix the focal
            return _DEGENERATE, len(roots), out[:0], p6
        if d == 0.0:
            continue
        f = -nv / d
        if not (f > 0.0) or not _front(A, B, s, f, 1.0):
            continue
        out[n, 0] = s
        out[n, 1] = f
        out[n, 2] = f
        out[n, 3] = 0.0
        out[n, 4] = 0.0
        out[n, 5] = 0.0
        n += 1
    return _OK, len(roots), out[:n], p6


# ---------------------------------------------------------------------------
# H2f1f2
# ---------------------------------------------------------------------------


@njit(cache=True)
def _h2f1f2_polymat(Ms, pts):
    C = np.empty((2, 2, 3))
    for k in range(2):
        A, B = _blocks(Ms[k], pts[k, 0], pts[k, 1])
        N, D = _row3(A, B, pts[k, 2], pts[k, 3])
        C[k, 0] = D
        C[k, 1] = N
    return C


@njit(cache=True)
def _h2f1f2_kernel(Ms, pts):
    C = _h2f1f2_polymat(Ms, pts)
    det = _det2(C)
    out = np.empty((4, 6))
    scale = _maxabs(C[0, 0]) * _maxabs(C[1, 1]) + _maxabs(C[0, 1]) * _maxabs(C[1, 0])
    if _maxabs(det) <= DEGENERATE_RTOL * scale:
        return _DEGENERATE, 0, out[:0], det
    roots = _quartic_kernel(det)
    A1, B1 = _blocks(Ms[0], pts[0, 0], pts[0, 1])
    A2, B2 = _blocks(Ms[1], pts[1, 0], pts[1, 1])
    n = 0
    for s in roots:
        d0 = _polyval(C[0, 0], s)
        d1 = _polyval(C[1, 0], s)
        if abs(d0) >= abs(d1):
            if d0 == 0.0:
                continue
            f1 = -_polyval(C[0, 1], s) / d0
        else:
            f1 = -_polyval(C[1, 1], s) / d1
        if not (f1 > 0.0):
            continue
        q = _q_at(A1, B1, s, f1)
        w = _w_from_row(q, pts[0, 2], pts[0, 3], 1.0)
        if not (w > 0.0):
            continue
        if not (_front(A1, B1, s, f1, 1.0) and _front(A2, B2, s, f1, 1.0)):
            continue
        q2 = _q_at(A2, B2, s, f1)
        out[n, 0] = s
        out[n, 1] = f1
        out[n, 2] = 1.0 / w
        out[n, 3] = 0.0
        out[n, 4] = 0.0
        out[n, 5] = _row_residual(q2, w, pts[1, 2], pts[1, 3], 1.0)
        n += 1
    return _OK, len(roots), out[:n], det


# ---------------------------------------------------------------------------
# H2lambda
# ---------------------------------------------------------------------------


@njit(cache=True)
def _h2lambda_parts(Ms, pts):
    A1, B1 = _blocks(Ms[0], pts[0, 0], pts[0, 1])
    A2, B2 = _blocks(Ms[1], pts[1, 0], pts[1, 1])
    x2, y2 = pts[0, 2], pts[0, 3]
    N1, D1 = _row3(A1, B1, x2, y2)
    N2, D2 = _row3(A2, B2, pts[1, 2], pts[1, 3])
    r11 = pts[0, 0] ** 2 + pts[0, 1] ** 2
    r12 = pts[1, 0] ** 2 + pts[1, 1] ** 2
    r2 = x2 * x2 + y2 * y2
    delta = r12 - r11
    # the two third rows, solved for u = f and v = f*lambda by Cramer:
    #   u = U/Q, v = V/Q, Q = D1 D2 delta
    N1D2 = _polymul(N1, D2)
    N2D1 = _polymul(N2, D1)
    V = _polysub(N1D2, N2D1)
    U = _polysub(r11 * N2D1, r12 * N1D2)
    Q = delta * _polymul(D1, D2)
    if abs(y2) >= abs(x2):
        c, Ai, Bi = y2, A1[1], B1[1]
    else:
        c, Ai, Bi = x2, A1[0], B1[0]
    # f x (degree-6 row of the first correspondence), with f z1 = -N1/D1,
    # multiplied through by D1 * Q
    T1 = _polysub(_polymul(A1[2], D1), _polymul(N1, B1[2]))
    T2 = _polysub(_polymul(Ai, D1), _polymul(N1, Bi))
    W = _polysub((r11 - r2) * N2D1, (r12 - r2) * N1D2)  # U + V r2
    p8 = _polysub(c * _polymul(Q, T1), _polymul(W, T2))
    scale = (abs(c * delta) + abs(r11 - r2) + abs(r12 - r2)) * (
        _maxabs(N1) + _maxabs(D1) + _maxabs(N2) + _maxabs(D2)
    ) ** 2 * (_maxabs(A1[2]) + _maxabs(B1[2]) + _maxabs(Ai) + _maxabs(Bi)) * (
        _maxabs(N1) + _maxabs(D1)
    )
    return p8, U, V, Q, delta, A1, B1, A2, B2, r11, r12, r2, scale


@njit(cache=True)
def _h2lambda_kernel(Ms, pts, lam_lo, lam_hi, s_lo, s_hi):
    p8, U, V, Q, delta, A1, B1, A2, B2, r11, r12, r2, scale = _h2lambda_parts(Ms, pts)
    out = np.empty((8, 6))
    if abs(delta) <= 1e-12 * max(r11, r12) or _maxabs(p8) <= DEGENERATE_RTOL * scale:
        return _DEGENERATE, 0, out[:0], p8
    deg = _degree(p8, TRIM_RTOL)
    if deg < 1:
        return _DEGENERATE, 0, out[:0], p8
    pt = p8[: deg + 1].copy()
    bound = _cauchy_bound(pt, deg)
    roots = _sturm_kernel(pt, max(s_lo, -bound), min(s_hi, bound), 1e-12)
    nQ = _maxabs(Q)
    r2b = pts[1, 2] ** 2 + pts[1, 3] ** 2
    n = 0
    for s in roots:
        qv = _polyval(Q, s)
        if abs(qv) <= 1e-12 * nQ * (1.0 + s * s) ** 2:
            continue
        uv = _polyval(U, s)
        f = uv / qv
        if not (f > 0.0) or uv == 0.0:
            continue
        lam = _polyval(V, s) / uv
        if not (lam_lo <= lam <= lam_hi):
            continue
        if not _front(A1, B1, s, f * (1.0 + lam * r11), 1.0 + lam * r2):
            continue
        if not _front(A2, B2, s, f * (1.0 + lam * r12), 1.0 + lam * r2b):
            continue
        out[n, 0] = s
        out[n, 1] = f
        out[n, 2] = f
        out[n, 3] = lam
        out[n, 4] = lam
        out[n, 5] = 0.0
        n += 1
    return _OK, len(roots), out[:n], p8


# ---------------------------------------------------------------------------
# H3l1l2
# ---------------------------------------------------------------------------


@njit(cache=True)
def _h3_polymat(Ms, pts):
    C = np.empty((3, 3, 3))
    for k in range(3):
        A, B = _blocks(Ms[k], pts[k, 0], pts[k, 1])
        N, D = _row3(A, B, pts[k, 2], pts[k, 3])
        r1 = pts[k, 0] ** 2 + pts[k, 1] ** 2
        C[k, 0] = r1 * D
        C[k, 1] = D
        C[k, 2] = N
    return C


@njit(cache=True)
def _null3(C):
    """Null vector of a rank-2 3x3 matrix from its best-conditioned row pair."""
    best = np.zeros(3)
    bn = -1.0
    for i in range(3):
        for j in range(i + 1, 3):
            v = np.cross(C[i], C[j])
            nv = np.sqrt(v @ v)
            if nv > bn:
                bn = nv
                best = v
    return best, bn


@njit(cache=True)
def _h3_kernel(Ms, pts, lam_lo, lam_hi, s_lo, s_hi):
    C = _h3_polymat(Ms, pts)
    det = _det3(C)
    out = np.empty((6, 6))
    scale = 1.0
    for k in range(3):
        scale *= _maxabs(C[k, 0]) + _maxabs(C[k, 1]) + _maxabs(C[k, 2])
    if _maxabs(det) <= DEGENERATE_RTOL * scale:
        return _DEGENERATE, 0, out[:0], det
    deg = _degree(det, TRIM_RTOL)
    if deg < 1:
        return _DEGENERATE, 0, out[:0], det
    pt = det[: deg + 1].copy()
    bound = _cauchy_bound(pt, deg)
    roots = _sturm_kernel(pt, max(s_lo, -bound), min(s_hi, bound), 1e-12)
    Cs = np.empty((3, 3))
    r1 = np.empty(3)
    r2 = np.empty(3)
    for k in range(3):
        r1[k] = pts[k, 0] ** 2 + pts[k, 1] ** 2
        r2[k] = pts[k, 2] ** 2 + pts[k, 3] ** 2
    n = 0
    for s in roots:
        for i in range(3):
            for j in range(3):
                Cs[i, j] = _polyval(C[i, j], s)
        v, nv = _null3(Cs)
        if nv == 0.0 or v[2] == 0.0 or v[1] == 0.0:
            continue
        f1 = v[1] / v[2]
        lam1 = v[0] / v[1]
        if not (f1 > 0.0) or not (lam_lo <= lam1 <= lam_hi):
            continue
        # null vector must annihilate the row left out of the cross product
        res = np.abs(Cs @ v)
        rown = np.sqrt(np.sum(Cs * Cs, axis=1)) * np.sqrt(v @ v)
        bad = False
        for i in range(3):
            if rown[i] > 0.0 and res[i] > 1e-6 * rown[i]:
                bad = True
        if bad:
            continue
        # (w, lambda2) from one first/second-row equation of c1 and c2
        L = np.empty((2, 2))
        rhs = np.empty(2)
        for k in range(2):
            A, B = _blocks(Ms[k], pts[k, 0], pts[k, 1])
            q = _q_at(A, B, s, f1 * (1.0 + lam1 * r1[k]))
            x2, y2 = pts[k, 2], pts[k, 3]
            if abs(y2) >= abs(x2):
                L[k, 0] = y2 * q[2]
                L[k, 1] = -r2[k] * q[1]
                rhs[k] = q[1]
            else:
                L[k, 0] = x2 * q[2]
                L[k, 1] = -r2[k] * q[0]
                rhs[k] = q[0]
        dl = L[0, 0] * L[1, 1] - L[0, 1] * L[1, 0]
        lscale = (abs(L[0, 0]) + abs(L[0, 1])) * (abs(L[1, 0]) + abs(L[1, 1]))
        if abs(dl) <= 1e-14 * lscale:
            continue
        w = (rhs[0] * L[1, 1] - L[0, 1] * rhs[1]) / dl
        lam2 = (L[0, 0] * rhs[1] - rhs[0] * L[1, 0]) / dl
        if not (w > 0.0) or not (lam_lo <= lam2 <= lam_hi):
            continue
        ok = True
        for k in range(3):
            A, B = _blocks(Ms[k], pts[k, 0], pts[k, 1])
            if not _front(A, B, s, f1 * (1.0 + lam1 * r1[k]), 1.0 + lam2 * r2[k]):
                ok = False
        if not ok:
            continue
        out[n, 0] = s
        out[n, 1] = f1
        out[n, 2] = 1.0 / w
        out[n, 3] = lam1
        out[n, 4] = lam2
        out[n, 5] = 0.0
        n += 1
    return _OK, len(roots), out[:n], det


# ---------------------------------------------------------------------------
# aligned special cases (R1 = R2 = I)
# ---------------------------------------------------------------------------
#
# With identity priors the rotated ray is (c x1 + sn F, y1, -sn x1 + c F) up to
# the factor 1 + s^2 (c = cos, sn = sin of the yaw).  Every problem becomes
# linear in c and products like sn*F, so the only nonlinear step is the
# quadratic (1 + c) s^2 + (c - 1) = 0.


@njit(cache=True)
def _aligned_cos(solver, pts):
    """Cosine of the yaw plus the linear unknowns; status, c, U, V, a."""
    if solver == 0:
        x1, y1, x2, y2 = pts[0, 0], pts[0, 1], pts[0, 2], pts[0, 3]
        num = x1 * y2 * y2 + x2 * y1 * y1
        den = y1 * y2 * (x1 + x2)
        if abs(den) <= 1e-12 * (abs(num) + 1e-300) or den == 0.0:
            return _DEGENERATE, 0.0, 0.0, 0.0
        return _OK, num / den, 0.0, 0.0
    for k in range(pts.shape[0]):
        if abs(pts[k, 3]) <= 1e-12:
            return _DEGENERATE, 0.0, 0.0, 0.0
    if solver == 1:
        # y2 x1 c + y2 a = x2 y1 per correspondence, a = sn * f1
        m00 = pts[0, 3] * pts[0, 0]
        m01 = pts[0, 3]
        m10 = pts[1, 3] * pts[1, 0]
        m11 = pts[1, 3]
        b0 = pts[0, 2] * pts[0, 1]
        b1 = pts[1, 2] * pts[1, 1]
        det = m00 * m11 - m01 * m10
        if abs(det) <= 1e-12 * (abs(m00 * m11) + abs(m01 * m10)):
            return _DEGENERATE, 0.0, 0.0, 0.0
        c = (b0 * m11 - m01 * b1) / det
        a = (m00 * b1 - b0 * m10) / det
        return _OK, c, a, 0.0
    L = np.empty((3, 3))
    rhs = np.empty(3)
    for k in range(2):
        L[k, 0] = 1.0
        L[k, 1] = pts[k, 0] ** 2 + pts[k, 1] ** 2
        L[k, 2] = pts[k, 0]
        rhs[k] = pts[k, 2] * pts[k, 1] / pts[k, 3]
    if solver == 2:
        x1, y1, x2, y2 = pts[0, 0], pts[0, 1], pts[0, 2], pts[0, 3]
        L[2, 0] = y1
        L[2, 1] = y1 * (x2 * x2 + y2 * y2)
        L[2, 2] = -y2 * rhs[0]
        rhs[2] = -y2 * x1
    else:
        L[2, 0] = 1.0
        L[2, 1] = pts[2, 0] ** 2 + pts[2, 1] ** 2
        L[2, 2] = pts[2, 0]
        rhs[2] = pts[2, 2] * pts[2, 1] / pts[2, 3]
    sv = np.linalg.svd(L)[1]
    if sv[2] <= 1e-12 * sv[0]:
        return _DEGENERATE, 0.0, 0.0, 0.0
    sol = np.linalg.solve(L, rhs)
    # sol = (U, V, c) with U = sn*f1, V = sn*f1*lambda1
    return _OK, sol[2], sol[0], sol[1]


@njit(cache=True)
def _aligned_kernel(solver, pts, lam_lo, lam_hi):
    status, c, U, V = _aligned_cos(solver, pts)
    if abs(c - 1.0) <= 1e-12:
        c = 1.0  # zero yaw: keep the double root at s = 0 instead of losing it to rounding
    out = np.empty((2, 6))
    quad = np.array([c - 1.0, 0.0, 1.0 + c])
    if status != _OK:
        return status, 0, out[:0], quad
    roots = np.empty(2)
    if abs(1.0 + c) <= 1e-14:
        return _OK, 0, out[:0], quad
    nr = _quadratic_roots(c - 1.0, 0.0, 1.0 + c, roots, 0)
    n = 0
    for i in range(nr):
        s = roots[i]
        g = 1.0 + s * s
        sn = 2.0 * s / g
        cs = (1.0 - s * s) / g
        x1, y1, x2, y2 = pts[0, 0], pts[0, 1], pts[0, 2], pts[0, 3]
        lam1 = 0.0
        lam2 = 0.0
        if solver == 0:
            num = x2 * y1 - y2 * x1 * cs
            den = y2 * sn
            if abs(den) <= 1e-12 * abs(y2):
                if abs(num) <= 1e-9 * (abs(x2 * y1) + abs(y2 * x1)):
                    return _DEGENERATE, nr, out[:0], quad
                continue
            f1 = num / den
            f2 = f1
        elif solver == 1:
            if abs(sn) <= 1e-12:
                if abs(U) <= 1e-12:
                    return _DEGENERATE, nr, out[:0], quad
                continue
            f1 = U / sn
            den = y2 * (-sn * x1 + cs * f1)
            if den == 0.0:
                continue
            f2 = den / y1 if y1 != 0.0 else -1.0
        else:
            if abs(sn) <= 1e-12:
                if abs(U) <= 1e-12:
                    return _DEGENERATE, nr, out[:0], quad
                continue
            f1 = U / sn
            if U == 0.0:
                continue
            lam1 = V / U
            if solver == 2:
                lam2 = lam1
                f2 = f1
            else:
                # y2 w (-sn x1 + cs F) - y1 r2 lambda2 = y1, for c1 and c2
                L00 = pts[0, 3] * (-sn * pts[0, 0] + cs * f1 * (1.0 + lam1 * (pts[0, 0] ** 2 + pts[0, 1] ** 2)))
                L10 = pts[1, 3] * (-sn * pts[1, 0] + cs * f1 * (1.0 + lam1 * (pts[1, 0] ** 2 + pts[1, 1] ** 2)))
                L01 = -pts[0, 1] * (pts[0, 2] ** 2 + pts[0, 3] ** 2)
                L11 = -pts[1, 1] * (pts[1, 2] ** 2 + pts[1, 3] ** 2)
                dl = L00 * L11 - L01 * L10
                if abs(dl) <= 1e-14 * (abs(L00 * L11) + abs(L01 * L10)):
                    continue
                w = (pts[0, 1] * L11 - L01 * pts[1, 1]) / dl
                lam2 = (L00 * pts[1, 1] - pts[0, 1] * L10) / dl
                f2 = 1.0 / w if w != 0.0 else -1.0
        if not (f1 > 0.0 and f2 > 0.0):
            continue
        if solver >= 2 and not (lam_lo <= lam1 <= lam_hi and lam_lo <= lam2 <= lam_hi):
            continue
        # cheirality in both views for every sample point
        ok = True
        for k in range(pts.shape[0]):
            r1 = pts[k, 0] ** 2 + pts[k, 1] ** 2
            r2 = pts[k, 2] ** 2 + pts[k, 3] ** 2
            F = f1 * (1.0 + lam1 * r1)
            if F <= 0.0 or 1.0 + lam2 * r2 <= 0.0 or -sn * pts[k, 0] + cs * F <= 0.0:
                ok = False
        if not ok:
            continue
        out[n, 0] = s
        out[n, 1] = f1
        out[n, 2] = f2
        out[n, 3] = lam1
        out[n, 4] = lam2
        out[n, 5] = 0.0
        if solver == 1 and pts.shape[0] > 1:
            w = 1.0 / f2
            r = pts[1, 3] * w * (-sn * pts[1, 0] + cs * f1)
            out[n, 5] = abs(r - pts[1, 1]) / (abs(r) + abs(pts[1, 1]) + 1e-300)
        n += 1
    return _OK, nr, out[:n], quad


# ---------------------------------------------------------------------------
# Python surface
# ---------------------------------------------------------------------------


def _prepare(corrs: Sequence[Correspondence], n: int, with_terms: bool = True):
    if len(corrs) != n:
        raise InvalidInputError(f"expected {n} correspondence(s), got {len(corrs)}")
    S = corrs[0].p1.norm_scale
    pts = np.empty((n, 4))
    Ms = np.empty((n, 3, 3, 3))
    seen = {}
    for k, c in enumerate(corrs):
        if c.p1.norm_scale != S or c.p2.norm_scale != S:
            raise InvalidInputError("all points of one problem must share norm_scale")
        pts[k] = (c.p1.u / S, c.p1.v / S, c.p2.u / S, c.p2.v / S)
        if not with_terms:
            continue
        key = (c.g1.rotation.tobytes(), c.g2.rotation.tobytes())
        if key in seen:
            Ms[k] = Ms[seen[key]]
        else:
            seen[key] = k
            Ms[k] = _cayley_terms(
                np.ascontiguousarray(c.g1.rotation, dtype=np.float64),
                np.ascontiguousarray(c.g2.rotation, dtype=np.float64),
            )
    return pts, Ms, S


def _finish(solver_id, status, raw, rows, poly, S, R1, R2, strict_tol=None) -> SolverCandidateSet:
    if status == _DEGENERATE:
        raise DegenerateError(f"{solver_id.value}: degenerate sample")
    if status == _NOT_DIVISIBLE:
        raise NotDivisibleError(f"{solver_id.value}: elimination polynomial lacks the 1+s^2 factor")
    assert raw <= MAX_RAW_ROOTS[solver_id], (solver_id, raw)
    if strict_tol is not None:
        rows = rows[rows[:, 5] <= strict_tol]
    if len(rows) > 1 and np.any(rows[:, 5] != 0.0):
        rows = rows[np.argsort(rows[:, 5], kind="stable")]
    cands = [
        StitchModel(float(r[0]), float(r[1] * S), float(r[2] * S), float(r[3]), float(r[4]), R1, R2, S)
        for r in rows
    ]
    assert len(cands) <= MAX_CANDIDATES[solver_id], (solver_id, len(cands))
    return SolverCandidateSet(solver_id, cands, int(raw), poly, [float(r[5]) for r in rows])


def _check_radii(pts, solver_id):
    if all(x * x + y * y <= 1e-12 for x, y in pts[:, :2]):
        raise InvalidInputError(
            f"{solver_id.value}: first-image points at the distortion centre carry no distortion information"
        )


_ALIGNED_INDEX = {
    SolverId.H1f_aligned: 0,
    SolverId.H2f1f2_aligned: 1,
    SolverId.H2lambda_aligned: 2,
    SolverId.H3l1l2_aligned: 3,
}


def solve_arrays(
    solver_id: SolverId,
    pts: np.ndarray,
    Ms: np.ndarray | None,
    S: float,
    R1: np.ndarray,
    R2: np.ndarray,
    lambda_window: tuple[float, float] = LAMBDA_WINDOW,
    fourth_eq_tol: float | None = None,
) -> SolverCandidateSet:
    """Array-level entry point shared by the public solvers and RANSAC.

    ``pts`` is ``(n, 4)`` normalized ``[x1, y1, x2, y2]``; ``Ms`` holds the
    per-correspondence Cayley terms (ignored by the aligned solvers).
    """
    sid = solver_id
    lo, hi = lambda_window
    if sid.models_distortion:
        _check_radii(pts, sid)
    if sid.aligned:
        status, raw, rows, poly = _aligned_kernel(_ALIGNED_INDEX[sid], pts, lo, hi)
    elif sid is SolverId.H1f:
        status, raw, rows, poly = _h1f_kernel(Ms[0], pts)
    elif sid is SolverId.H2f1f2:
        status, raw, rows, poly = _h2f1f2_kernel(Ms, pts)
    elif sid is SolverId.H2lambda:
        status, raw, rows, poly = _h2lambda_kernel(Ms, pts, lo, hi, *S_BRACKET)
    elif sid is SolverId.H3l1l2:
        status, raw, rows, poly = _h3_kernel(Ms, pts, lo, hi, *S_BRACKET)
    else:
        raise InvalidInputError(f"{sid.value} is not a gravity-prior solver")
    return _finish(sid, status, raw, rows, poly, S, R1, R2, fourth_eq_tol)


def _run(sid: SolverId, corrs, **kwargs) -> SolverCandidateSet:
    corrs = list(corrs)
    pts, Ms, S = _prepare(corrs, sid.sample_size, with_terms=not sid.aligned)
    if sid.aligned:
        for c in corrs:
            if not (c.g1.is_identity() and c.g2.is_identity()):
                raise InvalidInputError(f"{sid.value} requires identity gravity priors")
    return solve_arrays(sid, pts, Ms, S, corrs[0].g1.rotation, corrs[0].g2.rotation, **kwargs)


def solve_h1f(c: Correspondence) -> SolverCandidateSet:
    """Common unknown focal length from one correspondence (up to 4 solutions)."""
    return _run(SolverId.H1f, [c])


def solve_h2f1f2(c1: Correspondence, c2: Correspondence, fourth_eq_tol: float | None = None) -> SolverCandidateSet:
    """Different focal lengths from two correspondences.

    Candidates are ranked by the relative residual of the fourth (unused)
    equation; with ``fourth_eq_tol`` set (noise-free use), candidates above it
    are dropped.
    """
    return _run(SolverId.H2f1f2, [c1, c2], fourth_eq_tol=fourth_eq_tol)


def solve_h2lambda(
    c1: Correspondence, c2: Correspondence, lambda_window: tuple[float, float] = LAMBDA_WINDOW
) -> SolverCandidateSet:
    """Common focal length and distortion from two correspondences (degree-8 elimination)."""
    return _run(SolverId.H2lambda, [c1, c2], lambda_window=lambda_window)


def solve_h3l1l2(
    c1: Correspondence,
    c2: Correspondence,
    c3: Correspondence,
    lambda_window: tuple[float, float] = LAMBDA_WINDOW,
) -> SolverCandidateSet:
    """Different focal lengths and distortions from three correspondences."""
    return _run(SolverId.H3l1l2, [c1, c2, c3], lambda_window=lambda_window)


def _as_aligned(solver_id) -> SolverId:
    sid = SolverId(solver_id)
    if sid is SolverId.H4dlt:
        raise InvalidInputError("H4dlt has no aligned variant")
    if not sid.aligned:
        sid = SolverId(sid.value + "_aligned")
    return sid


def aligned_quadratic(solver_id, corrs: Sequence[Correspondence]) -> np.ndarray:
    """The quadratic in ``s`` solved by an aligned special case (ascending)."""
    sid = _as_aligned(solver_id)
    pts, _, _ = _prepare(list(corrs), sid.sample_size, with_terms=False)
    status, c, _, _ = _aligned_cos(_ALIGNED_INDEX[sid], pts)
    if status != _OK:
        raise DegenerateError(f"{sid.value}: degenerate sample")
    if abs(c - 1.0) <= 1e-12:
        c = 1.0
    return np.array([c - 1.0, 0.0, 1.0 + c])


def solve_aligned(solver_id, corrs: Sequence[Correspondence], **kwargs) -> SolverCandidateSet:
    """Special case with both gravity priors equal to the identity."""
    return _run(_as_aligned(solver_id), corrs, **kwargs)


# ---------------------------------------------------------------------------
# normalized DLT baseline
# ---------------------------------------------------------------------------


def _hartley_transform(xy: np.ndarray) -> np.ndarray:
    centroid = xy.mean(axis=0)
    d = np.sqrt(((xy - centroid) ** 2).sum(axis=1)).mean()
    if d == 0.0:
        raise DegenerateError("all points coincide")
    k = math.sqrt(2.0) / d
    return np.array([[k, 0.0, -k * centroid[0]], [0.0, k, -k * centroid[1]], [0.0, 0.0, 1.0]])


def _collinear_triples(xy: np.ndarray, rtol: float = 1e-9) -> bool:
    n = len(xy)
    h = np.column_stack([xy, np.ones(n)])
    spread = np.ptp(xy, axis=0).max() or 1.0
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                area = abs(np.linalg.det(h[[i, j, k]]))
                if area <= rtol * spread * spread:
                    return True
    return False


def dlt_homography(pts1: np.ndarray, pts2: np.ndarray) -> np.ndarray:
    """Hartley-normalized DLT on ``(n, 2)`` undistorted pixel arrays, n >= 4."""
    pts1 = np.asarray(pts1, dtype=float)
    pts2 = np.asarray(pts2, dtype=float)
    n = len(pts1)
    if n < 4:
        raise InvalidInputError("DLT needs at least 4 correspondences")
    if n == 4 and (_collinear_triples(pts1) or _collinear_triples(pts2)):
        raise DegenerateError("three of the four points are collinear")
    T1 = _hartley_transform(pts1)
    T2 = _hartley_transform(pts2)
    a = pts1 @ T1[:2, :2].T + T1[:2, 2]
    b = pts2 @ T2[:2, :2].T + T2[:2, 2]
    A = np.zeros((2 * n, 9))
    ones = np.ones(n)
    A[0::2, 0:3] = np.column_stack([a, ones])
    A[0::2, 6:9] = -b[:, :1] * np.column_stack([a, ones])
    A[1::2, 3:6] = np.column_stack([a, ones])
    A[1::2, 6:9] = -b[:, 1:2] * np.column_stack([a, ones])
    _, sv, Vt = np.linalg.svd(A)
    if sv[7] <= 1e-10 * sv[0]:
        raise DegenerateError("DLT design matrix is rank deficient")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.solve(T2, Hn @ T1)
    return H / scale_divisor(H)


def solve_h4dlt(corrs: Sequence[Correspondence], lambda1: float = 0.0, lambda2: float = 0.0) -> HomographyModel:
    """Normalized 4+ point DLT on (pre-undistorted) correspondences."""
    corrs = list(corrs)
    if len(corrs) < 4:
        raise InvalidInputError("H4 needs at least 4 correspondences")
    S = corrs[0].p1.norm_scale
    pts1 = np.array([[c.p1.u, c.p1.v] for c in corrs], dtype=float)
    pts2 = np.array([[c.p2.u, c.p2.v] for c in corrs], dtype=float)
    if lambda1 or lambda2:
        from .geometry import undistort_points

        q1 = undistort_points(pts1 / S, lambda1)
        q2 = undistort_points(pts2 / S, lambda2)
        pts1 = q1[:, :2] / q1[:, 2:] * S
        pts2 = q2[:, :2] / q2[:, 2:] * S
    return HomographyModel(dlt_homography(pts1, pts2), lambda1, lambda2, S)


# ---------------------------------------------------------------------------
# dispatch and diagnostics
# ---------------------------------------------------------------------------


def solve(solver_id, corrs: Sequence[Correspondence], **kwargs) -> SolverCandidateSet:
    """Run any minimal solver on a list of correspondences of the right size."""
    sid = SolverId(solver_id)
    corrs = list(corrs)
    if sid is SolverId.H4dlt:
        model = solve_h4dlt(corrs)
        return SolverCandidateSet(sid, [model], 1)
    return _run(sid, corrs, **kwargs)


def elimination_polynomial(solver_id, corrs: Sequence[Correspondence]) -> np.ndarray:
    """The univariate polynomial in ``s`` a general solver reduces to.

    For H1f this is the sextic before removing the ``1 + s^2`` factor.
    """
    sid = SolverId(solver_id)
    corrs = list(corrs)
    pts, Ms, _ = _prepare(corrs, sid.sample_size)
    if sid is SolverId.H1f:
        return _h1f_poly(Ms[0], *pts[0])[0]
    if sid is SolverId.H2f1f2:
        return _det2(_h2f1f2_polymat(Ms, pts))
    if sid is SolverId.H2lambda:
        return _h2lambda_parts(Ms, pts)[0]
    if sid is SolverId.H3l1l2:
        return _det3(_h3_polymat(Ms, pts))
    raise InvalidInputError(f"{sid.value} has no elimination polynomial")


def coefficient_matrix(solver_id, corrs: Sequence[Correspondence]) -> np.ndarray:
    """Hidden-variable matrix C(s) of H2f1f2 (2x2) or H3l1l2 (3x3)."""
    sid = SolverId(solver_id)
    pts, Ms, _ = _prepare(list(corrs), sid.sample_size)
    if sid is SolverId.H2f1f2:
        return _h2f1f2_polymat(Ms, pts)
    if sid is SolverId.H3l1l2:
        return _h3_polymat(Ms, pts)
    raise InvalidInputError(f"{sid.value} has no hidden-variable matrix")
