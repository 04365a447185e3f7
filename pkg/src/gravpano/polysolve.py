"""Univariate polynomial and polynomial-matrix tools.

Polynomials are 1-D float arrays of coefficients in *ascending* order
(``p[k]`` multiplies ``x**k``), the ``numpy.polynomial.polynomial`` convention.
A polynomial matrix is an ``(n, n, k)`` array whose ``[i, j]`` slice is the
coefficient array of entry ``(i, j)``.

The numeric kernels are numba-compiled because the minimal solvers call them
once per RANSAC hypothesis.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .errors import InvalidInputError, NoNullspaceError, NotDivisibleError

TRIM_RTOL = 1e-13
MERGE_TOL = 1e-8
_MAX_BISECT = 200


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _degree(c, rtol):
    """Index of the last coefficient above ``rtol * max|c|`` (-1 for zero)."""
    m = 0.0
    for v in c:
        if abs(v) > m:
            m = abs(v)
    if m == 0.0:
        return -1
    thr = rtol * m
    for k in range(len(c) - 1, -1, -1):
        if abs(c[k]) > thr:
            return k
    return -1


@njit(cache=True)
def _polyval(c, x):
    acc = 0.0
    for k in range(len(c) - 1, -1, -1):
        acc = acc * x + c[k]
    return acc


@njit(cache=True)
def _polyval_d(c, x):
    """Value and derivative by Horner."""
    p = 0.0
    dp = 0.0
    for k in range(len(c) - 1, -1, -1):
        dp = dp * x + p
        p = p * x + c[k]
    return p, dp


@njit(cache=True)
def _polymul(a, b):
    out = np.zeros(len(a) + len(b) - 1)
    for i in range(len(a)):
        ai = a[i]
        if ai != 0.0:
            for j in range(len(b)):
                out[i + j] += ai * b[j]
    return out


@njit(cache=True)
def _polyadd(a, b):
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[: len(a)] += a
    out[: len(b)] += b
    return out


@njit(cache=True)
def _polysub(a, b):
    n = max(len(a), len(b))
    out = np.zeros(n)
    out[: len(a)] += a
    out[: len(b)] -= b
    return out


@njit(cache=True)
def _newton_polish(c, x, iters):
    for _ in range(iters):
        p, dp = _polyval_d(c, x)
        if dp == 0.0:
            break
        step = p / dp
        xn = x - step
        # keep the polished value only if it does not make things worse
        if abs(_polyval(c, xn)) <= abs(p):
            x = xn
        else:
            break
    return x


@njit(cache=True)
def _merge_sorted(roots, n, tol):
    out = np.empty(n)
    m = 0
    for i in range(n):
        if m > 0 and abs(roots[i] - out[m - 1]) <= tol * max(1.0, abs(roots[i])):
            continue
        out[m] = roots[i]
        m += 1
    return out[:m]


@njit(cache=True)
def _quadratic_roots(c0, c1, c2, out, start):
    """Real roots of c2 x^2 + c1 x + c0 (c2 != 0) written into ``out``."""
    disc = c1 * c1 - 4.0 * c2 * c0
    scale = c1 * c1 + abs(4.0 * c2 * c0)
    if disc < 0.0:
        if disc >= -1e-14 * scale:
            disc = 0.0
        else:
            return start
    sq = math.sqrt(disc)
    if sq == 0.0:
        out[start] = -c1 / (2.0 * c2)
        return start + 1
    # stable pairing avoids cancellation in -c1 +- sqrt(disc)
    qq = -0.5 * (c1 + math.copysign(sq, c1))
    out[start] = qq / c2
    out[start + 1] = c0 / qq
    return start + 2


@njit(cache=True)
def _cubic_max_root(b, c, d):
    """Largest real root of the monic cubic x^3 + b x^2 + c x + d."""
    P = c - b * b / 3.0
    Q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d
    disc = 0.25 * Q * Q + P * P * P / 27.0
    if disc > 0.0:
        sd = math.sqrt(disc)
        u = -0.5 * Q + sd
        v = -0.5 * Q - sd
        t = math.copysign(abs(u) ** (1.0 / 3.0), u) + math.copysign(abs(v) ** (1.0 / 3.0), v)
    elif P == 0.0:
        t = 0.0
    else:
        r = math.sqrt(-P / 3.0)
        arg = -0.5 * Q / (r * r * r)
        arg = min(1.0, max(-1.0, arg))
        t = 2.0 * r * math.cos(math.acos(arg) / 3.0)
    x = t - b / 3.0
    for _ in range(3):
        f = ((x + b) * x + c) * x + d
        df = (3.0 * x + 2.0 * b) * x + c
        if df == 0.0:
            break
        x -= f / df
    return x


@njit(cache=True)
def _quartic_kernel(c):
    """Real roots of a polynomial of degree <= 4 (ascending coefficients)."""
    deg = _degree(c, TRIM_RTOL)
    buf = np.empty(4)
    n = 0
    if deg <= 0:
        return buf[:0]
    if deg == 1:
        buf[0] = -c[0] / c[1]
        return buf[:1]
    if deg == 2:
        n = _quadratic_roots(c[0], c[1], c[2], buf, 0)
    elif deg == 3:
        # divide out one real root, then the quadratic
        a2 = c[2] / c[3]
        a1 = c[1] / c[3]
        a0 = c[0] / c[3]
        x = _cubic_max_root(a2, a1, a0)
        cc = c[: deg + 1].copy()
        x = _newton_polish(cc, x, 3)
        buf[0] = x
        # synthetic division of the monic cubic by (t - x)
        q1 = a2 + x
        q0 = a1 + x * q1
        n = _quadratic_roots(q0, q1, 1.0, buf, 1)
    else:
        a = c[3] / c[4]
        b = c[2] / c[4]
        cq = c[1] / c[4]
        d = c[0] / c[4]
        a2 = a * a
        p = b - 3.0 * a2 / 8.0
        q = cq - 0.5 * a * b + a2 * a / 8.0
        r = d - 0.25 * a * cq + a2 * b / 16.0 - 3.0 * a2 * a2 / 256.0
        scale = max(1.0, abs(p), math.sqrt(abs(r)))
        if abs(q) <= 1e-14 * scale * math.sqrt(scale):
            # biquadratic: y^4 + p y^2 + r
            zb = np.empty(2)
            nz = _quadratic_roots(r, p, 1.0, zb, 0)
            for i in range(nz):
                z = zb[i]
                if z > 0.0:
                    sz = math.sqrt(z)
                    buf[n] = sz
                    buf[n + 1] = -sz
                    n += 2
                elif z >= -1e-14 * scale:
                    buf[n] = 0.0
                    n += 1
        else:
            m = _cubic_max_root(p, 0.25 * p * p - r, -0.125 * q * q)
            if m <= 0.0:
                m = 1e-300
            sq = math.sqrt(2.0 * m)
            t = q / (2.0 * sq)
            n = _quadratic_roots(0.5 * p + m + t, -sq, 1.0, buf, 0)
            n = _quadratic_roots(0.5 * p + m - t, sq, 1.0, buf, n)
        for i in range(n):
            buf[i] -= 0.25 * a
    cc = c[: deg + 1].copy()
    for i in range(n):
        buf[i] = _newton_polish(cc, buf[i], 4)
    roots = np.sort(buf[:n])
    return _merge_sorted(roots, n, MERGE_TOL)


@njit(cache=True)
def _sturm_chain(c, deg):
    """Sturm sequence of ``c`` with every member rescaled to unit max-norm."""
    chain = np.zeros((deg + 1, deg + 1))
    degs = np.zeros(deg + 1, np.int64)
    m = 0.0
    for k in range(deg + 1):
        m = max(m, abs(c[k]))
    for k in range(deg + 1):
        chain[0, k] = c[k] / m
    degs[0] = deg
    m = 0.0
    for k in range(1, deg + 1):
        chain[1, k - 1] = k * chain[0, k]
        m = max(m, abs(chain[1, k - 1]))
    for k in range(deg):
        chain[1, k] /= m
    degs[1] = deg - 1
    count = 2
    rem = np.zeros(deg + 1)
    while degs[count - 1] > 0:
        a = chain[count - 2]
        b = chain[count - 1]
        da = degs[count - 2]
        db = degs[count - 1]
        for k in range(deg + 1):
            rem[k] = a[k]
        lb = b[db]
        for k in range(da - db, -1, -1):
            qk = rem[k + db] / lb
            for j in range(db + 1):
                rem[k + j] -= qk * b[j]
        m = 0.0
        for k in range(db):
            m = max(m, abs(rem[k]))
        if m <= 1e-13:
            break
        # the negated remainder continues the chain
        dr = -1
        for k in range(db - 1, -1, -1):
            if abs(rem[k]) > 1e-13 * m:
                dr = k
                break
        for k in range(deg + 1):
            chain[count, k] = -rem[k] / m if k <= dr else 0.0
        degs[count] = dr
        count += 1
        if count > deg:
            break
    return chain[:count], degs[:count]


@njit(cache=True)
def _sign_changes(chain, degs, x):
    changes = 0
    last = 0.0
    for i in range(len(degs)):
        v = 0.0
        for k in range(degs[i], -1, -1):
            v = v * x + chain[i, k]
        if v != 0.0:
            if last != 0.0 and (v > 0.0) != (last > 0.0):
                changes += 1
            last = v
    return changes


@njit(cache=True)
def _refine_simple(c, lo, hi, tol):
    """Safeguarded Newton on a bracket with a sign change."""
    flo = _polyval(c, lo)
    x = 0.5 * (lo + hi)
    for _ in range(100):
        fx, dfx = _polyval_d(c, x)
        if fx == 0.0:
            return x
        if (fx > 0.0) == (flo > 0.0):
            lo = x
            flo = fx
        else:
            hi = x
        xn = x - fx / dfx if dfx != 0.0 else 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if abs(xn - x) < tol or hi - lo < tol:
            return xn
        x = xn
    return x


@njit(cache=True)
def _sturm_kernel(c, lo, hi, tol):
    deg = _degree(c, TRIM_RTOL)
    if deg <= 0:
        return np.empty(0)
    cc = c[: deg + 1].copy()
    chain, degs = _sturm_chain(cc, deg)
    # keep the endpoints off roots so the counts are well defined
    width = hi - lo
    while _polyval(cc, lo) == 0.0:
        lo -= 1e-9 * max(1.0, width)
    while _polyval(cc, hi) == 0.0:
        hi += 1e-9 * max(1.0, width)
    vlo = _sign_changes(chain, degs, lo)
    vhi = _sign_changes(chain, degs, hi)
    stack_lo = np.empty(4 * _MAX_BISECT)
    stack_hi = np.empty(4 * _MAX_BISECT)
    stack_vlo = np.empty(4 * _MAX_BISECT, np.int64)
    stack_vhi = np.empty(4 * _MAX_BISECT, np.int64)
    stack_depth = np.empty(4 * _MAX_BISECT, np.int64)
    roots = np.empty(deg + 4 * _MAX_BISECT)
    nroots = 0
    top = 0
    stack_lo[0] = lo
    stack_hi[0] = hi
    stack_vlo[0] = vlo
    stack_vhi[0] = vhi
    stack_depth[0] = 0
    top = 1
    while top > 0:
        top -= 1
        a = stack_lo[top]
        b = stack_hi[top]
        va = stack_vlo[top]
        vb = stack_vhi[top]
        depth = stack_depth[top]
        k = va - vb
        if k <= 0:
            continue
        fa = _polyval(cc, a)
        fb = _polyval(cc, b)
        if k == 1 and (fa > 0.0) != (fb > 0.0):
            roots[nroots] = _refine_simple(cc, a, b, tol)
            nroots += 1
            continue
        if b - a < tol or depth >= _MAX_BISECT or top + 2 > len(stack_lo):
            roots[nroots] = 0.5 * (a + b)
            nroots += 1
            continue
        mid = 0.5 * (a + b)
        if _polyval(cc, mid) == 0.0:
            roots[nroots] = mid
            nroots += 1
            eps = 0.25 * tol
            vl = _sign_changes(chain, degs, mid - eps)
            vr = _sign_changes(chain, degs, mid + eps)
            left_hi = mid - eps
            right_lo = mid + eps
        else:
            vm = _sign_changes(chain, degs, mid)
            vl = vm
            vr = vm
            left_hi = mid
            right_lo = mid
        stack_lo[top] = a
        stack_hi[top] = left_hi
        stack_vlo[top] = va
        stack_vhi[top] = vl
        stack_depth[top] = depth + 1
        top += 1
        stack_lo[top] = right_lo
        stack_hi[top] = b
        stack_vlo[top] = vr
        stack_vhi[top] = vb
        stack_depth[top] = depth + 1
        top += 1
    out = np.sort(roots[:nroots])
    return _merge_sorted(out, nroots, MERGE_TOL)


@njit(cache=True)
def _cauchy_bound(c, deg):
    lead = abs(c[deg])
    m = 0.0
    for k in range(deg):
        m = max(m, abs(c[k]) / lead)
    return 1.0 + m


@njit(cache=True)
def _det2(M):
    return _polysub(_polymul(M[0, 0], M[1, 1]), _polymul(M[0, 1], M[1, 0]))


@njit(cache=True)
def _det3(M):
    t0 = _polymul(M[0, 0], _polysub(_polymul(M[1, 1], M[2, 2]), _polymul(M[1, 2], M[2, 1])))
    t1 = _polymul(M[0, 1], _polysub(_polymul(M[1, 0], M[2, 2]), _polymul(M[1, 2], M[2, 0])))
    t2 = _polymul(M[0, 2], _polysub(_polymul(M[1, 0], M[2, 1]), _polymul(M[1, 1], M[2, 0])))
    return _polyadd(_polysub(t0, t1), t2)


@njit(cache=True)
def _deflate_kernel(p):
    """Divide by (1 + x^2); returns quotient and max-abs remainder."""
    n = len(p) - 1
    q = np.zeros(max(n - 1, 1))
    if n < 2:
        return q, np.max(np.abs(p))
    # work from the top: p = (x^2 + 1) q + r
    for k in range(n - 2, -1, -1):
        v = p[k + 2]
        if k + 2 <= n - 2:
            v -= q[k + 2]
        q[k] = v
    r1 = p[1] - (q[1] if n - 2 >= 1 else 0.0)
    r0 = p[0] - q[0]
    return q, max(abs(r0), abs(r1))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def as_poly(p) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(p, dtype=float).ravel())


def trim(p, rtol: float = TRIM_RTOL) -> np.ndarray:
    """Drop trailing (highest-degree) coefficients below ``rtol * max|p|``."""
    p = as_poly(p)
    deg = _degree(p, rtol)
    return p[: deg + 1] if deg >= 0 else p[:0]


def degree(p, rtol: float = TRIM_RTOL) -> int:
    """Degree after trimming; ``-1`` for the zero polynomial."""
    return int(_degree(as_poly(p), rtol))


def polyval(p, x):
    return np.polynomial.polynomial.polyval(x, as_poly(p))


def polymul(a, b) -> np.ndarray:
    return _polymul(as_poly(a), as_poly(b))


def cauchy_bound(p) -> float:
    p = trim(p)
    if len(p) < 2:
        raise InvalidInputError("Cauchy bound needs degree >= 1")
    return float(_cauchy_bound(p, len(p) - 1))


def _check_nonzero(p: np.ndarray):
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("polynomial coefficients must be finite")
    if _degree(p, TRIM_RTOL) < 0:
        raise InvalidInputError("zero polynomial has no isolated roots")


def solve_quadratic(p) -> list[float]:
    """Distinct real roots of a polynomial of degree <= 2, ascending."""
    p = as_poly(p)
    _check_nonzero(p)
    if degree(p) > 2:
        raise InvalidInputError("solve_quadratic needs degree <= 2")
    return [float(r) for r in _quartic_kernel(p)]


def solve_quartic(p) -> list[float]:
    """Distinct real roots of a polynomial of degree <= 4 in closed form.

    Ferrari's resolvent cubic followed by a Newton polish on the original
    coefficients; clustered roots are merged.
    """
    p = as_poly(p)
    _check_nonzero(p)
    if degree(p) > 4:
        raise InvalidInputError("solve_quartic needs degree <= 4")
    return [float(r) for r in _quartic_kernel(p)]


def sturm_roots(p, bracket: tuple[float, float] | None = None, tol: float = 1e-12) -> list[float]:
    """Distinct real roots inside ``bracket`` isolated with a Sturm sequence.

    The default bracket is the Cauchy bound.  Multiple roots are reported once.
    """
    p = as_poly(p)
    _check_nonzero(p)
    deg = degree(p)
    if deg < 1:
        return []
    pt = p[: deg + 1]
    bound = float(_cauchy_bound(pt, deg))
    if bracket is None:
        lo, hi = -bound, bound
    else:
        lo, hi = (float(v) for v in bracket)
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
            raise InvalidInputError(f"invalid bracket {bracket!r}")
        lo, hi = max(lo, -bound), min(hi, bound)
        if lo >= hi:
            return []
    return [float(r) for r in _sturm_kernel(pt, lo, hi, tol)]


def polymat_eval(M, s: float) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    powers = s ** np.arange(M.shape[2])
    return M @ powers


def polymat_det(M) -> np.ndarray:
    """Exact cofactor determinant of a 2x2 or 3x3 polynomial matrix."""
    M = np.ascontiguousarray(np.asarray(M, dtype=float))
    if M.ndim != 3 or M.shape[0] != M.shape[1] or M.shape[0] not in (2, 3):
        raise InvalidInputError("polynomial matrix must have shape (n, n, k) with n in {2, 3}")
    return _det2(M) if M.shape[0] == 2 else _det3(M)


def deflate_one_plus_s2(p, rtol: float = 1e-8) -> np.ndarray:
    """Quotient of ``p`` by ``1 + s**2``; raises when the remainder is not negligible."""
    p = trim(p)
    if len(p) < 3:
        raise NotDivisibleError("degree < 2 polynomial is not divisible by 1 + s^2")
    q, rem = _deflate_kernel(p)
    if rem > rtol * np.max(np.abs(p)):
        raise NotDivisibleError(f"remainder {rem:.3e} exceeds {rtol:g} relative")
    return q


def polymat_nullvector(M, s0: float, rtol: float = 1e-6, return_rank: bool = False):
    """Unit right null vector of ``M(s0)``, last component made positive.

    A numerically zero matrix is rank-0; any unit vector spans its null space
    and the last basis vector is returned (``return_rank`` exposes the rank).
    """
    A = polymat_eval(M, s0)
    _, sv, Vt = np.linalg.svd(A)
    n = A.shape[1]
    if sv[0] == 0.0 or sv[0] < 1e-300:
        v = np.zeros(n)
        v[-1] = 1.0
        return (v, 0) if return_rank else v
    if sv[-1] >= rtol * sv[0]:
        raise NoNullspaceError(
            f"matrix is numerically full rank at s={s0} (sigma_min/sigma_max={sv[-1] / sv[0]:.2e})"
        )
    v = Vt[-1].copy()
    if abs(v[-1]) > 1e-12 and v[-1] < 0.0:
        v = -v
    rank = int(np.sum(sv >= rtol * sv[0]))
    return (v, rank) if return_rank else v
