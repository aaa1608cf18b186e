"""Vectorized closest-point queries for point-triangle and edge-edge pairs.

All routines take stacked ``(N, 3)`` arrays and return per-pair results so
that the contact code and the SDF builder can share one implementation.
"""

from __future__ import annotations

import numba as nb
import numpy as np

# region codes returned by ``closest_point_triangle``
FACE, EDGE, VERTEX = 0, 1, 2


def _dot(a, b):
    return np.einsum("ij,ij->i", a, b)


def closest_point_triangle(p, a, b, c):
    """Closest point on triangles ``abc`` to points ``p``.

    Returns ``(q, bary, region)`` where ``q = bary[:,0]*a + bary[:,1]*b +
    bary[:,2]*c`` and ``region`` is one of FACE/EDGE/VERTEX. Follows the
    Voronoi-region walk over vertex, edge and face regions.
    """
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    n = p.shape[0]
    bary = np.zeros((n, 3))
    region = np.full(n, FACE, dtype=np.int8)
    done = np.zeros(n, dtype=bool)

    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    m = (d1 <= 0) & (d2 <= 0)
    bary[m] = (1.0, 0.0, 0.0)
    region[m] = VERTEX
    done |= m

    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    m = ~done & (d3 >= 0) & (d4 <= d3)
    bary[m] = (0.0, 1.0, 0.0)
    region[m] = VERTEX
    done |= m

    vc = d1 * d4 - d3 * d2
    m = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
    bary[m, 0] = 1.0 - v[m]
    bary[m, 1] = v[m]
    region[m] = EDGE
    done |= m

    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    m = ~done & (d6 >= 0) & (d5 <= d6)
    bary[m] = (0.0, 0.0, 1.0)
    region[m] = VERTEX
    done |= m

    vb = d5 * d2 - d1 * d6
    m = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = d2 / (d2 - d6)
    bary[m, 0] = 1.0 - w[m]
    bary[m, 2] = w[m]
    region[m] = EDGE
    done |= m

    va = d3 * d6 - d5 * d4
    m = ~done & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    bary[m, 1] = 1.0 - w[m]
    bary[m, 2] = w[m]
    region[m] = EDGE
    done |= m

    m = ~done
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
    bary[m, 0] = 1.0 - v[m] - w[m]
    bary[m, 1] = v[m]
    bary[m, 2] = w[m]

    q = bary[:, 0:1] * a + bary[:, 1:2] * b + bary[:, 2:3] * c
    return q, bary, region


def closest_points_segments(p0, p1, q0, q1, eps=1e-30):
    """Closest points between segments ``p0p1`` and ``q0q1``.

    Returns ``(s, t)`` parameters such that the closest points are
    ``p0 + s (p1 - p0)`` and ``q0 + t (q1 - q0)``. Parallel segments pick
    ``s = 0`` and clamp ``t``.
    """
    d1 = np.asarray(p1, float) - p0
    d2 = np.asarray(q1, float) - q0
    r = np.asarray(p0, float) - q0
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    c = _dot(d1, r)
    b = _dot(d1, d2)
    denom = a * e - b * b

    s = np.zeros_like(a)
    ok = denom > eps * np.maximum(a * e, eps)
    s[ok] = np.clip((b[ok] * f[ok] - c[ok] * e[ok]) / denom[ok], 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(e > eps, (b * s + f) / e, 0.0)
    lo = t < 0.0
    hi = t > 1.0
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_lo = np.where(a > eps, np.clip(-c / a, 0.0, 1.0), 0.0)
        s_hi = np.where(a > eps, np.clip((b - c) / a, 0.0, 1.0), 0.0)
    s = np.where(lo, s_lo, np.where(hi, s_hi, s))
    return s, t


def point_triangle_distance(p, a, b, c):
    q, _, _ = closest_point_triangle(p, a, b, c)
    return np.linalg.norm(p - q, axis=1)


def segment_distance(p0, p1, q0, q1):
    s, t = closest_points_segments(p0, p1, q0, q1)
    cp = p0 + s[:, None] * (p1 - p0)
    cq = q0 + t[:, None] * (q1 - q0)
    return np.linalg.norm(cp - cq, axis=1)


# ---------------------------------------------------------------------------
# compiled per-pair kernels over index quadruples, same walk as above


@nb.njit(cache=True)
def _d3(u, v):
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


@nb.njit(cache=True, error_model="numpy")
def pt_geometry(pt, X):
    """Distance, barycentrics and unit normal for point-triangle rows ``(p, a, b, c)``."""
    n = len(pt)
    d = np.empty(n)
    bary = np.empty((n, 3))
    nrm = np.empty((n, 3))
    for k in range(n):
        p, a, b, c = X[pt[k, 0]], X[pt[k, 1]], X[pt[k, 2]], X[pt[k, 3]]
        ab, ac = b - a, c - a
        d1, d2 = _d3(ab, p - a), _d3(ac, p - a)
        d3, d4 = _d3(ab, p - b), _d3(ac, p - b)
        d5, d6 = _d3(ab, p - c), _d3(ac, p - c)
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d1 <= 0 and d2 <= 0:
            u, v, w = 1.0, 0.0, 0.0
        elif d3 >= 0 and d4 <= d3:
            u, v, w = 0.0, 1.0, 0.0
        elif vc <= 0 and d1 >= 0 and d3 <= 0:
            v = d1 / (d1 - d3)
            u, w = 1.0 - v, 0.0
        elif d6 >= 0 and d5 <= d6:
            u, v, w = 0.0, 0.0, 1.0
        elif vb <= 0 and d2 >= 0 and d6 <= 0:
            w = d2 / (d2 - d6)
            u, v = 1.0 - w, 0.0
        elif va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            u, v = 0.0, 1.0 - w
        else:
            den = 1.0 / (va + vb + vc)
            v, w = vb * den, vc * den
            u = 1.0 - v - w
        diff = p - (u * a + v * b + w * c)
        dist = np.sqrt(_d3(diff, diff))
        d[k] = dist
        bary[k, 0], bary[k, 1], bary[k, 2] = u, v, w
        nrm[k] = diff / (dist if dist > 0 else 1.0)
    return d, bary, nrm


@nb.njit(cache=True, error_model="numpy")
def ee_geometry(ee, X, eps=1e-30):
    """Distance, segment parameters and unit normal for edge-edge rows ``(p0, p1, q0, q1)``."""
    n = len(ee)
    d = np.empty(n)
    st = np.empty((n, 2))
    nrm = np.empty((n, 3))
    for k in range(n):
        p0, p1, q0, q1 = X[ee[k, 0]], X[ee[k, 1]], X[ee[k, 2]], X[ee[k, 3]]
        e1, e2, r = p1 - p0, q1 - q0, p0 - q0
        a, e, f, c, b = _d3(e1, e1), _d3(e2, e2), _d3(e2, r), _d3(e1, r), _d3(e1, e2)
        denom = a * e - b * b
        s = 0.0
        if denom > eps * max(a * e, eps):
            s = min(max((b * f - c * e) / denom, 0.0), 1.0)
        t = (b * s + f) / e if e > eps else 0.0
        if t < 0.0:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0) if a > eps else 0.0
        elif t > 1.0:
            t = 1.0
            s = min(max((b - c) / a, 0.0), 1.0) if a > eps else 0.0
        diff = (p0 + s * e1) - (q0 + t * e2)
        dist = np.sqrt(_d3(diff, diff))
        d[k] = dist
        st[k, 0], st[k, 1] = s, t
        nrm[k] = diff / (dist if dist > 0 else 1.0)
    return d, st, nrm
