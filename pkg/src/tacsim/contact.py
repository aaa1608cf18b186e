"""Contact detection between the gel surface and scripted rigid shells.

Vertex ids live in one combined index space: deformable vertices first,
then every rigid vertex shifted by an offset. Each pair is described by
four vertex ids and four weights ``w`` such that the contact's relative
position is ``sum_j w_j x_j``; the distance gradient with respect to
vertex ``j`` is then ``w_j n`` for the unit contact normal ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import BarrierParams, EnergyReport, FeasibilityError, barrier_term
from .primitives import ee_geometry, pt_geometry

PT, EE = 0, 1


@dataclass
class Candidates:
    """Broad-phase output: point-triangle and edge-edge id quadruples."""

    pt: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    ee: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    radius: float = 0.0

    def __len__(self):
        return len(self.pt) + len(self.ee)


@dataclass
class ContactSet:
    """Active contact pairs (``d < dhat``) with lagged friction anchors."""

    kind: np.ndarray
    verts: np.ndarray
    d: np.ndarray
    weights: np.ndarray
    normal: np.ndarray
    dhat: float
    lambda_n: np.ndarray = None
    T: np.ndarray = None

    def __len__(self):
        return len(self.kind)

    @classmethod
    def empty(cls, dhat: float) -> "ContactSet":
        z = np.zeros(0)
        return cls(
            np.zeros(0, dtype=np.int8), np.zeros((0, 4), dtype=np.int64), z, np.zeros((0, 4)),
            np.zeros((0, 3)), dhat, z.copy(), np.zeros((0, 3, 2)),
        )

    def min_distance(self) -> float:
        return float(self.d.min()) if len(self.d) else np.inf


# ---------------------------------------------------------------------------
# broad phase


def _aabb(x, prims):
    p = x[prims]
    return p.min(axis=1), p.max(axis=1)


def _overlap_pairs(lo_a, hi_a, lo_b, hi_b, pad, chunk=4096):
    """All (i, j) with box a_i (grown by ``pad``) overlapping box b_j."""
    out_i, out_j = [], []
    for s in range(0, len(lo_a), chunk):
        la = lo_a[s : s + chunk, None, :] - pad
        ha = hi_a[s : s + chunk, None, :] + pad
        hit = np.all((la <= hi_b[None]) & (ha >= lo_b[None]), axis=2)
        i, j = np.nonzero(hit)
        out_i.append(i + s)
        out_j.append(j)
    if not out_i:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(out_i), np.concatenate(out_j)


def broad_phase(a, xa, b, xb, radius: float, offset_b: int, self_contact: bool = False) -> Candidates:
    """Superset of primitive pairs closer than ``radius``.

    ``a`` is the deformable surface (ids index ``xa``), ``b`` a rigid shell
    whose ids are shifted by ``offset_b`` in the combined index space.
    Pairs are culled by axis-aligned box overlap after a whole-body box
    prefilter.
    """
    xa = np.asarray(xa, float)
    xb = np.asarray(xb, float)
    lo_b_all, hi_b_all = xb.min(axis=0) - radius, xb.max(axis=0) + radius

    def near_b(lo, hi):
        return np.all((lo <= hi_b_all) & (hi >= lo_b_all), axis=1)

    pt, ee = [], []
    # deformable points vs rigid triangles
    nodes = a.nodes[near_b(xa[a.nodes], xa[a.nodes])]
    if len(nodes) and len(b.triangles):
        lo, hi = _aabb(xb, b.triangles)
        i, j = _overlap_pairs(xa[nodes], xa[nodes], lo, hi, radius)
        pt.append(np.column_stack([nodes[i], b.triangles[j] + offset_b]))
    # rigid points vs deformable triangles
    lo_t, hi_t = _aabb(xa, a.triangles)
    tri_keep = np.flatnonzero(near_b(lo_t, hi_t))
    if len(tri_keep) and len(xb):
        i, j = _overlap_pairs(xb, xb, lo_t[tri_keep], hi_t[tri_keep], radius)
        pt.append(np.column_stack([i + offset_b, a.triangles[tri_keep[j]]]))
    # edge-edge
    lo_e, hi_e = _aabb(xa, a.edges)
    e_keep = np.flatnonzero(near_b(lo_e, hi_e))
    if len(e_keep) and len(b.edges):
        lo_r, hi_r = _aabb(xb, b.edges)
        i, j = _overlap_pairs(lo_e[e_keep], hi_e[e_keep], lo_r, hi_r, radius)
        ee.append(np.column_stack([a.edges[e_keep[i]], b.edges[j] + offset_b]))
    if self_contact:
        c = self_candidates(a, xa, radius)
        pt.append(c.pt)
        ee.append(c.ee)
    return Candidates(_stack(pt), _stack(ee), radius)


def self_candidates(a, xa, radius: float) -> Candidates:
    """Deformable self-contact pairs excluding primitives that share a vertex."""
    lo_t, hi_t = _aabb(xa, a.triangles)
    i, j = _overlap_pairs(xa[a.nodes], xa[a.nodes], lo_t, hi_t, radius)
    p = a.nodes[i]
    tri = a.triangles[j]
    ok = np.all(tri != p[:, None], axis=1)
    pt = np.column_stack([p[ok], tri[ok]])
    lo_e, hi_e = _aabb(xa, a.edges)
    i, j = _overlap_pairs(lo_e, hi_e, lo_e, hi_e, radius)
    keep = i < j
    ea, eb = a.edges[i[keep]], a.edges[j[keep]]
    disjoint = np.all(ea[:, :, None] != eb[:, None, :], axis=(1, 2))
    ee = np.column_stack([ea[disjoint], eb[disjoint]])
    return Candidates(pt.astype(np.int64), ee.astype(np.int64), radius)


def _stack(parts):
    parts = [p for p in parts if len(p)]
    if not parts:
        return np.zeros((0, 4), dtype=np.int64)
    out = np.vstack(parts).astype(np.int64)
    order = np.lexsort(out.T[::-1])
    return out[order]


# ---------------------------------------------------------------------------
# narrow phase


def pair_geometry(pt, ee, X):
    """Distances, weights and unit normals for PT and EE id quadruples.

    Returns arrays concatenated PT first, then EE.
    """
    X = np.ascontiguousarray(X, dtype=float)
    d_parts, w_parts, n_parts = [], [], []
    if len(pt):
        d, bary, nrm = pt_geometry(np.ascontiguousarray(pt, dtype=np.int64), X)
        d_parts.append(d)
        w_parts.append(np.column_stack([np.ones(len(pt)), -bary]))
        n_parts.append(nrm)
    if len(ee):
        d, st, nrm = ee_geometry(np.ascontiguousarray(ee, dtype=np.int64), X)
        s, t = st[:, 0], st[:, 1]
        d_parts.append(d)
        w_parts.append(np.column_stack([1 - s, s, -(1 - t), -t]))
        n_parts.append(nrm)
    if not d_parts:
        return np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3))
    return np.concatenate(d_parts), np.vstack(w_parts), np.vstack(n_parts)


def _closest_per_point(pt, d):
    """Index of the minimal-distance triangle for each point (ties: lowest id)."""
    if len(pt) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((pt[:, 3], pt[:, 2], pt[:, 1], d, pt[:, 0]))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pt[order[1:], 0] != pt[order[:-1], 0]
    return np.sort(order[first])


@dataclass
class PairEval:
    """Fresh geometry for the reduced candidate list at one configuration."""

    verts: np.ndarray
    kind: np.ndarray
    d: np.ndarray
    weights: np.ndarray
    normal: np.ndarray


def evaluate_pairs(cands: Candidates, X) -> PairEval:
    """Distances of all candidates, keeping one triangle per PT point."""
    d_pt, w_pt, n_pt = pair_geometry(cands.pt, np.zeros((0, 4), dtype=np.int64), X)
    keep = _closest_per_point(cands.pt, d_pt)
    d_ee, w_ee, n_ee = pair_geometry(np.zeros((0, 4), dtype=np.int64), cands.ee, X)
    return PairEval(
        np.vstack([cands.pt[keep], cands.ee]).astype(np.int64),
        np.concatenate([np.full(len(keep), PT, np.int8), np.full(len(cands.ee), EE, np.int8)]),
        np.concatenate([d_pt[keep], d_ee]),
        np.vstack([w_pt[keep], w_ee]),
        np.vstack([n_pt[keep], n_ee]),
    )


def narrow_phase(cands: Candidates, X, dhat: float) -> ContactSet:
    """Exact distances for candidates; pairs closer than ``dhat`` survive."""
    ev = evaluate_pairs(cands, X)
    if len(ev.d) and ev.d.min() <= 0:
        k = int(np.argmin(ev.d))
        raise FeasibilityError(f"pair {ev.verts[k].tolist()} has distance {ev.d[k]:.3e}")
    act = ev.d < dhat
    return ContactSet(ev.kind[act], ev.verts[act], ev.d[act], ev.weights[act], ev.normal[act], dhat)


def tangent_basis(n: np.ndarray) -> np.ndarray:
    """Orthonormal ``(K, 3, 2)`` bases of the planes orthogonal to ``n``."""
    n = np.asarray(n, float).reshape(-1, 3)
    helper = np.where(np.abs(n[:, [0]]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=2)


def build_friction_anchors(cs: ContactSet, x_t=None, bp: BarrierParams = None, mat=None) -> ContactSet:
    """Freeze ``lambda = max(0, -kappa b'(d))`` and tangent bases ``T``."""
    if len(cs) == 0:
        cs.lambda_n = np.zeros(0)
        cs.T = np.zeros((0, 3, 2))
        return cs
    _, b1, _ = barrier_term(cs.d, bp)
    cs.lambda_n = np.maximum(0.0, -np.asarray(b1))
    cs.T = tangent_basis(cs.normal)
    return cs


# ---------------------------------------------------------------------------
# barrier potential over a candidate list


def barrier_energy(ev: PairEval, n_vertices: int, bp: BarrierParams, scale: float = 1.0) -> EnergyReport:
    """``scale * kappa sum b(d_k)`` with a Gauss-Newton (PSD) diagonal.

    The solver passes ``scale = h^2`` so ``kappa`` stays a physical
    stiffness alongside the ``h^2``-weighted elastic term.
    """
    out = EnergyReport.zeros(n_vertices)
    act = ev.d < bp.dhat
    if not act.any():
        return out
    b, b1, b2 = barrier_term(ev.d[act], bp)
    b, b1, b2 = scale * b, scale * b1, scale * b2
    w = ev.weights[act]
    n = ev.normal[act]
    verts = ev.verts[act]
    g = (b1[:, None] * w)[:, :, None] * n[:, None, :]
    dg = (b2[:, None] * w * w)[:, :, None] * (n * n)[:, None, :]
    idx = verts.ravel()
    keep = idx < n_vertices
    for c in range(3):
        out.gradient[:, c] = np.bincount(idx[keep], weights=g.reshape(-1, 3)[keep, c], minlength=n_vertices)
        out.diag_hessian[:, c] = np.bincount(idx[keep], weights=dg.reshape(-1, 3)[keep, c], minlength=n_vertices)
    out.value = float(np.sum(b))
    return out


def barrier_quadform(ev: PairEval, p_full, bp: BarrierParams, scale: float = 1.0) -> float:
    act = ev.d < bp.dhat
    if not act.any():
        return 0.0
    _, _, b2 = barrier_term(ev.d[act], bp)
    dp = np.einsum("kj,kji->ki", ev.weights[act], p_full[ev.verts[act]])
    dn = np.einsum("ki,ki->k", dp, ev.normal[act])
    return scale * float(np.sum(b2 * dn * dn))


def max_safe_step(ev: PairEval, p_full, fraction: float = 0.9) -> float:
    """Largest ``alpha`` that provably keeps every pair separated.

    Distance between two primitives changes by at most the sum of the
    largest vertex displacements on either side, so
    ``alpha * (m_a + m_b) < fraction * d`` cannot close any gap.
    """
    if len(ev.d) == 0:
        return np.inf
    speed = np.linalg.norm(p_full, axis=1)[ev.verts]  # (K, 4)
    pt = ev.kind == PT
    side_a = np.where(pt, speed[:, 0], np.maximum(speed[:, 0], speed[:, 1]))
    side_b = np.where(pt, speed[:, 1:].max(axis=1), np.maximum(speed[:, 2], speed[:, 3]))
    m = side_a + side_b
    moving = m > 0
    if not moving.any():
        return np.inf
    return float(np.min(fraction * ev.d[moving] / m[moving]))
