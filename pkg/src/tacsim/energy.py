"""Incremental-potential energy terms with gradients and Hessian diagonals.

Every term returns an :class:`EnergyReport`. Curvature along a search
direction (``p^T H p``) is provided separately by the ``*_quadform``
helpers, which the solver uses for its exact line step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

# calibration vectors give rho in g/mm^3; this converts to kg/m^3
RHO_TABLE_TO_SI = 1e6


class FeasibilityError(RuntimeError):
    """A contact distance reached zero or below."""


@dataclass(frozen=True)
class Material:
    E: float = 5.0e4
    nu: float = 0.45
    rho: float = 1.2e3
    mu_f: float = 1.0

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"E must be positive, got {self.E}")
        if not 0 <= self.nu < 0.5:
            raise ValueError(f"nu must lie in [0, 0.5), got {self.nu}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.mu_f >= 0:
            raise ValueError(f"mu_f must be non-negative, got {self.mu_f}")

    @property
    def lame_mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lame_lambda(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @classmethod
    def from_table_units(cls, E, nu, rho, mu_f) -> "Material":
        """Build from the calibration-table convention (rho in g/mm^3)."""
        return cls(float(E), float(nu), float(rho) * RHO_TABLE_TO_SI, float(mu_f))

    def as_theta(self) -> np.ndarray:
        return np.array([self.E, self.nu, self.rho / RHO_TABLE_TO_SI, self.mu_f])


@dataclass(frozen=True)
class BarrierParams:
    dhat: float = 1e-4
    kappa: float = 1e5

    def __post_init__(self):
        if not (self.dhat > 0 and self.kappa > 0):
            raise ValueError("dhat and kappa must be positive")


@dataclass(frozen=True)
class FrictionParams:
    eps_v: float = 1e-5
    mu_f: float = 1.0

    def __post_init__(self):
        if not self.eps_v > 0:
            raise ValueError("eps_v must be positive")


@dataclass
class EnergyReport:
    value: float
    gradient: np.ndarray
    diag_hessian: np.ndarray

    def __add__(self, other: "EnergyReport") -> "EnergyReport":
        return EnergyReport(
            self.value + other.value,
            self.gradient + other.gradient,
            self.diag_hessian + other.diag_hessian,
        )

    @classmethod
    def zeros(cls, n: int) -> "EnergyReport":
        return cls(0.0, np.zeros((n, 3)), np.zeros((n, 3)))


# ---------------------------------------------------------------------------
# inertia


def inertia_energy(x, xhat, masses, h=None) -> EnergyReport:
    """``1/2 (x - xhat)^T M (x - xhat)`` with lumped ``M``.

    ``h`` is accepted for signature symmetry with the other terms; the
    inertia potential is not scaled by it.
    """
    dx = np.asarray(x, float) - xhat
    m = np.asarray(masses, float)[:, None]
    return EnergyReport(
        0.5 * float(np.sum(m * dx * dx)),
        m * dx,
        np.repeat(m, 3, axis=1).astype(float),
    )


def inertia_quadform(p, masses) -> float:
    return float(np.sum(np.asarray(masses)[:, None] * p * p))


# ---------------------------------------------------------------------------
# stable Neo-Hookean elasticity


def _shape_rows(mesh) -> np.ndarray:
    """Per-tet ``(4, 3)`` rows ``b_a`` with ``dF = e_i b_a^T`` for a unit
    perturbation of vertex ``a`` along axis ``i``."""
    cached = getattr(mesh, "_shape_rows_cache", None)
    if cached is None:
        inv = mesh.inv_rest_shape
        rows = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
        object.__setattr__(mesh, "_shape_rows_cache", rows)
        cached = rows
    return cached


def _snh_params(mat: Material):
    mu = mat.lame_mu
    lam = mat.lame_lambda + mu  # matches linear elasticity at rest
    alpha = 1.0 + mu / lam
    return mu, lam, alpha


def deformation_gradients(mesh, x) -> np.ndarray:
    v = x[mesh.tets]
    ds = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
    return ds @ mesh.inv_rest_shape


@nb.njit(cache=True)
def _tet_F(x, tet, rows, t, F):
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for a in range(4):
                acc += x[tet[a], i] * rows[t, a, j]
            F[i, j] = acc


@nb.njit(cache=True)
def _tet_cof(F, C):
    for k in range(3):
        k1, k2 = (k + 1) % 3, (k + 2) % 3
        C[0, k] = F[1, k1] * F[2, k2] - F[2, k1] * F[1, k2]
        C[1, k] = F[2, k1] * F[0, k2] - F[0, k1] * F[2, k2]
        C[2, k] = F[0, k1] * F[1, k2] - F[1, k1] * F[0, k2]


@nb.njit(cache=True)
def _snh_kernel(tets, x, rows, w, mu, lam, alpha, grad, diag):
    F = np.empty((3, 3))
    C = np.empty((3, 3))
    e = 0.0
    for t in range(len(tets)):
        tet = tets[t]
        _tet_F(x, tet, rows, t, F)
        _tet_cof(F, C)
        J = F[0, 0] * C[0, 0] + F[1, 0] * C[1, 0] + F[2, 0] * C[2, 0]
        ic = 0.0
        for i in range(3):
            for j in range(3):
                ic += F[i, j] * F[i, j]
        e += w[t] * (0.5 * mu * (ic - 3.0) + 0.5 * lam * ((J - alpha) ** 2 - (1.0 - alpha) ** 2))
        s = lam * (J - alpha)
        for a in range(4):
            bb = rows[t, a, 0] ** 2 + rows[t, a, 1] ** 2 + rows[t, a, 2] ** 2
            for i in range(3):
                g = 0.0
                cb = 0.0
                for j in range(3):
                    g += (mu * F[i, j] + s * C[i, j]) * rows[t, a, j]
                    cb += C[i, j] * rows[t, a, j]
                grad[tet[a], i] += w[t] * g
                diag[tet[a], i] += w[t] * (mu * bb + lam * cb * cb)
    return e


@nb.njit(cache=True)
def _snh_quad_kernel(tets, x, p, rows, w, mu, lam, alpha):
    F = np.empty((3, 3))
    C = np.empty((3, 3))
    D = np.empty((3, 3))
    CD = np.empty((3, 3))
    q = 0.0
    for t in range(len(tets)):
        tet = tets[t]
        _tet_F(x, tet, rows, t, F)
        _tet_F(p, tet, rows, t, D)
        _tet_cof(F, C)
        _tet_cof(D, CD)
        J = F[0, 0] * C[0, 0] + F[1, 0] * C[1, 0] + F[2, 0] * C[2, 0]
        t1 = t2 = t3 = 0.0
        for i in range(3):
            for j in range(3):
                t1 += D[i, j] * D[i, j]
                t2 += C[i, j] * D[i, j]
                t3 += CD[i, j] * F[i, j]
        q += w[t] * (mu * t1 + lam * (t2 * t2 + 2.0 * (J - alpha) * t3))
    return q


def elastic_energy(mesh, x, mat: Material, h: float) -> EnergyReport:
    """``h^2 sum V Psi(F)`` for the stable Neo-Hookean density

    ``Psi = mu/2 (I_C - 3) + lam/2 (J - alpha)^2 - lam/2 (1 - alpha)^2``

    which is zero at rest and has no log term, so inverted elements are
    handled without special cases.
    """
    x = np.ascontiguousarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite positions passed to elastic_energy")
    mu, lam, alpha = _snh_params(mat)
    grad = np.zeros_like(x)
    diag = np.zeros_like(x)
    w = mesh.rest_volumes * h * h
    e = _snh_kernel(mesh.tets, x, _shape_rows(mesh), w, mu, lam, alpha, grad, diag)
    return EnergyReport(float(e), grad, diag)


def elastic_quadform(mesh, x, p, mat: Material, h: float) -> float:
    """Exact ``p^T H_el p`` assembled element by element."""
    mu, lam, alpha = _snh_params(mat)
    return float(_snh_quad_kernel(mesh.tets, np.ascontiguousarray(x, dtype=float),
                                  np.ascontiguousarray(p, dtype=float), _shape_rows(mesh),
                                  mesh.rest_volumes * h * h, mu, lam, alpha))


def _scatter(tets, per_vertex, n) -> np.ndarray:
    """Sum ``(T, 4, 3)`` element contributions into ``(n, 3)`` in element order."""
    out = np.zeros((n, 3))
    idx = tets.ravel()
    vals = per_vertex.reshape(-1, 3)
    for k in range(3):
        out[:, k] = np.bincount(idx, weights=vals[:, k], minlength=n)
    return out


# ---------------------------------------------------------------------------
# barrier and friction scalars


def barrier_term(d, p: BarrierParams):
    """``kappa b(d)`` and its first two derivatives in ``d``.

    ``b(d) = -(d - dhat)^2 ln(d / dhat)`` inside ``(0, dhat)``, zero beyond.
    Accepts scalars or arrays.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise FeasibilityError(f"contact distance {float(np.min(d)):.3e} <= 0")
    dhat = p.dhat
    active = d < dhat
    dd = np.where(active, d, dhat)
    r = dd - dhat
    lg = np.log(dd / dhat)
    b = -r * r * lg
    b1 = -2.0 * r * lg - r * r / dd
    b2 = -2.0 * lg - 4.0 * r / dd + r * r / (dd * dd)
    k = p.kappa
    out = (k * np.where(active, b, 0.0), k * np.where(active, b1, 0.0), k * np.where(active, b2, 0.0))
    if out[0].ndim == 0:
        return tuple(float(v) for v in out)
    return out


def friction_mollifier(s, eps_v: float):
    """C1 smoothing of ``|s|``: cubic below ``eps_v``, identity above."""
    s = np.asarray(s, dtype=float)
    inner = s < eps_v
    f = np.where(inner, -(s**3) / (3 * eps_v**2) + s * s / eps_v + eps_v / 3.0, s)
    df = np.where(inner, -(s * s) / eps_v**2 + 2.0 * s / eps_v, 1.0)
    if f.ndim == 0:
        return float(f), float(df)
    return f, df


def _mollifier_ratio(s, eps_v):
    """``f'(s) / s`` with its finite limit ``2 / eps_v`` at zero."""
    return np.where(s < eps_v, 2.0 / eps_v - s / eps_v**2, 1.0 / np.maximum(s, eps_v))


def friction_energy(contacts, x, x_t, fp: FrictionParams, n_vertices: int | None = None,
                    scale: float = 1.0) -> EnergyReport:
    """Lagged-friction dissipation ``scale * mu sum lambda_k f(|T_k^T dx_k|)``.

    ``x`` / ``x_t`` are stacked position arrays covering every vertex id the
    contact set refers to (deformable vertices first). Gradient rows past
    ``n_vertices`` belong to scripted bodies and are dropped.
    """
    x = np.asarray(x, float)
    n = len(x) if n_vertices is None else n_vertices
    k = len(contacts.verts)
    if k == 0:
        return EnergyReport.zeros(n)
    disp = x - x_t
    w = contacts.weights  # (K, 4)
    dxk = np.einsum("kj,kji->ki", w, disp[contacts.verts])
    T = contacts.T  # (K, 3, 2)
    u = np.einsum("kia,ki->ka", T, dxk)
    s = np.linalg.norm(u, axis=1)
    f, _ = friction_mollifier(s, fp.eps_v)
    lam = contacts.lambda_n * fp.mu_f * scale
    value = float(np.sum(lam * f))
    ratio = _mollifier_ratio(s, fp.eps_v)
    tang = np.einsum("kia,ka->ki", T, u)  # T T^T dx
    gk = (lam * ratio)[:, None] * tang
    per_vertex = w[:, :, None] * gk[:, None, :]
    # PSD diagonal: lam * f'(s)/s * w_j^2 * diag(T T^T)
    ttd = np.einsum("kia,kia->ki", T, T)
    dk = (lam * ratio)[:, None, None] * (w * w)[:, :, None] * ttd[:, None, :]
    grad = _scatter_pairs(contacts.verts, per_vertex, n)
    diag = _scatter_pairs(contacts.verts, dk, n)
    return EnergyReport(value, grad, diag)


def friction_quadform(contacts, x, x_t, p_full, fp: FrictionParams, scale: float = 1.0) -> float:
    """Gauss-Newton ``p^T H_D p`` (the same PSD model used for the diagonal)."""
    if len(contacts.verts) == 0:
        return 0.0
    disp = x - x_t
    w = contacts.weights
    dxk = np.einsum("kj,kji->ki", w, disp[contacts.verts])
    u = np.einsum("kia,ki->ka", contacts.T, dxk)
    s = np.linalg.norm(u, axis=1)
    dp = np.einsum("kj,kji->ki", w, p_full[contacts.verts])
    dpu = np.einsum("kia,ki->ka", contacts.T, dp)
    lam = contacts.lambda_n * fp.mu_f * scale
    return float(np.sum(lam * _mollifier_ratio(s, fp.eps_v) * np.einsum("ka,ka->k", dpu, dpu)))


def _scatter_pairs(verts, per_vertex, n) -> np.ndarray:
    out = np.zeros((n, 3))
    idx = verts.ravel()
    vals = per_vertex.reshape(-1, 3)
    keep = idx < n
    idx, vals = idx[keep], vals[keep]
    for c in range(3):
        out[:, c] = np.bincount(idx, weights=vals[:, c], minlength=n)
    return out
