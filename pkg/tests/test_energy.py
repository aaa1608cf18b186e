import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from tacsim.contact import ContactSet
from tacsim.energy import (
    BarrierParams,
    FeasibilityError,
    FrictionParams,
    Material,
    barrier_term,
    elastic_energy,
    elastic_quadform,
    friction_energy,
    friction_mollifier,
    friction_quadform,
    inertia_energy,
    inertia_quadform,
)
from tacsim.geometry import build_gel_pad

from _fd import ContactConfig, fd_gradient, rel_err


@pytest.fixture(scope="module")
def pad():
    return build_gel_pad(resolution=(3, 2, 1))


def test_material_validation_and_table_units():
    with pytest.raises(ValueError):
        Material(E=-1)
    with pytest.raises(ValueError):
        Material(nu=0.5)
    m = Material.from_table_units(5e4, 0.45, 2e-3, 1.0)
    assert m.rho == pytest.approx(2000.0)
    assert np.allclose(m.as_theta(), [5e4, 0.45, 2e-3, 1.0])
    assert m.lame_mu == pytest.approx(5e4 / 2.9)


def test_inertia_at_target_is_zero():
    x = np.random.default_rng(0).normal(size=(5, 3))
    r = inertia_energy(x, x, np.ones(5))
    assert r.value == 0 and not r.gradient.any()


def test_inertia_single_node():
    r = inertia_energy(np.array([[1.0, 0, 0]]), np.zeros((1, 3)), np.array([2.0]))
    assert r.value == 1.0
    assert np.array_equal(r.gradient, [[2.0, 0, 0]])
    assert np.array_equal(r.diag_hessian, [[2.0, 2.0, 2.0]])


def test_inertia_fd(rng):
    m = rng.uniform(0.5, 2, size=6)
    xhat = rng.normal(size=(6, 3))
    x = rng.normal(size=(6, 3))
    g = inertia_energy(x, xhat, m).gradient
    gfd = fd_gradient(lambda y: inertia_energy(y, xhat, m).value, x, 1e-5)
    assert rel_err(g, gfd) < 1e-8
    p = rng.normal(size=(6, 3))
    assert inertia_quadform(p, m) == pytest.approx(np.sum(m[:, None] * p * p))


def test_elastic_rest_and_rotation(pad):
    mat = Material()
    h = 5e-3
    r = elastic_energy(pad, pad.vertices, mat, h)
    scale = mat.E * h * h * pad.rest_volumes.sum()
    assert abs(r.value) < 1e-10 * scale
    assert np.abs(r.gradient).max() < 1e-10 * scale
    R = Rotation.from_euler("xyz", [20, -35, 50], degrees=True).as_matrix()
    rot = pad.vertices @ R.T + np.array([0.01, -0.02, 0.3])
    assert abs(elastic_energy(pad, rot, mat, h).value) < 1e-8 * scale


def test_elastic_gradient_diag_quadform_fd(pad, rng):
    mat = Material(E=7e4, nu=0.42)
    h = 5e-3
    x = pad.vertices + rng.uniform(-5e-4, 5e-4, size=pad.vertices.shape)
    rep = elastic_energy(pad, x, mat, h)
    gfd = fd_gradient(lambda y: elastic_energy(pad, y, mat, h).value, x, 1e-7)
    assert rel_err(rep.gradient, gfd) < 1e-4
    # the diagonal is exact: J is affine in each row of F
    dfd = np.zeros_like(x)
    eps = 1e-7
    for i in range(len(x)):
        for c in range(3):
            xp, xm = x.copy(), x.copy()
            xp[i, c] += eps
            xm[i, c] -= eps
            dfd[i, c] = (elastic_energy(pad, xp, mat, h).gradient[i, c]
                         - elastic_energy(pad, xm, mat, h).gradient[i, c]) / (2 * eps)
    assert rel_err(rep.diag_hessian, dfd) < 1e-5
    p = rng.normal(size=x.shape)
    q = elastic_quadform(pad, x, p, mat, h)
    e = 1e-7
    qfd = np.vdot(elastic_energy(pad, x + e * p, mat, h).gradient - elastic_energy(pad, x - e * p, mat, h).gradient,
                  p) / (2 * e)
    assert q == pytest.approx(qfd, rel=1e-5)


def test_elastic_handles_inversion(pad):
    x = np.array(pad.vertices)
    x[:, 2] *= -1.0  # every tet inverted
    r = elastic_energy(pad, x, Material(), 5e-3)
    assert np.isfinite(r.value) and np.all(np.isfinite(r.gradient)) and r.value > 0


def test_elastic_rejects_nan(pad):
    x = np.array(pad.vertices)
    x[0, 0] = np.nan
    with pytest.raises(ValueError):
        elastic_energy(pad, x, Material(), 5e-3)


def test_barrier_support_boundary():
    b, b1, b2 = barrier_term(1e-4, BarrierParams(dhat=1e-4, kappa=1.0))
    assert b == 0 and b1 == 0
    b, b1, _ = barrier_term(2e-4, BarrierParams(dhat=1e-4, kappa=1.0))
    assert b == b1 == 0


def test_barrier_value_half_dhat():
    b, _, _ = barrier_term(0.5, BarrierParams(dhat=1.0, kappa=3.0))
    assert b == pytest.approx(3.0 * 0.25 * math.log(2), rel=1e-14)
    assert 0.25 * math.log(2) == pytest.approx(0.1733, abs=1e-4)


def test_barrier_derivatives_fd():
    bp = BarrierParams(dhat=1e-3, kappa=7.0)
    d = 0.3e-3
    e = 1e-9
    _, b1, b2 = barrier_term(d, bp)
    fd1 = (barrier_term(d + e, bp)[0] - barrier_term(d - e, bp)[0]) / (2 * e)
    fd2 = (barrier_term(d + e, bp)[1] - barrier_term(d - e, bp)[1]) / (2 * e)
    assert b1 == pytest.approx(fd1, rel=1e-6)
    assert b2 == pytest.approx(fd2, rel=1e-6)
    assert b1 < 0 < b2


def test_barrier_infeasible_raises():
    with pytest.raises(FeasibilityError):
        barrier_term(np.array([1e-5, 0.0]), BarrierParams())


def test_mollifier_values():
    ev = 1e-5
    f, df = friction_mollifier(0.0, ev)
    assert f == ev / 3 and df == 0.0
    fl, dfl = friction_mollifier(ev * (1 - 1e-13), ev)
    fr, dfr = friction_mollifier(ev, ev)
    assert abs(fl - fr) < 1e-10 * ev and abs(dfl - dfr) < 1e-10
    assert fr == pytest.approx(ev) and dfr == 1.0
    assert friction_mollifier(2 * ev, ev) == (2 * ev, 1.0)
    s = np.linspace(0, 3 * ev, 31)
    f, df = friction_mollifier(s, ev)
    assert np.all(f >= s) and np.all(np.diff(f) > 0)


def _one_contact(lam=2.0):
    T = np.zeros((1, 3, 2))
    T[0, 0, 0] = T[0, 1, 1] = 1.0
    return ContactSet(
        kind=np.zeros(1, np.int8), verts=np.array([[0, 1, 2, 3]]), d=np.array([5e-5]),
        weights=np.array([[1.0, -1 / 3, -1 / 3, -1 / 3]]), normal=np.array([[0, 0, 1.0]]), dhat=1e-4,
        lambda_n=np.array([lam]), T=T,
    )


def test_friction_at_anchor():
    cs = _one_contact(2.0)
    fp = FrictionParams(eps_v=1e-5, mu_f=0.7)
    x = np.random.default_rng(3).normal(size=(4, 3))
    r = friction_energy(cs, x, x, fp)
    assert r.value == pytest.approx(0.7 * 2.0 * 1e-5 / 3)
    assert not r.gradient.any()


def test_friction_linear_branch():
    cs = _one_contact(2.0)
    fp = FrictionParams(eps_v=1e-5, mu_f=0.7)
    x_t = np.zeros((4, 3))
    x = x_t.copy()
    x[0] = [3e-5, 4e-5, 1e-6]  # normal part is ignored
    r = friction_energy(cs, x, x_t, fp)
    assert r.value == pytest.approx(0.7 * 2.0 * 5e-5)
    assert np.allclose(r.gradient[0], 0.7 * 2.0 * np.array([0.6, 0.8, 0.0]))


def test_friction_drops_rigid_rows():
    cs = _one_contact(1.0)
    fp = FrictionParams()
    x_t = np.zeros((4, 3))
    x = x_t.copy()
    x[0, 0] = 2e-5
    r = friction_energy(cs, x, x_t, fp, n_vertices=1)
    assert r.gradient.shape == (1, 3)


@pytest.mark.parametrize("seed", [0, 1])
def test_friction_fd_on_contact_config(seed):
    c = ContactConfig(seed)
    assert len(c.contacts) > 0
    X_t = c.X_t
    xr = c.xr

    def f(y):
        return friction_energy(c.contacts, np.vstack([y, xr]), X_t, c.fp, c.n).value

    r = friction_energy(c.contacts, np.vstack([c.x, xr]), X_t, c.fp, c.n)
    gfd = fd_gradient(f, c.x, 1e-9)
    assert rel_err(r.gradient, gfd) < 1e-5
    p = np.random.default_rng(seed).normal(size=c.x.shape)
    q = friction_quadform(c.contacts, np.vstack([c.x, xr]), X_t, np.vstack([p, np.zeros_like(xr)]), c.fp)
    assert q >= 0
