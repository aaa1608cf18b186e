import numpy as np
import pytest

from tacsim.baselines import mpm as M
from tacsim.baselines.mpm import (
    MpmConfig,
    RigidBoundary,
    init_mpm_state,
    mpm_explosion_guard,
    mpm_marker_field,
    mpm_step,
    stable_dt,
)
from tacsim.baselines.penalty import (
    PenaltyTactileParams,
    TactilePointSet,
    force_to_pseudo_displacement,
    lattice_points,
    normalization_scale,
    penalty_tactile,
    run_penalty_script,
)
from tacsim.energy import Material
from tacsim.geometry import SdfGrid, build_sdf_grid, make_indenter
from tacsim.protocols import MODES, SHAPES, make_indentation_script, start_pose
from tacsim.rigid import Pose

SMALL = (0.008, 0.006, 0.002)


@pytest.fixture
def state():
    return init_mpm_state(SMALL, Material(), MpmConfig())


def test_mpm_init(state):
    assert len(state.tracked) == 63
    body = np.setdiff1d(np.arange(len(state.x)), state.tracked)
    assert np.isclose(state.V[body].sum(), np.prod(SMALL))
    assert state.m[state.tracked].max() < 1e-5 * state.m[body].min()
    assert np.all(state.x[:, 2] <= 0) and np.all(state.x[:, 2] >= -SMALL[2])


def test_p2g_mass_conservation(state, rng):
    mat = Material()
    dt = stable_dt(state, mat, MpmConfig())
    state.v[:] = rng.normal(scale=1e-3, size=state.v.shape)
    for _ in range(3):
        mpm_step(state, dt, mat)
        assert abs(state.grid_m.sum() - state.m.sum()) <= 1e-12 * state.m.sum()


def test_zero_grid_velocity_keeps_F(state, rng):
    F = np.eye(3) + rng.normal(scale=0.05, size=(len(state.x), 3, 3))
    state.F[:] = F
    gv = np.zeros(state.dims + (3,))
    M._g2p(state.x, state.v, state.F, state.C, state.origin, state.spacing, 1e-5, gv)
    assert np.allclose(state.F, F, rtol=0, atol=1e-15)
    assert not state.v.any()


def test_uniform_velocity_roundtrip(state):
    v0 = np.array([0.02, -0.01, 0.005])
    state.v[:] = v0
    x0 = state.x.copy()
    dt = stable_dt(state, Material(), MpmConfig())
    mpm_step(state, dt, Material())
    # away from the held base layers and the domain walls
    interior = x0[:, 2] > state.z_fixed + 2 * state.spacing
    assert interior.sum() > 100
    assert np.allclose(state.v[interior], v0, rtol=0, atol=1e-12)
    assert np.allclose(state.F[interior], np.eye(3), atol=1e-12)


def test_explosion_guard(state):
    s, hit = mpm_explosion_guard(state, 5.0)
    assert not hit
    state.v[:] = 0.1
    state.v[7] = [10.0, 0, 0]
    s, hit = mpm_explosion_guard(state, 5.0)
    assert hit and not s.v.any() and not s.C.any() and s.explosions == 1
    s, hit = mpm_explosion_guard(s, 5.0)
    assert not hit
    state.v[3, 1] = np.nan
    assert mpm_explosion_guard(state, 5.0)[1]


def test_mpm_marker_field(state):
    assert not mpm_marker_field(state).u.any()
    t = np.array([1e-4, 2e-4, -3e-4])
    state.x = state.x + t
    f = mpm_marker_field(state)
    assert np.allclose(f.u, t[:2], rtol=0, atol=1e-18)
    with pytest.raises(ValueError):
        mpm_marker_field(state, tracked=np.arange(5))


def test_rigid_boundary_pushes_gel(state):
    mat = Material()
    dt = stable_dt(state, mat, MpmConfig())
    sdf = build_sdf_grid(make_indenter("cube", size=0.004), (24, 24, 24), padding=2 * state.spacing)
    b = RigidBoundary(sdf, Pose((0, 0, -1e-4)), np.array([0, 0, -0.1]), np.zeros(3))
    for _ in range(5):
        mpm_step(state, dt, mat, b)
    top = np.abs(state.x_rest[:, 0]) < 1e-3
    top &= (np.abs(state.x_rest[:, 1]) < 1e-3) & (state.x_rest[:, 2] > -state.spacing / 2)
    assert state.v[top, 2].mean() < 0


# ---------------------------------------------------------------------------
# penalty


def _halfspace():
    # SDF of the half-space z < 0 (object below its local z = 0 plane is inside)
    n = 9
    origin = np.array([-0.04, -0.04, -0.01])
    sp = 0.01
    z = origin[2] + sp * np.arange(n)
    vals = np.broadcast_to(z[None, None, :], (n, n, n)).copy()
    return SdfGrid(origin, sp, (n, n, n), vals)


def test_penalty_separated_is_zero():
    pts = lattice_points()
    out = penalty_tactile(pts, _halfspace(), Pose((0, 0, -0.005)), np.zeros(3), np.zeros(3), PenaltyTactileParams())
    assert not out.f_n.any() and not out.f_t.any()
    assert not force_to_pseudo_displacement(out, 3.0).u.any()


def test_penalty_static_depth():
    pts = TactilePointSet(np.zeros((1, 3)))
    out = penalty_tactile(pts, _halfspace(), Pose((0, 0, 0.001)), np.zeros(3), np.zeros(3),
                          PenaltyTactileParams(k_n=500, k_d=0))
    assert np.allclose(out.f_n[0], [0, 0, 0.5], rtol=1e-12)
    assert not out.f_t.any()


def test_penalty_cone_and_damping(rng):
    sdf = _halfspace()
    pts = TactilePointSet(rng.uniform(-0.01, 0.01, size=(200, 3)) * [1, 1, 0])
    for _ in range(20):
        prm = PenaltyTactileParams(k_n=500, k_d=rng.uniform(0, 5), k_t=rng.uniform(1, 500), mu=rng.uniform(0.1, 2))
        out = penalty_tactile(pts, sdf, Pose((0, 0, rng.uniform(0, 2e-3))), rng.normal(size=3) * 0.05,
                              rng.normal(size=3), prm)
        ft = np.linalg.norm(out.f_t, axis=1)
        fn = np.linalg.norm(out.f_n, axis=1)
        assert np.all(ft <= prm.mu * fn + 1e-12)
        assert np.abs(np.einsum("ij,ij->i", out.f_t, out.f_n)).max() < 1e-12


def test_normalization_scale_invariance(rng):
    pts = TactilePointSet(np.zeros((63, 3)), f_n=np.zeros((63, 3)), f_t=rng.normal(size=(63, 3)))
    s = normalization_scale(pts, 2e-4)
    f = force_to_pseudo_displacement(pts, s)
    assert f.max_norm() == pytest.approx(2e-4, rel=1e-12)
    big = TactilePointSet(pts.points, 7 * pts.f_n, 7 * pts.f_t)
    g = force_to_pseudo_displacement(big, normalization_scale(big, 2e-4))
    assert np.allclose(f.u, g.u, rtol=1e-12)
    assert normalization_scale(TactilePointSet(np.zeros((63, 3))), 1.0) == 0.0


@pytest.fixture(scope="module")
def sdfs():
    return {s: build_sdf_grid(make_indenter(s), (40, 40, 40), padding=0.002) for s in SHAPES}


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("mode", MODES)
def test_penalty_protocol_cone(shape, mode, sdfs):
    script = make_indentation_script(mode, shape, frame_dt=5e-3)
    pts, _ = run_penalty_script(make_indenter(shape), script, start_pose(), frame_dt=5e-3, sdf=sdfs[shape])
    mu = PenaltyTactileParams().mu
    for p in pts:
        ft = np.linalg.norm(p.f_t, axis=1)
        fn = np.linalg.norm(p.f_n, axis=1)
        assert np.all(ft <= mu * fn + 1e-12)
    assert np.linalg.norm(pts[-1].f_n, axis=1).max() > 0
