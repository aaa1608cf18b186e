import numpy as np
import pytest

from tacsim.energy import Material
from tacsim.geometry import TetMesh, build_gel_pad, make_indenter
from tacsim.protocols import make_indentation_script, start_pose
from tacsim.rigid import Pose, RigidScript
from tacsim.solver import (
    ScriptError,
    SimState,
    Simulator,
    SolverConfig,
    dk_direction,
    implicit_euler_step,
    simulate_sequence,
    step_size,
    substep_count,
)
from tacsim.tactile import init_marker_mapping, marker_displacements


def cg_oracle(A, b, x0, iters):
    """Textbook conjugate gradients; returns the iterate list."""
    x = x0.copy()
    r = b - A @ x
    p = r.copy()
    xs = [x.copy()]
    for _ in range(iters):
        rr = r @ r
        if rr == 0:
            break
        Ap = A @ p
        a = rr / (p @ Ap)
        x = x + a * p
        r = r - a * Ap
        p = r + (r @ r) / rr * p
        xs.append(x.copy())
    return xs


def dk_run(A, b, x0, iters, P=None):
    P = np.ones(len(b)) if P is None else P
    x = x0.copy()
    g_prev = p_prev = None
    xs = [x.copy()]
    for _ in range(iters):
        g = A @ x - b
        p = dk_direction(g, g_prev, p_prev, P)
        a = step_size(g, p, p @ A @ p, dhat=1e300)
        x = x + a * p
        xs.append(x.copy())
        g_prev, p_prev = g, p
        if np.linalg.norm(A @ x - b) < 1e-14:
            break
    return xs


def test_first_direction_is_steepest_descent(rng):
    g = rng.normal(size=7)
    assert np.array_equal(dk_direction(g, None, None, np.ones(7)), -g)
    P = rng.uniform(0.5, 2, size=7)
    assert np.allclose(dk_direction(g, None, None, P), -P * g)


def test_zero_gradient_zero_direction(rng):
    p = dk_direction(np.zeros(5), rng.normal(size=5), rng.normal(size=5), np.ones(5))
    assert np.array_equal(p, np.zeros(5))


def test_dk_matches_cg_2d():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x0 = np.array([2.0, 1.0])
    ours = dk_run(A, b, x0, 2)
    ref = cg_oracle(A, b, x0, 2)
    for a, r in zip(ours, ref):
        assert np.abs(a - r).max() < 1e-10
    assert np.allclose(ours[-1], np.linalg.solve(A, b), atol=1e-12)


def test_preconditioned_dk_matches_pcg(rng):
    n = 12
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    A = Q @ np.diag(rng.uniform(1, 10, n)) @ Q.T
    D = rng.uniform(0.5, 3, n)
    A = np.diag(D) @ A @ np.diag(D)
    b = rng.normal(size=n)
    P = 1 / np.diag(A)
    # PCG equals CG on the symmetrically scaled system
    S = np.sqrt(P)
    ref = cg_oracle(S[:, None] * A * S[None, :], S * b, np.zeros(n), n)
    ours = dk_run(A, b, np.zeros(n), n, P)
    for a, r in zip(ours, ref):
        assert np.abs(a - S * r).max() < 1e-8 * max(1, np.abs(S * r).max())


def test_step_size_examples():
    g = np.array([1.0, -2.0, 0.5])
    assert step_size(g, -g, float(g @ g), dhat=1e9) == pytest.approx(1.0)
    p = np.array([0.01, -0.005])
    assert step_size(np.array([-1.0, 0.0]), p, 1e-12, dhat=1e-3) == pytest.approx(0.05)
    assert step_size(np.array([-1.0, 0.0]), p, -1.0, dhat=1e-3) == pytest.approx(0.05)
    assert step_size(g, np.zeros(3), 0.0, 1e-3) == 0.0


def test_step_size_bound_exact(rng):
    for _ in range(2000):
        p = rng.normal(size=9) * 10 ** rng.uniform(-9, 1)
        dhat = 10 ** rng.uniform(-6, -2)
        a = step_size(-p, p, 1e-300, dhat)
        assert a * float(np.max(np.abs(p))) <= 0.5 * dhat


def _free_tet():
    v = np.array([[0, 0, 0], [0.01, 0, 0], [0, 0.01, 0], [0, 0, 0.01]])
    return TetMesh(v, np.array([[0, 1, 2, 3]]))


def test_inertia_only_free_motion():
    mesh = _free_tet()
    v = np.tile([0.3, -0.2, 0.1], (4, 1))
    st = SimState(np.array(mesh.vertices), v.copy())
    mat = Material(E=1e-9, nu=0.3, rho=1000.0)
    cfg = SolverConfig(h=0.01)
    new, info = implicit_euler_step(st, mesh, mat, cfg)
    assert np.allclose(new.x, mesh.vertices + cfg.h * v, rtol=0, atol=1e-15)
    assert np.allclose(new.v, v, rtol=0, atol=1e-12)
    assert info.converged and info.n_contacts == 0


def test_translation_is_stress_free_with_stiff_material():
    mesh = _free_tet()
    v = np.tile([0.1, 0.0, 0.0], (4, 1))
    st = SimState(np.array(mesh.vertices), v.copy())
    # a free stiff tet is badly conditioned and the dhat/2 cap limits travel
    cfg = SolverConfig(h=0.01, tol_dx=1e-12, max_iters=5000)
    new, info = implicit_euler_step(st, mesh, Material(), cfg)
    assert info.converged
    assert np.allclose(new.x, mesh.vertices + 0.01 * v, rtol=0, atol=1e-9)


@pytest.fixture(scope="module")
def press_setup():
    mesh = build_gel_pad(resolution=(8, 6, 1))
    sim = Simulator(mesh, Material(), SolverConfig(), make_indenter("cube"))
    return mesh, sim


def test_press_step_feasible_and_bounded(press_setup):
    mesh, sim = press_setup
    st = SimState.at_rest(mesh, start_pose())
    target = Pose((0.0, 0.0, -5e-5))
    n = substep_count(sim.shell, st.rigid_pose, target, 1e-4)
    assert n == 3
    for k in range(1, n + 1):
        st, info = sim.step(st, st.rigid_pose.interpolate(target, 1.0 / (n - k + 1)))
        assert info.min_distance > 0
        assert max(info.step_inf_norms) <= 0.5 * sim.cfg.barrier.dhat
    assert info.n_contacts > 0
    # hold the pose: the step objective does not increase over the inner loop
    new, info = sim.step(st, st.rigid_pose)
    e0 = sim.step_energy(st, st.x)
    e1 = sim.step_energy(st, new.x)
    assert e1 <= e0
    assert info.energy_end <= info.energy_start
    assert np.all(mesh.vertices[mesh.dirichlet] == new.x[mesh.dirichlet])


def test_empty_script_returns_initial(press_setup):
    mesh, sim = press_setup
    st = SimState.at_rest(mesh, start_pose())
    states, infos = simulate_sequence(st, RigidScript([], []), sim)
    assert len(states) == 1 and states[0] is st


def test_press_sequence_monotone(press_setup):
    mesh, sim = press_setup
    mp = init_marker_mapping(mesh)
    calls = []
    script = make_indentation_script("press", dhat=1e-4, frame_dt=sim.cfg.h, n_frames=5)
    states, infos = simulate_sequence(SimState.at_rest(mesh, start_pose()), script, sim,
                                      on_step=lambda pose, lin, ang: calls.append((pose, lin, ang)))
    assert len(states) == 5 and len(infos) == 5
    m = [marker_displacements(mp, s.x, mesh.vertices).max_norm() for s in states]
    assert np.all(np.diff(m) > 0)
    assert all(q.min_distance > 0 for fr in infos for q in fr)
    assert len(calls) == sum(len(fr) for fr in infos)
    assert np.allclose(calls[-1][1], [0, 0, -0.05e-3 / sim.cfg.h])
    assert np.allclose(states[-1].rigid_pose.position, script.poses[-1].position)


def test_press_deterministic(press_setup):
    mesh, sim = press_setup
    script = make_indentation_script("press", dhat=1e-4, n_frames=2)
    a, _ = simulate_sequence(SimState.at_rest(mesh, start_pose()), script, sim)
    b, _ = simulate_sequence(SimState.at_rest(mesh, start_pose()), script, sim)
    assert np.array_equal(a[-1].x, b[-1].x)


def test_substep_limit(press_setup):
    mesh, sim = press_setup
    script = RigidScript([Pose((0.0, 0.0, -0.01))], [1.0])
    with pytest.raises(ScriptError):
        simulate_sequence(SimState.at_rest(mesh, start_pose()), script, sim, max_substeps=10)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(h=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(tol_dx=-1)
