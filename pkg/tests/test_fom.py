import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from efrrom import fom, metrics, operators as ops
from efrrom.mesh import OBSTACLE, build_channel_mesh, mesh_metrics


def poiseuille(y, H, U=1.0):
    return 6.0 * U * y * (H - y) / H**2


def rest_params(mesh, chi=0.5, dt=0.01):
    return fom.EfrParams(1.0, 1e-3, dt, mesh_metrics(mesh)[1], chi)


# -- evolve -------------------------------------------------------------------

def test_zero_inflow_stays_at_rest(small_channel):
    params = rest_params(small_channel)
    state = fom.FomState.at_rest(small_channel)
    v, p, fi, fb = fom.evolve_step(small_channel, state, params, None, params.dt)
    assert np.abs(v).max() <= 1e-12
    assert np.abs(p).max() <= 1e-12
    new = fom.efr_step(small_channel, state, params, None)
    assert np.abs(new.u_curr).max() <= 1e-12


@pytest.fixture(scope="module")
def poiseuille_run():
    H = 0.41
    mesh = build_channel_mesh(2.2, H, (0.0, 0.0), 0.0, 44, 32)
    params = fom.EfrParams(1.0, 0.05, 0.02, mesh_metrics(mesh)[1], 0.02)
    inflow = ops.ParabolicInflow(H, unsteady=False)
    state, _ = fom.run_fom(mesh, params, inflow, 0.0, 12.0)
    return mesh, params, inflow, state


def test_poiseuille_profile(poiseuille_run):
    mesh, params, inflow, state = poiseuille_run
    exact = np.column_stack([poiseuille(mesh.centers[:, 1], mesh.height), np.zeros(mesh.n_cells)])
    assert metrics.relative_l2_error(mesh, exact, state.u_curr) < 0.02
    assert metrics.relative_l2_error(mesh, exact, state.v) < 0.02


def test_poiseuille_flowrate(poiseuille_run):
    mesh, params, inflow, state = poiseuille_run
    g = ops.inflow_data(mesh, inflow, state.time)
    for x in metrics.DEFAULT_FLOWRATE_STATIONS:
        assert abs(metrics.mass_error_flowrate(mesh, state.u_curr, x, mesh.height, g)) <= 1e-3


def test_continuity_residual_after_evolve(small_channel):
    params = fom.EfrParams(1.0, 1e-3, 0.01, mesh_metrics(small_channel)[1], 0.01)
    inflow = ops.ParabolicInflow(0.41, unsteady=False)
    state = fom.FomState.at_rest(small_channel)
    for _ in range(3):
        state = fom.efr_step(small_channel, state, params, inflow)
        res = fom.continuity_residual(small_channel, state.flux_if, state.flux_bf)
        assert np.abs(res).max() <= 1e-10 * np.abs(state.v).max()


def test_cfl_matches_brute_force(small_channel, rng):
    v = rng.normal(size=(small_channel.n_cells, 2))
    dt = 1e-4
    brute = 0.0
    for vx, vy in v:
        brute = max(brute, dt * (abs(vx) / small_channel.dx + abs(vy) / small_channel.dy))
    assert fom.cfl_number(small_channel, v, dt) == pytest.approx(brute, rel=1e-14)


def test_cfl_warning(small_channel):
    params = fom.EfrParams(1.0, 1e-3, 1.0, 0.0, 0.0)
    inflow = ops.ParabolicInflow(0.41, unsteady=False)
    with pytest.warns(fom.CFLWarning):
        fom.evolve_step(small_channel, fom.FomState.at_rest(small_channel), params, inflow, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        fom.EfrParams(1.0, 1e-3, 0.0, 0.01, 0.1)
    with pytest.raises(ValueError):
        fom.EfrParams(1.0, 1e-3, 0.1, -1.0, 0.1)
    with pytest.raises(ValueError):
        fom.EfrParams(1.0, 1e-3, 0.1, 0.01, 1.5)
    with pytest.raises(ValueError):
        fom.EfrParams(0.0, 1e-3, 0.1, 0.01, 0.5)


# -- filters --------------------------------------------------------------------

def test_helmholtz_alpha_zero_is_identity(small_channel, rng):
    v = rng.normal(size=(small_channel.n_cells, 2))
    assert np.array_equal(fom.helmholtz_filter(small_channel, v, 0.0), v)


def test_helmholtz_constant(small_channel):
    c = np.array([0.7, -0.3])
    v = np.tile(c, (small_channel.n_cells, 1))
    g = np.tile(c, (len(small_channel.bf_owner), 1))
    out = fom.helmholtz_filter(small_channel, v, 0.05, g)
    assert np.abs(out - c).max() <= 1e-12
    assert np.abs(fom.indicator(small_channel, v, 0.05, g)).max() <= 1e-12


@pytest.fixture(scope="module")
def strip():
    # 200 cells along x; all faces zero-gradient so cosines are discrete eigenvectors
    mesh = build_channel_mesh(1.0, 0.02, (0.0, 0.0), 0.0, 200, 4)
    return mesh, np.zeros(len(mesh.bf_owner), bool)


@pytest.mark.parametrize("m_wave,alpha", [(4, 0.02), (10, 0.01), (20, 0.02), (3, 0.05)])
def test_transfer_function(strip, m_wave, alpha):
    mesh, neumann = strip
    k = m_wave * np.pi / mesh.length
    x = mesh.centers[:, 0]
    v = np.column_stack([np.cos(k * x), np.zeros(mesh.n_cells)])
    gain = 1.0 / (1.0 + alpha**2 * k**2)
    out = fom.helmholtz_filter(mesh, v, alpha, dirichlet=neumann)
    ratio = out[:, 0] @ v[:, 0] / (v[:, 0] @ v[:, 0])
    assert ratio == pytest.approx(gain, rel=0.05)
    assert np.abs(out[:, 0] - ratio * v[:, 0]).max() <= 1e-10

    a = fom.indicator(mesh, v, alpha, dirichlet=neumann)
    expected = np.abs(v[:, 0]) * alpha**2 * k**2 / (1 + alpha**2 * k**2)
    big = np.abs(v[:, 0]) > 0.5
    assert np.allclose(a[big], expected[big], rtol=0.05)

    ones = np.ones(mesh.n_cells)
    nl = fom.nonlinear_filter(mesh, v, ones, alpha, dirichlet=neumann)
    assert nl[:, 0] @ v[:, 0] / (v[:, 0] @ v[:, 0]) == pytest.approx(gain, rel=0.05)


def test_indicator_alpha_zero(small_channel, rng):
    v = rng.normal(size=(small_channel.n_cells, 2))
    assert np.all(fom.indicator(small_channel, v, 0.0) == 0.0)


def test_nonlinear_filter_identities(small_channel, rng):
    v = rng.normal(size=(small_channel.n_cells, 2))
    g = rng.normal(size=(len(small_channel.bf_owner), 2))
    assert np.array_equal(fom.nonlinear_filter(small_channel, v, np.zeros(small_channel.n_cells), 0.1, g), v)
    ones = np.ones(small_channel.n_cells)
    a = fom.nonlinear_filter(small_channel, v, ones, 0.05, g)
    b = fom.helmholtz_filter(small_channel, v, 0.05, g)
    assert np.abs(a - b).max() <= 1e-12
    with pytest.raises(ValueError):
        fom.nonlinear_filter(small_channel, v, -ones, 0.05, g)


@settings(max_examples=30, deadline=None)
@given(nx=st.integers(4, 50), ny=st.integers(4, 50), seed=st.integers(0, 2**31), alpha=st.floats(1e-3, 0.5))
def test_nonlinear_filter_max_bound(nx, ny, seed, alpha):
    mesh = build_channel_mesh(1.0, 1.0, (0.5, 0.5), 0.15, nx, ny)
    r = np.random.default_rng(seed)
    v = r.normal(size=(mesh.n_cells, 2))
    a = r.uniform(0.0, 3.0, size=mesh.n_cells)
    out = fom.nonlinear_filter(mesh, v, a, alpha)
    assert np.abs(out).max() <= np.abs(v).max() * (1 + 1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), cx=st.floats(-2, 2), cy=st.floats(-2, 2))
def test_indicator_translation_invariance(small_channel, seed, cx, cy):
    r = np.random.default_rng(seed)
    v = r.normal(size=(small_channel.n_cells, 2))
    g = r.normal(size=(len(small_channel.bf_owner), 2))
    c = np.array([cx, cy])
    a0 = fom.indicator(small_channel, v, 0.05, g)
    a1 = fom.indicator(small_channel, v + c, 0.05, g + c)
    assert np.abs(a0 - a1).max() <= 1e-10 * max(1.0, np.abs(c).max())


def test_relax(rng):
    v = rng.normal(size=(30, 2))
    vbar = rng.normal(size=(30, 2))
    assert np.array_equal(fom.relax(v, vbar, 0.0), v)
    assert np.array_equal(fom.relax(v, vbar, 1.0), vbar)
    chi = 1e-4
    out = fom.relax(v, vbar, chi)
    for i in range(30):
        for k in range(2):
            assert out[i, k] == (1 - chi) * v[i, k] + chi * vbar[i, k]


# -- full step ---------------------------------------------------------------------

def test_chi_zero_end_of_step_is_evolve_velocity(small_channel):
    params = fom.EfrParams(1.0, 1e-3, 0.01, 0.05, 0.0)
    inflow = ops.ParabolicInflow(0.41, unsteady=False)
    state = fom.FomState.at_rest(small_channel)
    for _ in range(3):
        v, *_ = fom.evolve_step(small_channel, state, params, inflow, state.time + params.dt)
        state = fom.efr_step(small_channel, state, params, inflow)
        assert np.array_equal(state.u_curr, v)
        assert np.array_equal(state.u_curr, state.v)


def test_replay_determinism(small_channel):
    params = fom.EfrParams(1.0, 1e-3, 0.01, 0.02, 0.01)
    inflow = ops.ParabolicInflow(0.41)

    def run():
        s = fom.FomState.at_rest(small_channel, 1.0)
        solver = fom.CoupledSolver()
        for _ in range(2):
            s = fom.efr_step(small_channel, s, params, inflow, solver)
        return s

    a, b = run(), run()
    c, _ = fom.run_fom(small_channel, params, inflow, 1.0, 1.02)
    for name in ("u_curr", "u_prev", "v", "p", "a", "vbar"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
        assert np.array_equal(getattr(a, name), getattr(c, name))


def test_history_shift(small_channel):
    params = fom.EfrParams(1.0, 1e-3, 0.01, 0.02, 0.01)
    inflow = ops.ParabolicInflow(0.41, unsteady=False)
    s1 = fom.efr_step(small_channel, fom.FomState.at_rest(small_channel), params, inflow)
    s2 = fom.efr_step(small_channel, s1, params, inflow)
    assert np.array_equal(s2.u_prev, s1.u_curr)
    assert s2.step == 2 and s2.time == pytest.approx(0.02)


# -- forces ------------------------------------------------------------------------

def test_drag_lift_trivial(small_channel):
    params = rest_params(small_channel)
    state = fom.FomState.at_rest(small_channel)
    assert fom.drag_lift(small_channel, state, params) == (0.0, 0.0)
    state.p[:] = 3.7
    cd, cl = fom.drag_lift(small_channel, state, params)
    assert abs(cd) <= 1e-12 and abs(cl) <= 1e-12


def test_drag_lift_requires_obstacle(straight_channel):
    params = rest_params(straight_channel)
    with pytest.raises(ValueError):
        fom.drag_lift(straight_channel, fom.FomState.at_rest(straight_channel), params)


def test_drag_of_uniform_stream_is_viscous(small_channel):
    # uniform stream past the square: only the two faces parallel to the flow feel shear
    params = fom.EfrParams(1.0, 2e-3, 0.01, 0.0, 0.0)
    u = np.tile([1.0, 0.0], (small_channel.n_cells, 1))
    cd, cl = fom.force_coefficients(small_channel, u, np.zeros(small_channel.n_cells), 1.0, 2e-3)
    expected = 0.0
    for f in small_channel.boundary_faces(OBSTACLE):
        ax, ay = small_channel.bf_area[f]
        if ax == 0.0:  # horizontal face: tangential velocity is the full stream
            expected += abs(ay) * 2e-3 * 1.0 / (small_channel.dy / 2)
    assert cd == pytest.approx(2.0 / 0.1 * expected, rel=1e-12)
    assert abs(cl) <= 1e-12
