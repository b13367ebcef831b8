import numpy as np
import pytest
import scipy.sparse as sp

from conftest import grid24, scenario, truth
from gaspipe.errors import InvalidArgument
from gaspipe.experiments import NoiseSpec, synthesize
from gaspipe.simulator import steady_state
from gaspipe.solver import SolveOptions, default_start, solve
from gaspipe.transcription import (
    MeasurementSet,
    TimeGrid,
    build_joint_estimation,
    build_noiseless_ivp,
    build_state_estimation,
)
from oracles import colored_fd_jacobian


def measurements(name, level=1.0, seed=0):
    sc = scenario(name)
    return synthesize(truth(name), sc.rn, NoiseSpec(level, seed))


def problem(name, kind):
    sc = scenario(name)
    g = grid24(name)
    if kind == "noiseless":
        return build_noiseless_ivp(sc.rn, g, sc)
    if kind == "state":
        return build_state_estimation(sc.rn, g, sc, measurements(name))
    return build_joint_estimation(sc.rn, g, sc, measurements(name))


def random_interior(p, rng, spread=0.05):
    x0 = default_start(p, scenario_for(p))
    x = x0 * (1 + spread * rng.standard_normal(x0.size)) + 0.01 * rng.standard_normal(x0.size)
    lo = np.where(np.isfinite(p.lb), p.lb, -np.inf)
    hi = np.where(np.isfinite(p.ub), p.ub, np.inf)
    width = np.where(np.isfinite(lo) & np.isfinite(hi), hi - lo, 1.0)
    return np.clip(x, lo + 1e-3 * width, hi - 1e-3 * width)


def scenario_for(p):
    for name in ("single-pipe", "four-node", "twenty-five-node"):
        if scenario(name).rn is p.rn:
            return scenario(name)
    return None


def test_time_grid():
    g = TimeGrid(24, 2.0)
    assert g.dt == pytest.approx(2.0 / 24) and g.times[0] == 0.0 and g.times.size == 24
    with pytest.raises(InvalidArgument):
        TimeGrid(4, 1.0)
    with pytest.raises(InvalidArgument):
        TimeGrid(24, 0.0)


def test_variable_counts(single):
    p = problem("single-pipe", "state")
    assert p.n == 24 * (20 + 20 + 1) == 984
    q = problem("single-pipe", "noiseless")
    assert q.n == q.m == 24 * 40
    j = problem("single-pipe", "joint")
    assert j.n == 985


def test_joint_friction_bounds():
    p = problem("single-pipe", "joint")
    lay = p.layout
    i = lay.friction_index(0)
    lo = lay.unpack(p.lb)["friction"][0]
    hi = lay.unpack(p.ub)["friction"][0]
    assert (lo, hi) == (pytest.approx(0.0055), pytest.approx(0.022))
    assert np.isfinite(p.lb[i]) and np.isfinite(p.ub[i])
    assert problem("twenty-five-node", "joint").layout.n_friction == 24
    sc = scenario("single-pipe")
    with pytest.raises(InvalidArgument):
        build_joint_estimation(sc.rn, grid24("single-pipe"), sc, measurements("single-pipe"), lambda_bounds=(1.0, 2.0))


def test_circular_indexing():
    lay = problem("four-node", "state").layout
    for i in range(lay.M):
        assert lay.rho_index(lay.N, i) == lay.rho_index(0, i)
        assert lay.rho_index(-1, i) == lay.rho_index(lay.N - 1, i)
    assert lay.phi_index(lay.N, 3) == lay.phi_index(0, 3)


def test_pack_unpack_round_trip():
    p = problem("four-node", "joint")
    rng = np.random.default_rng(0)
    x = rng.standard_normal(p.n)
    u = p.unpack(x)
    y = p.layout.pack(u["rho"], u["Phi"], u["d"], u["friction"])
    assert np.allclose(x, y, rtol=1e-14, atol=1e-15)
    assert p.layout.describe(p.layout.friction_index(2)) == ("friction", 2, None)


def test_density_bounds_only():
    p = problem("single-pipe", "state")
    lay = p.layout
    rn = p.rn
    nodes = rn.nodes[rn.n_slack :]
    for i in (0, 5):
        k = lay.rho_index(3, i)
        assert p.lb[k] == pytest.approx(nodes[i].rho_min) and p.ub[k] == pytest.approx(nodes[i].rho_max)
    assert np.all(~np.isfinite(p.lb[lay.n_rho : lay.n_rho + lay.n_phi]))


@pytest.mark.parametrize("kind", ["noiseless", "state", "joint"])
def test_jacobian_and_gradient_fd(fixture_name, kind):
    p = problem(fixture_name, kind)
    rng = np.random.default_rng(11)
    for _ in range(3):
        x = random_interior(p, rng)
        J = p.jacobian(x)
        Jfd, leak = colored_fd_jacobian(p.constraints, x, J)
        scale = max(1.0, abs(J).max())
        assert abs(J - Jfd).max() <= 1e-6 * scale
        assert leak <= 1e-6 * scale
        g = p.gradient(x)
        e = rng.standard_normal(p.n)
        h = 1e-6
        fd = (p.objective(x + h * e) - p.objective(x - h * e)) / (2 * h)
        assert abs(fd - g @ e) <= 1e-6 * max(1.0, abs(g @ e), np.abs(g).sum())


def test_constraint_hessian_fd():
    p = problem("four-node", "joint")
    rng = np.random.default_rng(3)
    x = random_interior(p, rng)
    lam = rng.standard_normal(p.m)
    H = p.constraint_hessian(x, lam)
    e = rng.standard_normal(p.n)
    h = 1e-6
    fd = (p.jacobian(x + h * e).T @ lam - p.jacobian(x - h * e).T @ lam) / (2 * h)
    assert np.allclose(H @ e, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())
    assert abs(H - H.T).max() < 1e-12


def test_objective_hessian_matches_gradient():
    p = problem("single-pipe", "state")
    rng = np.random.default_rng(4)
    x = random_interior(p, rng)
    e = rng.standard_normal(p.n)
    h = 1e-5
    fd = (p.gradient(x + h * e) - p.gradient(x - h * e)) / (2 * h)
    assert np.allclose(p.objective_hessian() @ e, fd, rtol=1e-7, atol=1e-8 * np.abs(fd).max())


def test_sparsity_pattern(fixture_name):
    p = problem(fixture_name, "state")
    x = default_start(p, scenario(fixture_name))
    assert p.sparsity_ok(x)


def test_noiseless_objective_is_zero():
    p = problem("four-node", "noiseless")
    x = np.random.default_rng(0).standard_normal(p.n)
    assert p.objective(x) == 0.0 and np.all(p.gradient(x) == 0.0)


def test_zero_density_weight_ignores_density_measurements(single):
    rn = single.rn
    base = measurements("single-pipe")
    m1 = MeasurementSet(base.d_tilde, base.rho_tilde, None, np.zeros(1))
    m2 = MeasurementSet(base.d_tilde, base.rho_tilde * 1.3, None, np.zeros(1))
    g = grid24("single-pipe")
    p1 = build_state_estimation(rn, g, single, m1)
    p2 = build_state_estimation(rn, g, single, m2)
    x = random_interior(p1, np.random.default_rng(1))
    assert p1.objective(x) == p2.objective(x)


def test_measurement_shape_checked(single):
    m = MeasurementSet(np.ones((1, 12)), np.ones((1, 12)))
    with pytest.raises(InvalidArgument):
        build_state_estimation(single.rn, grid24("single-pipe"), single, m)
    with pytest.raises(InvalidArgument):
        MeasurementSet(np.ones((1, 4)), np.ones((1, 5)))
    with pytest.raises(InvalidArgument):
        MeasurementSet(np.ones((1, 4)), np.ones((1, 4)), W1=-np.ones(1))


def test_constant_inputs_steady_state_is_feasible(single):
    avg = single.time_averaged()
    rn = avg.rn
    p = build_noiseless_ivp(rn, grid24("single-pipe"), avg)
    st = steady_state(rn, avg)
    x = p.layout.pack(np.tile(st.rho[:, None], (1, 24)), np.tile(st.Phi[:, None], (1, 24)))
    assert np.max(np.abs(p.constraints(x))) < 1e-10
    assert np.allclose(default_start(p, avg), x)


def test_noiseless_solution_unique(four):
    p = problem("four-node", "noiseless")
    rng = np.random.default_rng(7)
    opts = SolveOptions(tol=1e-10)
    sols = []
    for _ in range(2):
        x0 = random_interior(p, rng, spread=0.1)
        res = solve(p, x0, opts)
        assert res.report.ok
        sols.append(res.x)
    assert np.max(np.abs(sols[0] - sols[1])) < 1e-7


def test_fixed_friction_reduces_to_state_estimation(single):
    rn = single.rn
    g = grid24("single-pipe")
    meas = measurements("single-pipe", 1.0, 2)
    opts = SolveOptions(tol=1e-9)
    ps = build_state_estimation(rn, g, single, meas)
    pj = build_joint_estimation(rn, g, single, meas, lambda_bounds=(1 - 1e-12, 1 + 1e-12))
    xs = solve(ps, default_start(ps, single), opts)
    xj = solve(pj, default_start(pj, single), opts)
    assert xs.report.ok and xj.report.ok
    assert xj.report.objective == pytest.approx(xs.report.objective, rel=1e-6)
    assert np.allclose(xj.x[: ps.n], xs.x, atol=1e-7)


def test_to_trajectory_places_withdrawals(four):
    p = problem("four-node", "state")
    x = default_start(p, four)
    tr = p.to_trajectory(x)
    aux = np.setdiff1d(np.arange(four.rn.M), four.rn.physical_nonslack)
    assert np.all(tr.d[aux] == 0.0)
    assert np.allclose(tr.d[four.rn.physical_nonslack], p.meas.d_tilde)
    assert isinstance(p.jacobian(x), sp.spmatrix) or sp.issparse(p.jacobian(x))
