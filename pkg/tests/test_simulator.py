import dataclasses

import numpy as np
import pytest

from conftest import scenario
from gaspipe.dynamics import NodalState, dae_residual
from gaspipe.errors import InfeasibleSteadyState, InvalidArgument
from gaspipe.profiles import constant
from gaspipe.simulator import Trajectory, periodic_orbit, residual_along, simulate, steady_state
from gaspipe.units import PSI_TO_PA
from oracles import steady_pipe_density


def node_positions_single(rn):
    """Distance (m) of every nonslack node from the slack end of the single pipe."""
    x = np.zeros(rn.M)
    for e in rn.edges:
        if e.head >= rn.n_slack:
            x[e.head - rn.n_slack] = (e.position + 1) * e.length
    return x


def test_steady_state_matches_closed_form(single):
    rn, c = single.rn, single.constants
    st = steady_state(rn, single, t=0.0)
    a = c.a
    rho_slack = 942.75 * PSI_TO_PA / a**2
    alpha = single.network.compressors[0].ratio.eval(0.0)
    x = node_positions_single(rn)
    exact = steady_pipe_density(alpha * rho_slack, 68.094, np.pi * 0.25 / 4, 0.011, 0.5, a, x)
    assert np.max(np.abs(st.rho * c.rho0 - exact) / exact) <= 1e-6
    # uniform flux carrying the withdrawal
    assert np.allclose(st.Phi * rn.X * c.flux_scale, 68.094, rtol=1e-10)


def test_steady_state_residual(fixture_name):
    avg = scenario(fixture_name).time_averaged()
    rn = avg.rn
    st = steady_state(rn, avg)
    r_mass, r_mom = dae_residual(rn, 0.0, st, np.zeros(rn.M), np.zeros(rn.n_slack), avg.d_at(0.0))
    assert max(np.max(np.abs(r_mass)), np.max(np.abs(r_mom))) < 1e-10


def test_infeasible_steady_state(single):
    heavy = single.with_withdrawal_scaled(2, 40.0)
    with pytest.raises(InfeasibleSteadyState):
        steady_state(heavy.rn, heavy.time_averaged())


def constant_version(sc):
    avg = sc.time_averaged()
    assert avg.is_constant()
    return avg


def test_constant_inputs_stay_at_steady_state(single):
    sc = constant_version(single)
    st = steady_state(sc.rn, sc)
    tr = simulate(sc.rn, sc, st.rho, t_out=np.linspace(0, sc.period, 5))
    assert np.allclose(tr.rho, st.rho[:, None], atol=1e-10)
    assert np.allclose(tr.Phi, st.Phi[:, None], atol=1e-10)


def test_periodic_orbit_is_periodic(four):
    t_out = np.linspace(0, four.period, 25)
    orbit = periodic_orbit(four.rn, four, tol=1e-8, t_out=t_out)
    assert np.max(np.abs(orbit.rho[:, -1] - orbit.rho[:, 0])) <= 1e-8
    assert np.allclose(orbit.s, four.s_at(t_out).T)
    assert np.allclose(orbit.d, four.d_at(t_out).T)


def test_orbit_consistent_with_dae(single):
    t_out = np.linspace(0, single.period, 481)
    orbit = periodic_orbit(single.rn, single, tol=1e-8, rel_tol=1e-5, t_out=t_out)
    k = 200
    h = t_out[1] - t_out[0]
    rho_dot = (orbit.rho[:, k + 1] - orbit.rho[:, k - 1]) / (2 * h)
    r_mass, r_mom = residual_along(single.rn, single, orbit, k, rho_dot)
    scale = np.max(np.abs(4 * single.rn.X * orbit.Phi[:, k]))
    assert np.max(np.abs(r_mom)) < 1e-9
    assert np.max(np.abs(r_mass)) / scale < 1e-2


def test_step_refinement_converges(single):
    t_out = np.linspace(0, single.period, 9)
    coarse = periodic_orbit(single.rn, single, tol=1e-9, rel_tol=1e-3, t_out=t_out)
    fine = periodic_orbit(single.rn, single, tol=1e-9, rel_tol=1e-4, t_out=t_out)
    finer = periodic_orbit(single.rn, single, tol=1e-9, rel_tol=1e-5, t_out=t_out)
    assert np.max(np.abs(finer.rho - fine.rho)) < np.max(np.abs(finer.rho - coarse.rho))


def test_fixed_step_is_reproducible(four):
    t_out = np.linspace(0, four.period, 13)
    a = simulate(four.rn, four, steady_state(four.rn, four.time_averaged()).rho, t_out=t_out, fixed_step=four.period / 96)
    b = simulate(four.rn, four, steady_state(four.rn, four.time_averaged()).rho, t_out=t_out, fixed_step=four.period / 96)
    assert a.equals(b)


def test_simulate_validation(single):
    rn = single.rn
    with pytest.raises(InvalidArgument):
        simulate(rn, single, np.ones(rn.M + 1))
    with pytest.raises(InvalidArgument):
        simulate(rn, single, -np.ones(rn.M))
    with pytest.raises(InvalidArgument):
        simulate(rn, single, np.ones(rn.M), rel_tol=0.0)
    with pytest.raises(InvalidArgument):
        simulate(rn, single, np.ones(rn.M), fixed_step=-1.0)


def test_trajectory_validation():
    with pytest.raises(InvalidArgument):
        Trajectory(np.array([0.0, 1.0]), np.ones((2, 3)), np.ones((1, 2)), np.ones((1, 2)), np.ones((2, 2)))
    with pytest.raises(InvalidArgument):
        Trajectory(np.array([1.0, 0.0]), np.ones((2, 2)), np.ones((1, 2)), np.ones((1, 2)), np.ones((2, 2)))


def test_withdrawal_increase_lowers_densities(four):
    t_out = np.linspace(0, four.period, 25)
    base = periodic_orbit(four.rn, four, tol=1e-9, t_out=t_out, fixed_step=four.period / 96)
    more = four.with_withdrawal_scaled(4, 1.05)
    pert = periodic_orbit(more.rn, more, tol=1e-9, t_out=t_out, fixed_step=four.period / 96)
    assert np.all(pert.rho <= base.rho + 1e-10)


def test_constant_slack_needed_for_balance_check(single):
    assert all(p.is_constant() for p in single.slack.values())
