import numpy as np
import pytest

from conftest import grid24, scenario, truth
from gaspipe.errors import InvalidArgument
from gaspipe.experiments import (
    ErrorReport,
    NoiseSpec,
    bias_from_estimates,
    bias_report,
    bias_study,
    builtin_fixture,
    error_report,
    run_one,
    summary_table,
    sweep,
    synthesize,
    worker_count,
)
from gaspipe.network import refine
from gaspipe.simulator import Trajectory
from gaspipe.units import GasConstants
from oracles import network_from_edges


def test_fixture_names():
    net, sc = builtin_fixture("single-pipe")
    assert sc.network is net
    with pytest.raises(InvalidArgument):
        builtin_fixture("three-node")


def test_single_pipe_fixture_values(single):
    c = single.constants
    assert c.a == 377.0 and c.T_horizon == 86400.0
    p = single.network.pipes[0]
    assert (p.length, p.diameter, p.friction) == (100e3, 0.5, 0.011)
    d = single.physical_withdrawals(np.linspace(0, single.period, 9))[:, 0] * c.flux_scale
    t = np.linspace(0, 1, 9)
    assert np.allclose(d, 68.094 * (1 + 0.1 * np.sin(4 * np.pi * t)))


def test_zero_noise_is_exact(single):
    tr = truth("single-pipe")
    m = synthesize(tr, single.rn, NoiseSpec(0.0, 3))
    P = single.rn.physical_nonslack
    assert np.array_equal(m.d_tilde, tr.d[P]) and np.array_equal(m.rho_tilde, tr.rho[P])


def test_same_seed_same_measurements(four):
    tr = truth("four-node")
    a = synthesize(tr, four.rn, NoiseSpec(1.5, 9))
    b = synthesize(tr, four.rn, NoiseSpec(1.5, 9))
    c = synthesize(tr, four.rn, NoiseSpec(1.5, 10))
    assert np.array_equal(a.d_tilde, b.d_tilde) and np.array_equal(a.rho_tilde, b.rho_tilde)
    assert not np.array_equal(a.d_tilde, c.d_tilde)


def test_noise_standard_deviation():
    ones = np.ones((1, 20000))
    tr = Trajectory(np.arange(20000.0), ones * 2.0, np.ones((1, 20000)), ones, ones * 68.094)

    class _RN:
        physical_nonslack = np.array([0])

    m = synthesize(tr, _RN, NoiseSpec(1.5, 0))
    assert np.std(m.d_tilde) == pytest.approx(1.02141, rel=0.03)
    assert np.mean(m.rho_tilde) == pytest.approx(2.0, rel=1e-3)


def test_noise_spec_validation():
    with pytest.raises(InvalidArgument):
        NoiseSpec(-1.0)


def test_error_report_identity(four):
    tr = truth("four-node")
    rep = error_report(tr, tr, four.rn, four.constants)
    assert all(getattr(rep, k) == 0.0 for k in ErrorReport.METRICS)


def tiny():
    net = network_from_edges(2, [(0, 1)], length=4000.0)
    rn = refine(net, 5000.0)
    return rn, GasConstants(a=1.0, ell0=4000.0, rho0=1.0)


def test_error_report_hand_computed():
    rn, c = tiny()
    X = rn.X[0]
    true_flow = np.array([0.5, 20.0])  # kg/s; the first is below the floor
    t = Trajectory(np.array([0.0, 1.0]), [[1.0, 1.0]], [true_flow / X], [[1.0, 1.0]], [[2.0, 4.0]])
    e = Trajectory(np.array([0.0, 1.0]), [[1.01, 0.98]], [true_flow * [1.5, 1.1] / X], [[1.0, 1.0]], [[2.2, 4.0]])
    rep = error_report(e, t, rn, c, flow_floor=1.0)
    assert rep.e_phi_max == pytest.approx(10.0) and rep.e_phi_avg == pytest.approx(10.0)
    assert rep.phi_samples == 1
    assert rep.e_p_max == pytest.approx(2.0) and rep.e_p_avg == pytest.approx(1.5)
    assert rep.e_d_max == pytest.approx(10.0) and rep.e_d_avg == pytest.approx(5.0)
    assert rep.e_p_max >= rep.e_p_avg and rep.e_d_max >= rep.e_d_avg


def test_error_report_all_flows_below_floor():
    rn, c = tiny()
    t = Trajectory(np.array([0.0, 1.0]), [[1.0, 1.0]], [[1e-3, 1e-3]], [[1.0, 1.0]], [[2.0, 4.0]])
    rep = error_report(t, t, rn, c)
    assert rep.e_phi_max is None and rep.e_phi_avg is None and rep.phi_samples == 0


def test_error_report_grid_mismatch(four):
    tr = truth("four-node")
    short = Trajectory(tr.grid[:3], tr.rho[:, :3], tr.Phi[:, :3], tr.s[:, :3], tr.d[:, :3])
    with pytest.raises(InvalidArgument):
        error_report(short, tr, four.rn, four.constants)


def test_run_one_state(single):
    r = run_one(single, grid24("single-pipe"), truth("single-pipe"), "state", NoiseSpec(0.5, 1))
    assert r.ok and r.errors is not None
    assert 0.0 < r.errors.e_p_avg < 1.0


def test_sweep_order_and_table(single):
    res = sweep(single, grid24("single-pipe"), truth("single-pipe"), "state", [1.0, 0.5], [0, 1], workers=1)
    assert [(r.level, r.seed) for r in res] == [(1.0, 0), (1.0, 1), (0.5, 0), (0.5, 1)]
    header, rows = summary_table(res)
    assert header[1:7] == list(ErrorReport.METRICS)
    assert [row[0] for row in rows] == [0.5, 1.0]
    assert all(row[-2] == 2 and row[-1] == 0 for row in rows)
    with pytest.raises(InvalidArgument):
        sweep(single, grid24("single-pipe"), truth("single-pipe"), "state", [], [0])


def test_parallel_sweep_matches_sequential(single):
    args = (single, grid24("single-pipe"), truth("single-pipe"), "state", [1.0], [3, 4])
    seq = sweep(*args, workers=1)
    par = sweep(*args, workers=2)
    assert [r.objective for r in seq] == [r.objective for r in par]


def test_worker_count(monkeypatch):
    monkeypatch.delenv("GASPIPE_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("GASPIPE_THREADS", "3")
    assert worker_count() == 3
    for bad in ("0", "x"):
        monkeypatch.setenv("GASPIPE_THREADS", bad)
        with pytest.raises(InvalidArgument):
            worker_count()


def test_bias_weights(four):
    net = four.network
    true = [p.friction for p in net.pipes]
    w, b, u = bias_from_estimates(net, [true, true])
    longest = int(np.argmax([p.length for p in net.pipes]))
    assert w[longest] == 1.0 and np.all((w > 0) & (w <= 1))
    assert np.allclose(b, 0.0) and np.allclose(u, 0.0)
    w, b, u = bias_from_estimates(net, [np.array(true) * 1.1, np.array(true) * 1.3])
    assert np.allclose(u, 0.2) and np.allclose(b, 0.2 * w)


def test_bias_study_zero_noise(single):
    rep = bias_study(single, NoiseSpec(0.0, 0), 2, grid=grid24("single-pipe"), truth=truth("single-pipe"), workers=1)
    assert rep.n_runs == 2 and rep.n_failed == 0
    assert abs(rep.bias[0]) < 1e-2
    assert rep.weights == [1.0]
    with pytest.raises(InvalidArgument):
        bias_study(single, NoiseSpec(0.0, 0), 1)


def test_bias_report_counts_failures(single):
    from gaspipe.experiments import RunResult

    ok = RunResult("joint", 1.0, 0, "converged", 1.0, 5, friction={1: 0.0121})
    bad = RunResult("joint", 1.0, 1, "iteration-limit", 1.0, 500)
    rep = bias_report(single.network, [ok, bad])
    assert rep.n_failed == 1 and rep.n_runs == 2
    assert rep.unweighted[0] == pytest.approx(0.1)
