"""Synthetic measurements, error metrics, estimation runs and Monte Carlo studies."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgument
from .fileio import ScenarioFile, load_document
from .fixtures import NAMES, fixture_document
from .network import Network
from .scenario import Scenario
from .simulator import Trajectory, periodic_orbit
from .solver import SolveOptions, SolveReport, default_start, solve
from .transcription import (
    MeasurementSet,
    TimeGrid,
    build_joint_estimation,
    build_noiseless_ivp,
    build_state_estimation,
)

log = logging.getLogger(__name__)

MODES = ("noiseless", "state", "joint")
TRUTH_SOURCES = ("simulator", "grid")


def builtin_fixture(name: str) -> tuple[Network, Scenario]:
    if name not in NAMES:
        raise InvalidArgument(f"unknown fixture {name!r}; choose from {', '.join(NAMES)}")
    sf = load_document(fixture_document(name))
    return sf.scenario.network, sf.scenario


def fixture_file(name: str) -> ScenarioFile:
    return load_document(fixture_document(name))


# --------------------------------------------------------------------------
# truth and measurements


def grid_truth(scenario: Scenario, grid: TimeGrid, source: str = "simulator", opts: SolveOptions | None = None):
    """Ground-truth trajectory on the estimation grid.

    ``"simulator"`` samples the adaptive periodic orbit; ``"grid"`` uses the exact
    solution of the discretized noiseless problem (zero discretization mismatch).
    """
    rn = scenario.rn
    if source == "simulator":
        t_out = np.append(grid.times, grid.T)
        orbit = periodic_orbit(rn, scenario, tol=1e-8, rel_tol=1e-4, t_out=t_out)
        keep = np.arange(grid.N)
        return Trajectory(grid.times.copy(), orbit.rho[:, keep], orbit.Phi[:, keep], orbit.s[:, keep], orbit.d[:, keep])
    if source == "grid":
        p = build_noiseless_ivp(rn, grid, scenario)
        res = solve(p, default_start(p, scenario), opts or SolveOptions(tol=1e-10))
        if not res.report.ok:
            raise RuntimeError(f"noiseless grid solve failed: {res.report.status}")
        return p.to_trajectory(res.x)
    raise InvalidArgument(f"truth source must be one of {TRUTH_SOURCES}")


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise with standard deviation ``level`` percent of the true value."""

    level: float
    seed: int = 0
    withdrawals: bool = True
    pressures: bool = True

    def __post_init__(self):
        if not self.level >= 0:
            raise InvalidArgument("noise level must be non-negative")


def synthesize(truth: Trajectory, rn, spec: NoiseSpec, W1=None, W2=None) -> MeasurementSet:
    """Noisy withdrawals and densities at the physical nonslack junctions.

    Densities and pressures are proportional, so relative noise on one is relative
    noise on the other. Withdrawal noise is drawn before density noise.
    """
    P = rn.physical_nonslack
    d = truth.d[P]
    rho = truth.rho[P]
    rng = np.random.default_rng(spec.seed)
    s = spec.level / 100.0
    xi_d = rng.standard_normal(d.shape)
    xi_r = rng.standard_normal(rho.shape)
    d_t = d * (1.0 + s * xi_d) if spec.withdrawals and s > 0 else d.copy()
    r_t = rho * (1.0 + s * xi_r) if spec.pressures and s > 0 else rho.copy()
    return MeasurementSet(d_t, r_t, W1, W2)


# --------------------------------------------------------------------------
# error metrics


@dataclass
class ErrorReport:
    """Relative errors in percent; flux metrics are None when every sample is below the floor."""

    e_d_max: float
    e_p_max: float
    e_phi_max: float | None
    e_d_avg: float
    e_p_avg: float
    e_phi_avg: float | None
    phi_samples: int = 0

    METRICS = ("e_d_max", "e_p_max", "e_phi_max", "e_d_avg", "e_p_avg", "e_phi_avg")

    def to_dict(self):
        return asdict(self)

    def row(self):
        return [getattr(self, k) for k in self.METRICS]


def _rel(est, true, mask=None):
    est = np.asarray(est, dtype=float)
    true = np.asarray(true, dtype=float)
    if mask is None:
        mask = true != 0
    if not np.any(mask):
        return None
    r = 100.0 * np.abs(est[mask] - true[mask]) / np.abs(true[mask])
    return r


def error_report(estimate: Trajectory, truth: Trajectory, rn, constants, flow_floor: float = 1.0) -> ErrorReport:
    """Compare an estimate with the truth on the same grid.

    Pressures and withdrawals are compared at physical nonslack junctions, fluxes
    on every refined edge, skipping samples whose true mass flow is below
    ``flow_floor`` kg/s. Withdrawal samples whose true value is exactly zero have
    no relative error and are skipped.
    """
    if estimate.rho.shape != truth.rho.shape or estimate.Phi.shape != truth.Phi.shape:
        raise InvalidArgument("estimate and truth are not on the same grid")
    P = rn.physical_nonslack
    ep = _rel(estimate.rho[P], truth.rho[P])
    ed = _rel(estimate.d[P], truth.d[P])
    flow_true = np.abs(truth.Phi) * rn.X[:, None] * constants.flux_scale  # kg/s
    ephi = _rel(estimate.Phi, truth.Phi, flow_true >= flow_floor)

    def mx(r):
        return float(np.max(r)) if r is not None else 0.0

    def av(r):
        return float(np.mean(r)) if r is not None else 0.0

    return ErrorReport(
        e_d_max=mx(ed),
        e_p_max=mx(ep),
        e_phi_max=None if ephi is None else mx(ephi),
        e_d_avg=av(ed),
        e_p_avg=av(ep),
        e_phi_avg=None if ephi is None else av(ephi),
        phi_samples=0 if ephi is None else int(ephi.size),
    )


# --------------------------------------------------------------------------
# estimation runs


@dataclass
class Estimate:
    problem: object
    x: np.ndarray
    report: SolveReport
    trajectory: Trajectory
    friction: dict | None = None


def estimate(
    scenario: Scenario,
    grid: TimeGrid,
    mode: str,
    meas: MeasurementSet | None = None,
    opts: SolveOptions | None = None,
    lambda_bounds=(0.5, 2.0),
    x0=None,
) -> Estimate:
    """Build and solve one transcribed problem; ``scenario`` supplies the known inputs."""
    rn = scenario.rn
    if mode == "noiseless":
        p = build_noiseless_ivp(rn, grid, scenario)
    elif mode == "state":
        p = build_state_estimation(rn, grid, scenario, meas)
    elif mode == "joint":
        p = build_joint_estimation(rn, grid, scenario, meas, lambda_bounds=lambda_bounds)
    else:
        raise InvalidArgument(f"mode must be one of {MODES}")
    if x0 is None:
        x0 = default_start(p, scenario)
    res = solve(p, x0, opts)
    fr = None
    if mode == "joint":
        fr = dict(zip(rn.pipe_ids, (float(v) for v in p.unpack(res.x)["friction"])))
    return Estimate(p, res.x, res.report, p.to_trajectory(res.x), fr)


@dataclass
class RunResult:
    mode: str
    level: float
    seed: int
    status: str
    objective: float
    iterations: int
    errors: ErrorReport | None = None
    friction: dict | None = None
    message: str = ""

    @property
    def ok(self):
        return self.status == "converged"

    def to_dict(self):
        out = asdict(self)
        if self.friction is not None:
            out["friction"] = {str(k): v for k, v in self.friction.items()}
        return out


def run_one(
    scenario: Scenario,
    grid: TimeGrid,
    truth: Trajectory,
    mode: str,
    noise: NoiseSpec,
    opts: SolveOptions | None = None,
    W1=None,
    W2=None,
    lambda_bounds=(0.5, 2.0),
    flow_floor: float = 1.0,
) -> RunResult:
    """Synthesize measurements, estimate, and score against ``truth``."""
    rn = scenario.rn
    meas = None if mode == "noiseless" else synthesize(truth, rn, noise, W1, W2)
    try:
        est = estimate(scenario, grid, mode, meas, opts, lambda_bounds)
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        log.warning("run level=%s seed=%s failed: %s", noise.level, noise.seed, exc)
        return RunResult(mode, noise.level, noise.seed, "numerical-failure", float("nan"), 0, message=str(exc))
    rep = est.report
    errs = error_report(est.trajectory, truth, rn, scenario.constants, flow_floor) if rep.ok else None
    return RunResult(mode, noise.level, noise.seed, rep.status, rep.objective, rep.iterations, errs, est.friction, rep.message)


def worker_count(default: int = 1) -> int:
    """Process count for Monte Carlo runs, from ``GASPIPE_THREADS``."""
    raw = os.environ.get("GASPIPE_THREADS")
    if raw is None or raw == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgument(f"GASPIPE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise InvalidArgument(f"GASPIPE_THREADS must be a positive integer, got {raw!r}")
    return n


def _run_job(args):
    return run_one(*args[0], **args[1])


def sweep(
    scenario: Scenario,
    grid: TimeGrid,
    truth: Trajectory,
    mode: str,
    levels,
    seeds,
    workers: int | None = None,
    **kw,
) -> list[RunResult]:
    """Every (level, seed) combination; results come back in (level, seed) order."""
    levels, seeds = list(levels), list(seeds)
    if not levels or not seeds:
        raise InvalidArgument("sweep needs at least one noise level and one seed")
    jobs = [((scenario, grid, truth, mode, NoiseSpec(float(lv), int(sd))), kw) for lv in levels for sd in seeds]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_job, jobs))


def summary_table(results: list[RunResult]):
    """One row per noise level: mean of each metric over converged runs, plus counts."""
    rows = []
    for lv in sorted({r.level for r in results}):
        runs = [r for r in results if r.level == lv]
        ok = [r for r in runs if r.ok and r.errors is not None]
        vals = []
        for k in ErrorReport.METRICS:
            xs = [getattr(r.errors, k) for r in ok if getattr(r.errors, k) is not None]
            vals.append(float(np.mean(xs)) if xs else float("nan"))
        rows.append([lv] + vals + [len(ok), len(runs) - len(ok)])
    header = ["level"] + list(ErrorReport.METRICS) + ["converged", "failed"]
    return header, rows


# --------------------------------------------------------------------------
# friction bias


@dataclass
class BiasReport:
    """Weighted relative bias of the friction estimates per physical pipe."""

    pipe_ids: list
    lengths: list  # m
    weights: list  # L / L_max
    bias: list  # weighted, fraction of the true value
    unweighted: list
    estimates: list = field(default_factory=list)  # one list per converged run
    n_runs: int = 0
    n_failed: int = 0

    def to_dict(self):
        return asdict(self)

    def rows(self):
        return [
            [pid, L, w, b, u] for pid, L, w, b, u in zip(self.pipe_ids, self.lengths, self.weights, self.bias, self.unweighted)
        ]


def bias_from_estimates(network: Network, estimates) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(weights, weighted bias, unweighted bias)`` from a runs x pipes array."""
    est = np.asarray(estimates, dtype=float)
    true = np.array([p.friction for p in network.pipes])
    L = np.array([p.length for p in network.pipes])
    w = L / L.max()
    unweighted = (est.mean(axis=0) - true) / true
    return w, unweighted * w, unweighted


def bias_study(
    scenario: Scenario,
    spec: NoiseSpec,
    n_runs: int,
    grid: TimeGrid | None = None,
    truth: Trajectory | None = None,
    workers: int | None = None,
    **kw,
) -> BiasReport:
    """Repeat joint estimation with seeds ``spec.seed .. spec.seed + n_runs - 1``."""
    if n_runs < 2:
        raise InvalidArgument("bias study needs at least two runs")
    grid = grid or TimeGrid(24, scenario.period)
    truth = truth if truth is not None else grid_truth(scenario, grid)
    seeds = [spec.seed + r for r in range(n_runs)]
    results = sweep(scenario, grid, truth, "joint", [spec.level], seeds, workers=workers, **kw)
    return bias_report(scenario.network, results)


def bias_report(network: Network, results: list[RunResult]) -> BiasReport:
    ok = [r for r in results if r.ok and r.friction is not None]
    ids = [p.id for p in network.pipes]
    L = [p.length for p in network.pipes]
    if not ok:
        nan = [float("nan")] * len(ids)
        w = list(np.array(L) / max(L))
        return BiasReport(ids, L, w, nan, nan, [], len(results), len(results))
    est = [[r.friction[i] for i in ids] for r in ok]
    w, b, u = bias_from_estimates(network, est)
    return BiasReport(ids, L, list(map(float, w)), list(map(float, b)), list(map(float, u)), est, len(results), len(results) - len(ok))
