"""Primal-dual interior-point method for the sparse least-squares NLPs.

Filter-free variant: log barrier on bounds, ``l1`` merit with Armijo backtracking
and up to four second-order corrections, monotone barrier decrease, inertia-corrected
symmetric indefinite factorization of the KKT matrix with QDLDL.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np
import qdldl
import scipy.sparse as sp

from .errors import GasPipeError, InvalidArgument
from .simulator import steady_state

log = logging.getLogger(__name__)

STATUSES = ("converged", "iteration-limit", "infeasible", "numerical-failure")


@dataclass
class SolveOptions:
    tol: float = 1e-4
    max_iter: int = 500
    # active bounds must be resolved tightly, independently of tol
    compl_tol: float = 1e-9
    mu_init: float = 0.1
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    tau_min: float = 0.995
    armijo: float = 1e-4
    max_backtracks: int = 40
    max_soc: int = 4
    kappa_soc: float = 0.99
    bound_push: float = 1e-2
    kappa_sigma: float = 1e10
    time_limit: float | None = None

    def __post_init__(self):
        if not self.tol > 0 or not self.compl_tol > 0:
            raise InvalidArgument("tolerances must be positive")
        if self.max_iter < 1:
            raise InvalidArgument("max_iter must be at least 1")


@dataclass
class SolveReport:
    status: str
    iterations: int
    objective: float
    stationarity: float
    feasibility: float
    complementarity: float
    wall_time: float
    mu: float
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "converged"

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


@dataclass
class SolveResult:
    x: np.ndarray
    y: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    report: SolveReport


class _Singular(Exception):
    pass


def _inertia_ok(f, K, n, m):
    d = np.asarray(f.factors()[1]).ravel()
    if np.any(d == 0) or not np.all(np.isfinite(d)):
        raise _Singular("zero pivot")
    return int(np.sum(d < 0)) == m


def _kkt_matrix(W, diag_x, J, diag_c):
    """Full symmetric KKT matrix with every diagonal entry stored explicitly."""
    n, m = W.shape[0], J.shape[0]
    K = sp.bmat([[W, J.T], [J, None]], format="coo")
    idx = np.arange(n + m)
    rows = np.concatenate([K.row, idx])
    cols = np.concatenate([K.col, idx])
    vals = np.concatenate([K.data, diag_x, diag_c])
    return sp.csc_matrix((vals, (rows, cols)), shape=(n + m, n + m))


def default_start(problem, scenario=None) -> np.ndarray:
    """Starting point for a transcribed problem.

    Densities and fluxes come from the steady state of the time-averaged scenario,
    replicated over the grid (uniform slack density and zero flux if that fails);
    withdrawals start at their measurements and friction factors at nominal.
    Densities are clipped into their bounds.
    """
    lay = problem.layout
    rn = problem.rn
    N = problem.grid.N
    rho = Phi = None
    if scenario is not None:
        try:
            ss = steady_state(rn, scenario.time_averaged())
            rho, Phi = ss.rho, ss.Phi
        except (GasPipeError, ArithmeticError, ValueError) as exc:
            log.warning("steady state for the starting point failed (%s); using a flat start", exc)
    if rho is None:
        rho = np.full(rn.M, float(np.mean(problem.s_grid)))
        Phi = np.zeros(rn.n_edges)
    d = None
    if lay.d_free:
        d = np.nan_to_num(problem.meas.d_tilde, nan=0.0, posinf=0.0, neginf=0.0)
    x = lay.pack(np.tile(rho[:, None], (1, N)), np.tile(Phi[:, None], (1, N)), d)
    return np.clip(x, problem.lb, problem.ub)


def _kkt_error(g, J, c, x, lb, ub, y, zl, zu, hl, hu, mu=0.0):
    stat = g + J.T @ y - zl + zu
    st = float(np.max(np.abs(stat))) if stat.size else 0.0
    feas = float(np.max(np.abs(c))) if c.size else 0.0
    comp = 0.0
    if np.any(hl):
        comp = max(comp, float(np.max(np.abs((x[hl] - lb[hl]) * zl[hl] - mu))))
    if np.any(hu):
        comp = max(comp, float(np.max(np.abs((ub[hu] - x[hu]) * zu[hu] - mu))))
    return st, feas, comp


def solve(problem, x0, opts: SolveOptions | None = None) -> SolveResult:
    opts = opts or SolveOptions()
    t_start = time.perf_counter()
    n, m = problem.n, problem.m
    lb, ub = problem.lb.astype(float), problem.ub.astype(float)
    if np.any(lb > ub):
        raise InvalidArgument("lower bound exceeds upper bound")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,) or not np.all(np.isfinite(x0)):
        raise InvalidArgument("starting point has wrong shape or non-finite entries")
    hl, hu = np.isfinite(lb), np.isfinite(ub)

    # push the start strictly inside the bounds
    x = x0.copy()
    k1 = opts.bound_push
    pl = np.where(hl, k1 * np.maximum(1.0, np.abs(lb)), 0.0)
    pu = np.where(hu, k1 * np.maximum(1.0, np.abs(ub)), 0.0)
    both = hl & hu
    width = np.where(both, ub - lb, np.inf)
    pl = np.where(both, np.minimum(pl, k1 * width), pl)
    pu = np.where(both, np.minimum(pu, k1 * width), pu)
    x = np.where(hl, np.maximum(x, lb + pl), x)
    x = np.where(hu, np.minimum(x, ub - pu), x)

    mu = opts.mu_init
    zl = np.where(hl, 1.0, 0.0)
    zu = np.where(hu, 1.0, 0.0)
    H0 = problem.objective_hessian()

    f = problem.objective(x)
    g = problem.gradient(x)
    c = problem.constraints(x)
    J = problem.jacobian(x)

    # least-squares multiplier estimate
    y = np.zeros(m)
    try:
        Kls = _kkt_matrix(sp.csc_matrix((n, n)), np.ones(n), J, np.full(m, -1e-10))
        rhs = np.concatenate([-(g - zl + zu), np.zeros(m)])
        sol = qdldl.Solver(Kls).solve(rhs)
        y_ls = sol[n:]
        if np.all(np.isfinite(y_ls)) and np.max(np.abs(y_ls), initial=0.0) <= 1e3:
            y = y_ls
    except (ValueError, RuntimeError):
        pass

    nu = 1.0
    delta_w_last = 0.0
    it = 0
    status, message = "iteration-limit", ""
    stall = 0
    eps_kkt = min(opts.tol, opts.compl_tol)
    mu_min = eps_kkt / 10.0

    def barrier(xv, fv):
        val = fv
        if np.any(hl):
            val -= mu * np.sum(np.log(xv[hl] - lb[hl]))
        if np.any(hu):
            val -= mu * np.sum(np.log(ub[hu] - xv[hu]))
        return val

    while True:
        st, feas, comp = _kkt_error(g, J, c, x, lb, ub, y, zl, zu, hl, hu)
        if st <= opts.tol and feas <= opts.tol and comp <= opts.compl_tol:
            status = "converged"
            break
        if it >= opts.max_iter:
            status = "iteration-limit"
            break
        if opts.time_limit is not None and time.perf_counter() - t_start > opts.time_limit:
            status, message = "iteration-limit", "time limit reached"
            break

        # barrier update (possibly several times)
        while mu > mu_min:
            e_mu = max(_kkt_error(g, J, c, x, lb, ub, y, zl, zu, hl, hu, mu))
            if e_mu > 10.0 * mu:
                break
            mu = max(mu_min, min(opts.kappa_mu * mu, mu**opts.theta_mu))
        tau = max(opts.tau_min, 1.0 - mu)

        sl = np.where(hl, x - lb, 1.0)
        su = np.where(hu, ub - x, 1.0)
        sigma = np.where(hl, zl / sl, 0.0) + np.where(hu, zu / su, 0.0)
        W = (H0 + problem.constraint_hessian(x, y)).tocsc()
        grad_phi = g - np.where(hl, mu / sl, 0.0) + np.where(hu, mu / su, 0.0)
        r_x = grad_phi + J.T @ y

        # inertia correction
        delta_w, delta_c = 0.0, 0.0
        fac = None
        for attempt in range(60):
            K = _kkt_matrix(W, sigma + delta_w, J, np.full(m, -delta_c))
            try:
                fac = qdldl.Solver(K)
                ok = _inertia_ok(fac, K, n, m)
            except (_Singular, ValueError, RuntimeError):
                fac, ok = None, False
                if delta_c == 0.0:
                    delta_c = 1e-8 * mu**0.25
            if ok:
                break
            if delta_w == 0.0:
                delta_w = 1e-4 if delta_w_last == 0.0 else max(1e-20, delta_w_last / 3.0)
            else:
                delta_w *= 100.0 if delta_w_last == 0.0 else 8.0
            if delta_w > 1e40:
                break
        if fac is None or not ok:
            status, message = "numerical-failure", "could not correct KKT inertia"
            break
        if delta_w > 0:
            delta_w_last = delta_w

        def kkt_solve(rx, rc):
            sol = fac.solve(np.concatenate([-rx, -rc]))
            return sol[:n], sol[n:]

        dx, dy = kkt_solve(r_x, c)
        if not np.all(np.isfinite(dx)):
            status, message = "numerical-failure", "non-finite search direction"
            break
        dzl = np.where(hl, mu / sl - zl - zl / sl * dx, 0.0)
        dzu = np.where(hu, mu / su - zu + zu / su * dx, 0.0)

        def max_step(v, dv, mask):
            neg = mask & (dv < 0)
            if not np.any(neg):
                return 1.0
            return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))

        a_max = min(max_step(sl, dx, hl), max_step(su, -dx, hu))
        a_z = min(max_step(zl, dzl, hl), max_step(zu, dzu, hu))

        # l1 merit
        y_new = y + dy
        nu = max(nu, float(np.max(np.abs(y_new), initial=0.0)) * 1.1 + 1e-8)
        c1 = float(np.sum(np.abs(c)))
        phi0 = barrier(x, f) + nu * c1
        dphi = float(grad_phi @ dx) - nu * c1
        if dphi > 0:
            # no descent for the merit (indefinite curvature on the tangent space); raise penalty
            nu = max(nu, 2.0 * (float(grad_phi @ dx) + 1e-12) / max(c1, 1e-300))
            phi0 = barrier(x, f) + nu * c1
            dphi = float(grad_phi @ dx) - nu * c1

        alpha = a_max
        accepted = False
        x_new = None
        for bt in range(opts.max_backtracks):
            xt = x + alpha * dx
            ft = problem.objective(xt)
            ct = problem.constraints(xt)
            phit = barrier(xt, ft) + nu * float(np.sum(np.abs(ct)))
            if np.isfinite(phit) and phit <= phi0 + opts.armijo * alpha * min(dphi, 0.0):
                accepted, x_new, f_new, c_new = True, xt, ft, ct
                break
            ct1 = float(np.sum(np.abs(ct)))
            if bt == 0 and ct1 >= c1:
                # second-order corrections on the first rejected trial
                c_soc, a_soc, prev = alpha * c + ct, alpha, ct1
                for _ in range(opts.max_soc):
                    dx_soc, _ = kkt_solve(r_x, c_soc)
                    a_soc_new = min(max_step(sl, dx_soc, hl), max_step(su, -dx_soc, hu))
                    xs = x + a_soc_new * dx_soc
                    fs = problem.objective(xs)
                    cs = problem.constraints(xs)
                    cs1 = float(np.sum(np.abs(cs)))
                    phis = barrier(xs, fs) + nu * cs1
                    if np.isfinite(phis) and phis <= phi0 + opts.armijo * a_soc_new * min(dphi, 0.0):
                        accepted, x_new, f_new, c_new = True, xs, fs, cs
                        alpha = a_soc_new
                        break
                    if not np.isfinite(cs1) or cs1 > opts.kappa_soc * prev:
                        break
                    c_soc, a_soc, prev = a_soc_new * c_soc + cs, a_soc_new, cs1
                if accepted:
                    break
            alpha *= 0.5
        if not accepted:
            stall += 1
            # take a tiny step anyway to escape, give up if it keeps happening
            if stall > 5:
                status = "infeasible" if feas > opts.tol else "numerical-failure"
                message = "line search failed repeatedly"
                break
            alpha = max(alpha, 1e-8 * a_max)
            x_new = x + alpha * dx
            f_new = problem.objective(x_new)
            c_new = problem.constraints(x_new)
        else:
            stall = 0

        x = x_new
        f, c = f_new, c_new
        y = y + alpha * dy
        zl = zl + a_z * dzl
        zu = zu + a_z * dzu
        # keep multipliers consistent with the primal-dual Hessian
        sl = np.where(hl, x - lb, 1.0)
        su = np.where(hu, ub - x, 1.0)
        ks = opts.kappa_sigma
        zl = np.where(hl, np.clip(zl, mu / (ks * sl), ks * mu / sl), 0.0)
        zu = np.where(hu, np.clip(zu, mu / (ks * su), ks * mu / su), 0.0)
        g = problem.gradient(x)
        J = problem.jacobian(x)
        it += 1
        if log.isEnabledFor(logging.DEBUG):
            log.debug(
                "iter %d f=%.6e feas=%.2e stat=%.2e mu=%.1e alpha=%.2e amax=%.2e |dx|=%.1e dphi=%.2e nu=%.1e dw=%.1e",
                it, f, feas, st, mu, alpha, a_max, np.max(np.abs(dx)), dphi, nu, delta_w,
            )

    st, feas, comp = _kkt_error(g, J, c, x, lb, ub, y, zl, zu, hl, hu)
    rep = SolveReport(
        status=status,
        iterations=it,
        objective=float(f),
        stationarity=st,
        feasibility=feas,
        complementarity=comp,
        wall_time=time.perf_counter() - t_start,
        mu=mu,
        message=message,
    )
    log.info("solver %s after %d iterations (f=%.6e, feas=%.1e)", status, it, f, feas)
    return SolveResult(x=x, y=y, z_lower=zl, z_upper=zu, report=rep)
