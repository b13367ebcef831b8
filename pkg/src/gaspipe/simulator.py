"""Ground-truth forward simulation of the network DAE.

Implicit Euler with step-doubling error control; each step solves the coupled
mass/momentum system for ``(rho, Phi)`` at the new time by Newton's method with
the sparse analytic Jacobian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import NodalState, boundary_densities, dae_residual, storage_matrix
from .errors import InfeasibleSteadyState, IntegrationFailure, InvalidArgument, NoPeriodicOrbit
from .network import RefinedNetwork
from .scenario import Scenario

log = logging.getLogger(__name__)

_PHI_FLOOR = 1e-8


@dataclass
class Trajectory:
    """States on a time grid; arrays are (rows = nodes/edges, columns = times)."""

    grid: np.ndarray
    rho: np.ndarray
    Phi: np.ndarray
    s: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        n = self.grid.size
        for name in ("rho", "Phi", "s", "d"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if arr.shape[1] != n:
                raise InvalidArgument(f"trajectory {name} has {arr.shape[1]} columns for {n} grid times")
            setattr(self, name, arr)
        if n > 1 and np.any(np.diff(self.grid) <= 0):
            raise InvalidArgument("trajectory grid must be strictly increasing")

    @property
    def rhoN(self):
        return np.vstack([self.s, self.rho])

    def state(self, k) -> NodalState:
        return NodalState(self.rho[:, k].copy(), self.s[:, k].copy(), self.Phi[:, k].copy())

    def sample(self, times, atol=1e-9):
        """Columns at the requested times (which must be grid times)."""
        idx = []
        for t in np.atleast_1d(times):
            k = int(np.argmin(np.abs(self.grid - t)))
            if abs(self.grid[k] - t) > atol * max(1.0, abs(t)):
                raise InvalidArgument(f"time {t} is not on the trajectory grid")
            idx.append(k)
        idx = np.array(idx)
        return Trajectory(self.grid[idx], self.rho[:, idx], self.Phi[:, idx], self.s[:, idx], self.d[:, idx])

    def equals(self, other) -> bool:
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("grid", "rho", "Phi", "s", "d")
        )


class _StepSystem:
    """Implicit system for one step ``t0 -> t1`` (or a steady state when ``h`` is None)."""

    def __init__(self, rn: RefinedNetwork, scenario: Scenario):
        self.rn = rn
        self.sc = scenario
        self.C = storage_matrix(rn)
        self.AdX = (rn.A_d @ sp.diags(rn.X)).tocsr()
        self.LK = rn.lam * rn.K
        nb = rn.n_slack
        E = rn.n_edges
        # nonslack incidence of tails/heads for the Jacobian of rho_in/rho_out
        self.tail_ns = rn.tail >= nb
        self.head_ns = rn.head >= nb
        self.cols_t = rn.tail[self.tail_ns] - nb
        self.rows_t = np.arange(E)[self.tail_ns]
        self.cols_h = rn.head[self.head_ns] - nb
        self.rows_h = np.arange(E)[self.head_ns]
        self._build_pattern()

    def _build_pattern(self):
        """Fixed CSC pattern of the step Jacobian; only values change between calls."""
        M, E = self.rn.M, self.rn.n_edges
        C = self.C.tocoo()
        # storage block C @ Js: one triplet per (C entry, tail/head of its edge)
        ct_mask = self.tail_ns[C.col]
        ch_mask = self.head_ns[C.col]
        self._c_t = (C.data[ct_mask], C.col[ct_mask])
        self._c_h = (C.data[ch_mask], C.col[ch_mask])
        AdX = self.AdX.tocoo()
        e = np.arange(E)
        rows = np.concatenate([
            C.row[ct_mask], C.row[ch_mask],
            AdX.row,
            M + self.rows_t, M + self.rows_h,
            M + e,
        ])
        cols = np.concatenate([
            self.rn.tail[C.col[ct_mask]] - self.rn.n_slack, self.rn.head[C.col[ch_mask]] - self.rn.n_slack,
            M + AdX.col,
            self.cols_t, self.cols_h,
            M + e,
        ])
        self._adx_vals = -4.0 * AdX.data
        n = M + E
        lin = cols.astype(np.int64) * n + rows
        uniq, self._inv = np.unique(lin, return_inverse=True)
        self._indices = (uniq % n).astype(np.int32)
        counts = np.bincount(uniq // n, minlength=n)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self._nnz = uniq.size
        self._n = n

    def inputs(self, t):
        rn = self.rn
        ain, aout = rn.alphas(t)
        return ain, aout, self.sc.s_at(t, rn), self.sc.d_at(t, rn)

    def sigma(self, rho, inp):
        ain, aout, s, _ = inp
        rin, rout = boundary_densities(self.rn, np.concatenate([s, rho]), ain, aout)
        return rin, rout

    def residual(self, z, inp1, h=None, sigma0=None):
        rn = self.rn
        M = rn.M
        rho, Phi = z[:M], z[M:]
        rin, rout = self.sigma(rho, inp1)
        d = inp1[3]
        flow = 4.0 * (self.AdX @ Phi - d)
        if h is None:
            r_mass = -flow
        else:
            r_mass = self.C @ ((rin + rout) - sigma0) / h - flow
        r_mom = self.LK * Phi * np.abs(Phi) + (rout - rin) * (rout + rin)
        return np.concatenate([r_mass, r_mom])

    def jacobian(self, z, inp1, h=None):
        M = self.rn.M
        Phi = z[M:]
        ain, aout, _, _ = inp1
        rin, rout = self.sigma(z[:M], inp1)
        inv_h = 0.0 if h is None else 1.0 / h
        vals = np.concatenate([
            self._c_t[0] * ain[self._c_t[1]] * inv_h,
            self._c_h[0] * aout[self._c_h[1]] * inv_h,
            self._adx_vals,
            -2.0 * rin[self.rows_t] * ain[self.rows_t],
            2.0 * rout[self.rows_h] * aout[self.rows_h],
            2.0 * self.LK * np.maximum(np.abs(Phi), _PHI_FLOOR),
        ])
        data = np.bincount(self._inv, weights=vals, minlength=self._nnz)
        return sp.csc_matrix((data, self._indices, self._indptr), shape=(self._n, self._n))

    def newton(self, z, inp1, h=None, sigma0=None, tol=1e-12, max_iter=30, damped=False):
        M = self.rn.M
        F = self.residual(z, inp1, h, sigma0)
        for it in range(max_iter):
            J = self.jacobian(z, inp1, h)
            try:
                dz = spla.spsolve(J, -F)
            except RuntimeError:
                return z, False, it
            if not np.all(np.isfinite(dz)):
                return z, False, it
            step = 1.0
            if damped:
                f0 = F @ F
                while step > 1e-8:
                    zt = z + step * dz
                    if np.all(zt[:M] > 0):
                        Ft = self.residual(zt, inp1, h, sigma0)
                        if Ft @ Ft <= (1 - 1e-4 * step) * f0:
                            break
                    step *= 0.5
                else:
                    return z, False, it
            z = z + step * dz
            F = self.residual(z, inp1, h, sigma0)
            if np.any(z[:M] <= 0):
                return z, False, it
            scale_rho = max(1.0, np.max(np.abs(z[:M])))
            scale_phi = max(1e-6, np.max(np.abs(z[M:])) if z.size > M else 1e-6)
            small = np.max(np.abs(step * dz[:M])) <= tol * scale_rho and (
                z.size == M or np.max(np.abs(step * dz[M:])) <= tol * scale_phi
            )
            if small and step == 1.0:
                return z, True, it + 1
        return z, False, max_iter


def _initial_guess(rn: RefinedNetwork, scenario: Scenario, t):
    """Flows from the least-norm solution of the steady mass balance, densities from slack."""
    d = scenario.d_at(t, rn)
    AdX = (rn.A_d @ sp.diags(rn.X)).tocsr()
    Phi = spla.lsqr(AdX, d, atol=1e-14, btol=1e-14, iter_lim=10 * (rn.n_edges + 10))[0]
    s = scenario.s_at(t, rn)
    rho = np.full(rn.M, float(np.mean(s)))
    return rho, Phi


def steady_state(rn: RefinedNetwork, scenario: Scenario, t: float = 0.0, guess=None) -> NodalState:
    """Solve the DAE with time derivatives set to zero, inputs frozen at ``t``."""
    sys = _StepSystem(rn, scenario)
    inp = sys.inputs(t)
    if guess is None:
        rho, Phi = _initial_guess(rn, scenario, t)
        # march densities along the edges from the slack so Newton starts near the solution
        rho = _march_densities(rn, inp, Phi, rho)
    else:
        rho, Phi = guess.rho.copy(), guess.Phi.copy()
    z0 = np.concatenate([rho, Phi])
    z, ok, it = sys.newton(z0, inp, h=None, tol=1e-14, max_iter=50, damped=True)
    F = sys.residual(z, inp)
    if not ok and np.max(np.abs(F)) > 1e-10:
        raise InfeasibleSteadyState(f"steady-state Newton did not converge (|F|={np.max(np.abs(F)):.3e})")
    if np.max(np.abs(F)) > 1e-10:
        raise InfeasibleSteadyState(f"steady-state residual {np.max(np.abs(F)):.3e} above 1e-10")
    return NodalState(z[: rn.M], inp[2].copy(), z[rn.M :])


def _march_densities(rn, inp, Phi, rho_default):
    """Propagate squared densities outward from the slack nodes (exact on trees)."""
    ain, aout, s, _ = inp
    nb = rn.n_slack
    rhoN = np.full(rn.n_nodes, np.nan)
    rhoN[:nb] = s
    drop = rn.lam * rn.K * Phi * np.abs(Phi)
    changed = True
    while changed:
        changed = False
        for k in range(rn.n_edges):
            i, j = rn.tail[k], rn.head[k]
            if np.isnan(rhoN[j]) and not np.isnan(rhoN[i]):
                v = (ain[k] * rhoN[i]) ** 2 - drop[k]
                rhoN[j] = np.sqrt(max(v, 1e-4)) / aout[k]
                changed = True
            elif np.isnan(rhoN[i]) and not np.isnan(rhoN[j]):
                v = (aout[k] * rhoN[j]) ** 2 + drop[k]
                rhoN[i] = np.sqrt(max(v, 1e-4)) / ain[k]
                changed = True
    rho = rhoN[nb:]
    return np.where(np.isnan(rho), rho_default, rho)


def simulate(
    rn: RefinedNetwork,
    scenario: Scenario,
    rho_init,
    rel_tol: float = 1e-4,
    t_out=None,
    t0: float = 0.0,
    h_init: float | None = None,
    max_step: float | None = None,
    Phi_init=None,
    fixed_step: float | None = None,
) -> Trajectory:
    """Integrate from ``t0`` over one horizon (or up to ``max(t_out)``).

    ``t_out`` defaults to 97 evenly spaced times covering ``[t0, t0 + T]``. The
    step size is chosen so every step lands on the output times. With
    ``fixed_step`` the error control is switched off and plain implicit Euler
    steps of at most that size are taken, so two runs share one step sequence.
    """
    rho_init = np.asarray(rho_init, dtype=float)
    if rho_init.shape != (rn.M,) or np.any(rho_init <= 0):
        raise InvalidArgument("rho_init must be positive with one entry per nonslack node")
    if not rel_tol > 0:
        raise InvalidArgument("rel_tol must be positive")
    T = scenario.period
    if t_out is None:
        t_out = t0 + np.linspace(0.0, T, 97)
    t_out = np.asarray(t_out, dtype=float)
    if t_out[0] != t0:
        raise InvalidArgument("first output time must equal t0")
    t_end = float(t_out[-1])
    span = t_end - t0 if t_end > t0 else T
    if fixed_step is not None and not fixed_step > 0:
        raise InvalidArgument("fixed_step must be positive")
    h = h_init if h_init is not None else span / 1000.0
    if fixed_step is not None:
        h = fixed_step
    hmax = max_step if max_step is not None else span
    h_min = T * 1e-10

    sys = _StepSystem(rn, scenario)
    inp = sys.inputs(t0)
    if Phi_init is None:
        # consistent algebraic state at t0 for the given densities
        Phi0 = _consistent_flux(rn, inp, rho_init)
    else:
        Phi0 = np.asarray(Phi_init, dtype=float)
    z = np.concatenate([rho_init, Phi0])
    rin, rout = sys.sigma(z[: rn.M], inp)
    sigma0 = rin + rout

    cols_rho, cols_phi = [z[: rn.M].copy()], [z[rn.M :].copy()]
    t = t0
    out_i = 1
    n_steps = 0
    while out_i < t_out.size:
        target = t_out[out_i]
        h = min(h, hmax, target - t)
        if h < h_min:
            raise IntegrationFailure(f"step size below {h_min:.3e} at t={t:.6g}")
        t1 = t + h
        if target - t1 <= 1e-12 * max(1.0, abs(target)):
            t1 = target
            h = target - t
        inp1 = sys.inputs(t1)
        if fixed_step is not None:
            z, ok, _ = sys.newton(z, inp1, h, sigma0)
            if not ok:
                raise IntegrationFailure(f"implicit Euler step failed at t={t:.6g}")
            t = t1
            rin, rout = sys.sigma(z[: rn.M], inp1)
            sigma0 = rin + rout
            n_steps += 1
            if t == target:
                cols_rho.append(z[: rn.M].copy())
                cols_phi.append(z[rn.M :].copy())
                out_i += 1
            h = fixed_step
            continue
        z_full, ok1, _ = sys.newton(z, inp1, h, sigma0)
        tm = t + 0.5 * h
        inpm = sys.inputs(tm)
        z_half, ok2, _ = sys.newton(z, inpm, 0.5 * h, sigma0)
        ok3 = False
        if ok2:
            rin_m, rout_m = sys.sigma(z_half[: rn.M], inpm)
            z_two, ok3, _ = sys.newton(z_half, inp1, 0.5 * h, rin_m + rout_m)
        if not (ok1 and ok2 and ok3):
            h *= 0.25
            continue
        rho_a, rho_b = z_full[: rn.M], z_two[: rn.M]
        err = np.max(np.abs(rho_a - rho_b) / (rel_tol * np.abs(rho_b) + 1e-14))
        if err <= 1.0:
            t = t1
            z = z_two
            rin, rout = sys.sigma(z[: rn.M], inp1)
            sigma0 = rin + rout
            n_steps += 1
            if t == target:
                cols_rho.append(z[: rn.M].copy())
                cols_phi.append(z[rn.M :].copy())
                out_i += 1
        factor = 0.9 / np.sqrt(max(err, 1e-10))
        h = h * min(5.0, max(0.2, factor))
    log.debug("simulate: %d accepted steps", n_steps)
    return Trajectory(
        t_out,
        np.array(cols_rho).T,
        np.array(cols_phi).T,
        np.atleast_2d(scenario.s_at(t_out, rn).T).reshape(rn.n_slack, t_out.size),
        scenario.d_at(t_out, rn).T,
    )


def _consistent_flux(rn, inp, rho):
    ain, aout, s, _ = inp
    rin, rout = boundary_densities(rn, np.concatenate([s, rho]), ain, aout)
    q = (rin**2 - rout**2) / (rn.lam * rn.K)
    return np.sign(q) * np.sqrt(np.abs(q))


def periodic_orbit(
    rn: RefinedNetwork,
    scenario: Scenario,
    tol: float = 1e-6,
    rel_tol: float = 1e-4,
    rho_init=None,
    max_periods: int = 50,
    t_out=None,
    max_step: float | None = None,
    fixed_step: float | None = None,
) -> Trajectory:
    """Repeat whole periods, warm-starting each from the previous end state.

    Stops once ``max|rho(0) - rho(T)| <= tol``; returns the last period.
    """
    if rho_init is None:
        rho_init = steady_state(rn, scenario.time_averaged()).rho
        # time-averaged steady state is consistent with inputs at t=0 only through rho
    rho = np.asarray(rho_init, dtype=float)
    h = None
    mismatch = np.inf
    for period in range(1, max_periods + 1):
        traj = simulate(
            rn, scenario, rho, rel_tol=rel_tol, t_out=t_out, h_init=h, max_step=max_step, fixed_step=fixed_step
        )
        mismatch = float(np.max(np.abs(traj.rho[:, -1] - traj.rho[:, 0])))
        log.debug("periodic_orbit: period %d mismatch %.3e", period, mismatch)
        if mismatch <= tol:
            return traj
        rho = traj.rho[:, -1]
    raise NoPeriodicOrbit(f"no periodic orbit after {max_periods} periods", residual=mismatch)


def residual_along(rn: RefinedNetwork, scenario: Scenario, traj: Trajectory, k: int, rho_dot, s_dot=None):
    """DAE residual at trajectory column ``k`` for a supplied density rate."""
    t = traj.grid[k]
    s_dot = scenario.s_dot_at(t, rn) if s_dot is None else s_dot
    return dae_residual(rn, t, traj.state(k), rho_dot, s_dot, traj.d[:, k])
