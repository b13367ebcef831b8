"""Direct transcription of the periodic estimation problems into a sparse NLP.

Time is discretized on a circular grid ``t_k = k*T/N`` (point ``N`` is point 0),
so periodicity holds by construction. The density rate between consecutive grid
points is the forward difference ``(rho_{k+1} - rho_k)/dt`` and is paired with the
flow and withdrawal at ``k+1`` (a backward Euler step). Momentum holds at every
grid point in the sign-preserving ``Phi|Phi|`` form.

Variables are scaled for conditioning: densities are nondimensional, fluxes are
divided by ``phi_scale``, withdrawals by a per-junction reference magnitude and
friction factors by their nominal value. Rows are scaled to O(1) likewise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import storage_matrix
from .errors import InvalidArgument
from .network import RefinedNetwork
from .scenario import Scenario
from .simulator import Trajectory

# residuals are expressed in percent of the per-junction reference magnitude
_PERCENT = 100.0


@dataclass(frozen=True)
class TimeGrid:
    N: int
    T: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 8:
            raise InvalidArgument("time grid needs N >= 8 points")
        if not self.T > 0:
            raise InvalidArgument("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N) * self.dt

    def wrap(self, k: int) -> int:
        return k % self.N


@dataclass
class MeasurementSet:
    """Noisy withdrawals and densities at physical nonslack junctions.

    Arrays are (junctions x grid points); ``W1``/``W2`` are diagonal weights per junction.
    """

    d_tilde: np.ndarray
    rho_tilde: np.ndarray
    W1: np.ndarray | None = None
    W2: np.ndarray | None = None

    def __post_init__(self):
        self.d_tilde = np.atleast_2d(np.asarray(self.d_tilde, dtype=float))
        self.rho_tilde = np.atleast_2d(np.asarray(self.rho_tilde, dtype=float))
        P = self.d_tilde.shape[0]
        self.W1 = np.ones(P) if self.W1 is None else np.asarray(self.W1, dtype=float)
        self.W2 = np.ones(P) if self.W2 is None else np.asarray(self.W2, dtype=float)
        if np.any(self.W1 < 0) or np.any(self.W2 < 0):
            raise InvalidArgument("measurement weights must be non-negative")
        if self.rho_tilde.shape != self.d_tilde.shape:
            raise InvalidArgument("withdrawal and density measurements must have the same shape")
        if self.W1.shape != (P,) or self.W2.shape != (P,):
            raise InvalidArgument("one weight per measured junction expected")


@dataclass
class Layout:
    """Maps the flat variable vector to ``(quantity, node/edge, time)``."""

    N: int
    M: int
    E: int
    P: int
    n_friction: int
    d_free: bool
    phi_scale: float
    d_scale: np.ndarray
    friction_nominal: np.ndarray

    @property
    def n_rho(self):
        return self.N * self.M

    @property
    def n_phi(self):
        return self.N * self.E

    @property
    def n_d(self):
        return self.N * self.P if self.d_free else 0

    @property
    def n(self):
        return self.n_rho + self.n_phi + self.n_d + self.n_friction

    def rho_index(self, k, i):
        return (k % self.N) * self.M + i

    def phi_index(self, k, e):
        return self.n_rho + (k % self.N) * self.E + e

    def d_index(self, k, j):
        if not self.d_free:
            raise KeyError("withdrawals are not variables in this problem")
        return self.n_rho + self.n_phi + (k % self.N) * self.P + j

    def friction_index(self, p):
        if p >= self.n_friction:
            raise KeyError("friction factors are not variables in this problem")
        return self.n_rho + self.n_phi + self.n_d + p

    def describe(self, idx):
        """``(quantity, node/edge/pipe position, time index)`` of variable ``idx``."""
        if idx < self.n_rho:
            return "rho", idx % self.M, idx // self.M
        idx -= self.n_rho
        if idx < self.n_phi:
            return "Phi", idx % self.E, idx // self.E
        idx -= self.n_phi
        if idx < self.n_d:
            return "d", idx % self.P, idx // self.P
        return "friction", idx - self.n_d, None

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        o = 0
        rho = x[o : o + self.n_rho].reshape(self.N, self.M).T
        o += self.n_rho
        Phi = x[o : o + self.n_phi].reshape(self.N, self.E).T * self.phi_scale
        o += self.n_phi
        out = {"rho": rho, "Phi": Phi}
        if self.d_free:
            out["d"] = x[o : o + self.n_d].reshape(self.N, self.P).T * self.d_scale[:, None]
            o += self.n_d
        if self.n_friction:
            out["friction"] = x[o : o + self.n_friction] * self.friction_nominal
        return out

    def pack(self, rho, Phi, d=None, friction=None):
        parts = [np.asarray(rho, dtype=float).T.ravel(), (np.asarray(Phi, dtype=float) / self.phi_scale).T.ravel()]
        if self.d_free:
            parts.append((np.asarray(d, dtype=float) / self.d_scale[:, None]).T.ravel())
        if self.n_friction:
            fr = self.friction_nominal if friction is None else np.asarray(friction, dtype=float)
            parts.append(fr / self.friction_nominal)
        return np.concatenate(parts)


@dataclass
class NlpProblem:
    """``min sum w_i (x[idx_i] - target_i)^2  s.t.  c(x) = 0,  lb <= x <= ub``.

    The equality constraints are linear mass-balance rows plus momentum rows that
    are quadratic in the states and bilinear in the friction variables.
    """

    lb: np.ndarray
    ub: np.ndarray
    ls_index: np.ndarray
    ls_target: np.ndarray
    ls_weight: np.ndarray
    layout: Layout
    kind: str
    # constant linear part of the constraints: c_lin(x) = J_lin @ x + b_lin
    J_lin: sp.csr_matrix = field(repr=False)
    b_lin: np.ndarray = field(repr=False)
    # momentum rows
    mom: dict = field(repr=False)
    rn: RefinedNetwork = field(repr=False)
    grid: TimeGrid = field(repr=False)
    s_grid: np.ndarray = field(repr=False)
    d_fixed: np.ndarray | None = field(default=None, repr=False)
    meas: MeasurementSet | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.lb.size

    @property
    def m(self):
        return self.J_lin.shape[0] + self.mom["rows"]

    # objective -----------------------------------------------------------
    def objective(self, x):
        r = x[self.ls_index] - self.ls_target
        return float(np.sum(self.ls_weight * r * r))

    def gradient(self, x):
        g = np.zeros(self.n)
        np.add.at(g, self.ls_index, 2.0 * self.ls_weight * (x[self.ls_index] - self.ls_target))
        return g

    def objective_hessian(self):
        diag = np.zeros(self.n)
        np.add.at(diag, self.ls_index, 2.0 * self.ls_weight)
        return sp.diags(diag, format="csr")

    # constraints ---------------------------------------------------------
    def _mom_parts(self, x):
        m = self.mom
        y = x[m["phi_idx"]]
        theta = x[m["theta_idx"]] if m["theta_idx"] is not None else 1.0
        rin = m["ain"] * (np.where(m["tail_ns"], x[m["tail_idx"]], 0.0) + m["tail_const"])
        rout = m["aout"] * (np.where(m["head_ns"], x[m["head_idx"]], 0.0) + m["head_const"])
        return y, theta, rin, rout

    def constraints(self, x):
        x = np.asarray(x, dtype=float)
        c_lin = self.J_lin @ x + self.b_lin
        y, theta, rin, rout = self._mom_parts(x)
        m = self.mom
        c_mom = theta * y * np.abs(y) + (rout * rout - rin * rin) * m["inv_a"]
        return np.concatenate([c_lin, c_mom])

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        m = self.mom
        y, theta, rin, rout = self._mom_parts(x)
        rows = [m["row"]]
        cols = [m["phi_idx"]]
        vals = [2.0 * theta * np.abs(y)]
        tn, hn = m["tail_ns"], m["head_ns"]
        rows += [m["row"][tn], m["row"][hn]]
        cols += [m["tail_idx"][tn], m["head_idx"][hn]]
        vals += [(-2.0 * rin * m["ain"] * m["inv_a"])[tn], (2.0 * rout * m["aout"] * m["inv_a"])[hn]]
        if m["theta_idx"] is not None:
            rows.append(m["row"])
            cols.append(m["theta_idx"])
            vals.append(y * np.abs(y))
        J_mom = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m["rows"], self.n)
        )
        return sp.vstack([self.J_lin, J_mom], format="csr")

    def constraint_hessian(self, x, lam):
        """``sum_i lam_i * Hess c_i(x)``; only the momentum rows carry curvature."""
        x = np.asarray(x, dtype=float)
        m = self.mom
        lm = np.asarray(lam, dtype=float)[self.J_lin.shape[0] :]
        y, theta, _, _ = self._mom_parts(x)
        tn, hn = m["tail_ns"], m["head_ns"]
        rows = [m["phi_idx"], m["tail_idx"][tn], m["head_idx"][hn]]
        vals = [
            lm * 2.0 * theta * np.sign(y),
            (lm * -2.0 * m["ain"] ** 2 * m["inv_a"])[tn],
            (lm * 2.0 * m["aout"] ** 2 * m["inv_a"])[hn],
        ]
        cols = list(rows)
        if m["theta_idx"] is not None:
            cross = lm * 2.0 * np.abs(y)
            rows += [m["phi_idx"], m["theta_idx"]]
            cols += [m["theta_idx"], m["phi_idx"]]
            vals += [cross, cross]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.n, self.n)
        )

    def lagrangian_hessian(self, x, lam, obj_factor=1.0):
        return obj_factor * self.objective_hessian() + self.constraint_hessian(x, lam)

    # helpers -------------------------------------------------------------
    def unpack(self, x):
        return self.layout.unpack(x)

    def to_trajectory(self, x) -> Trajectory:
        """Grid trajectory (nondimensional) for a solution vector."""
        u = self.unpack(x)
        rn = self.rn
        if self.layout.d_free:
            d = np.zeros((rn.M, self.grid.N))
            d[rn.physical_nonslack] = u["d"]
        else:
            d = self.d_fixed
        return Trajectory(self.grid.times, u["rho"], u["Phi"], self.s_grid, d)

    def sparsity_ok(self, x):
        """Every momentum and mass row touches at most two adjacent time indices."""
        J = self.jacobian(x).tocoo()
        times = np.array([self.layout.describe(c)[2] if self.layout.describe(c)[2] is not None else -1 for c in range(self.n)])
        N = self.grid.N
        for r in np.unique(J.row):
            ts = {int(times[c]) for c in J.col[J.row == r] if times[c] >= 0}
            if len(ts) > 2:
                return False
            if len(ts) == 2:
                a, b = sorted(ts)
                if not (b - a == 1 or (a == 0 and b == N - 1)):
                    return False
        return True


# --------------------------------------------------------------------------
def _reference(meas_rows, floor):
    ref = np.mean(np.abs(meas_rows), axis=1)
    fallback = np.max(ref) if ref.size and np.max(ref) > 0 else floor
    return np.where(ref > floor * 1e-6, ref, fallback)


def _build(
    rn: RefinedNetwork,
    grid: TimeGrid,
    known: Scenario,
    *,
    kind: str,
    d_fixed_phys=None,
    meas: MeasurementSet | None = None,
    friction_bounds=None,
    phi_scale=None,
) -> NlpProblem:
    N, M, E = grid.N, rn.M, rn.n_edges
    P = rn.physical_nonslack.size
    nb = rn.n_slack
    t = grid.times
    dt = grid.dt

    if meas is not None:
        if meas.d_tilde.shape != (P, N):
            raise InvalidArgument(f"measurements have shape {meas.d_tilde.shape}, expected ({P}, {N})")
        d_ref = _reference(meas.d_tilde, 1.0)
    else:
        d_fixed_phys = np.asarray(d_fixed_phys, dtype=float)
        if d_fixed_phys.shape != (P, N):
            raise InvalidArgument(f"withdrawals have shape {d_fixed_phys.shape}, expected ({P}, {N})")
        d_ref = _reference(d_fixed_phys, 1.0) if P else np.ones(0)
    if phi_scale is None:
        phi_scale = float(np.sum(d_ref) / np.max(rn.X)) if P else 1e-2
        phi_scale = max(phi_scale, 1e-6)

    d_free = kind in ("state", "joint")
    n_fr = len(rn.parent.pipes) if kind == "joint" else 0
    fr_nom = np.array([p.friction for p in rn.parent.pipes]) if n_fr else np.ones(0)
    layout = Layout(N, M, E, P, n_fr, d_free, phi_scale, d_ref if d_free else np.ones(P), fr_nom)
    n = layout.n

    ain, aout = rn.alphas(t)  # (N, E)
    if np.any(ain <= 0) or np.any(aout <= 0):
        raise InvalidArgument("compression ratios must be positive on the grid")
    s = np.atleast_2d(known.s_at(t, rn))  # (N, b)
    s = s.reshape(N, nb)

    # ---- mass rows (linear) ------------------------------------------------
    C = storage_matrix(rn)  # M x E
    AdX = (rn.A_d @ sp.diags(rn.X)).tocsr()
    absAd = abs(rn.A_d).tocsr()
    row_area = np.asarray((absAd @ sp.diags(rn.X)).max(axis=1).todense()).ravel()
    mass_scale = 4.0 * phi_scale * row_area  # per nonslack row
    inv_ms = sp.diags(1.0 / mass_scale)

    tail_ns = rn.tail >= nb
    head_ns = rn.head >= nb
    Erange = np.arange(E)

    sel = rn.withdrawal_selector()  # M x P

    # linepack proxy sigma_k = |B_k^T| rho_N = Jsig_k rho_k + sig_const_k
    def jsig(k):
        data = np.concatenate([ain[k][tail_ns], aout[k][head_ns]])
        r = np.concatenate([Erange[tail_ns], Erange[head_ns]])
        c_ = np.concatenate([rn.tail[tail_ns] - nb, rn.head[head_ns] - nb])
        return sp.csr_matrix((data, (r, c_)), shape=(E, M))

    def sig_const(k):
        out = np.zeros(E)
        st, sh = ~tail_ns, ~head_ns
        out[st] += ain[k][st] * s[k][rn.tail[st]]
        out[sh] += aout[k][sh] * s[k][rn.head[sh]]
        return out

    store = [sp.coo_matrix(inv_ms @ (C @ jsig(k)) / dt) for k in range(N)]
    flux = sp.coo_matrix(inv_ms @ (-4.0 * phi_scale * AdX))
    wd = sp.coo_matrix(inv_ms @ (4.0 * sel @ sp.diags(layout.d_scale))) if d_free else None
    b_lin = np.zeros(N * M)
    rr, cc, vv = [], [], []

    def put(mat, k_row, off, sign=1.0):
        rr.append(mat.row + k_row * M)
        cc.append(mat.col + off)
        vv.append(sign * mat.data)

    for k in range(N):
        km = (k - 1) % N
        put(store[k], k, layout.rho_index(k, 0))
        put(store[km], k, layout.rho_index(km, 0), -1.0)
        put(flux, k, layout.phi_index(k, 0))
        const = C @ (sig_const(k) - sig_const(km)) / dt
        if d_free:
            put(wd, k, layout.d_index(k, 0))
        else:
            const = const + 4.0 * (sel @ d_fixed_phys[:, k])
        b_lin[k * M : (k + 1) * M] = const / mass_scale
    J_lin = sp.csr_matrix(
        (np.concatenate(vv), (np.concatenate(rr), np.concatenate(cc))), shape=(N * M, n)
    )
    J_lin.eliminate_zeros()

    # ---- momentum rows (nonlinear) ------------------------------------------
    kk = np.repeat(np.arange(N), E)
    ee = np.tile(Erange, N)
    a_nom = rn.lam * rn.K  # nominal L*K per edge
    inv_a = 1.0 / (a_nom * phi_scale**2)
    tail_ns_f = tail_ns[ee]
    head_ns_f = head_ns[ee]
    tail_idx = np.where(tail_ns_f, kk * M + np.maximum(rn.tail[ee] - nb, 0), 0)
    head_idx = np.where(head_ns_f, kk * M + np.maximum(rn.head[ee] - nb, 0), 0)
    tail_const = np.where(tail_ns_f, 0.0, s[kk, np.minimum(rn.tail[ee], nb - 1)])
    head_const = np.where(head_ns_f, 0.0, s[kk, np.minimum(rn.head[ee], nb - 1)])
    mom = {
        "rows": N * E,
        "row": np.arange(N * E),
        "phi_idx": layout.n_rho + kk * E + ee,
        "theta_idx": (layout.n_rho + layout.n_phi + layout.n_d + rn.mu[ee]) if n_fr else None,
        "ain": ain[kk, ee],
        "aout": aout[kk, ee],
        "tail_ns": tail_ns_f,
        "head_ns": head_ns_f,
        "tail_idx": tail_idx,
        "head_idx": head_idx,
        "tail_const": tail_const,
        "head_const": head_const,
        "inv_a": inv_a[ee],
    }

    # ---- bounds ----------------------------------------------------------------
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    rmin = np.array([nd.rho_min for nd in rn.nodes[nb:]])
    rmax = np.array([nd.rho_max for nd in rn.nodes[nb:]])
    lb[: layout.n_rho] = np.tile(rmin, N)
    ub[: layout.n_rho] = np.tile(rmax, N)
    if n_fr:
        lo, hi = friction_bounds
        o = layout.n_rho + layout.n_phi + layout.n_d
        lb[o:] = lo
        ub[o:] = hi

    # ---- objective ------------------------------------------------------------
    if meas is not None:
        rho_ref = _reference(meas.rho_tilde, 1.0)
        idx_d = np.array([layout.d_index(k, j) for k in range(N) for j in range(P)], dtype=int)
        tgt_d = np.array([meas.d_tilde[j, k] / layout.d_scale[j] for k in range(N) for j in range(P)])
        w_d = np.array([meas.W1[j] * _PERCENT**2 / N for k in range(N) for j in range(P)])
        ps = rn.physical_nonslack
        idx_r = np.array([layout.rho_index(k, ps[j]) for k in range(N) for j in range(P)], dtype=int)
        tgt_r = np.array([meas.rho_tilde[j, k] for k in range(N) for j in range(P)])
        w_r = np.array([meas.W2[j] * _PERCENT**2 / (N * rho_ref[j] ** 2) for k in range(N) for j in range(P)])
        keep_d = w_d > 0
        keep_r = w_r > 0
        ls_index = np.concatenate([idx_d[keep_d], idx_r[keep_r]])
        ls_target = np.concatenate([tgt_d[keep_d], tgt_r[keep_r]])
        ls_weight = np.concatenate([w_d[keep_d], w_r[keep_r]])
    else:
        ls_index = np.zeros(0, dtype=int)
        ls_target = np.zeros(0)
        ls_weight = np.zeros(0)

    d_fixed_full = None
    if not d_free:
        d_fixed_full = np.zeros((M, N))
        d_fixed_full[rn.physical_nonslack] = d_fixed_phys

    return NlpProblem(
        lb=lb,
        ub=ub,
        ls_index=ls_index,
        ls_target=ls_target,
        ls_weight=ls_weight,
        layout=layout,
        kind=kind,
        J_lin=J_lin,
        b_lin=b_lin,
        mom=mom,
        rn=rn,
        grid=grid,
        s_grid=s.T.copy(),
        d_fixed=d_fixed_full,
        meas=meas,
    )


def build_state_estimation(rn: RefinedNetwork, grid: TimeGrid, known: Scenario, meas: MeasurementSet, **kw) -> NlpProblem:
    """Least-squares fit of withdrawals and nonslack densities to measurements."""
    return _build(rn, grid, known, kind="state", meas=meas, **kw)


def build_joint_estimation(
    rn: RefinedNetwork, grid: TimeGrid, known: Scenario, meas: MeasurementSet, lambda_bounds=(0.5, 2.0), **kw
) -> NlpProblem:
    """State estimation plus one friction factor per physical pipe.

    Friction variables are stored relative to their nominal value, so the bounds
    ``lambda_bounds=(lo, hi)`` apply directly as fractions of nominal.
    """
    lo, hi = lambda_bounds
    if not (0 < lo < 1 < hi):
        raise InvalidArgument("friction bounds must satisfy 0 < lo < 1 < hi")
    return _build(rn, grid, known, kind="joint", meas=meas, friction_bounds=(lo, hi), **kw)


def build_noiseless_ivp(rn: RefinedNetwork, grid: TimeGrid, known: Scenario, d_exact=None, **kw) -> NlpProblem:
    """Pure feasibility problem with withdrawals fixed (from ``known`` unless given)."""
    if d_exact is None:
        d_exact = known.physical_withdrawals(grid.times, rn).T
    return _build(rn, grid, known, kind="noiseless", d_fixed_phys=d_exact, **kw)
