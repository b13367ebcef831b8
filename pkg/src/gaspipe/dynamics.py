"""Lumped network flow model on a refined graph.

Per refined edge ``k`` with boundary densities ``rho_in = alpha_in * rho_tail`` and
``rho_out = alpha_out * rho_head``, the model is

    |A_d| X Lam d/dt(|B^T| rho_N) = 4 (A_d X Phi - d)          (mass)
    Lam K Phi |Phi| + (B^T rho_N) * (|B^T| rho_N) = 0           (momentum)

with ``B^T rho_N = rho_out - rho_in`` and ``|B^T| rho_N = rho_in + rho_out``.
The time derivative of ``|B^T| rho_N`` includes the compression-rate term
``(d|B^T|/dt) rho_N`` so that linepack is conserved when ratios vary in time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, SingularDerivative, TopologyError
from .network import RefinedNetwork, weighted_incidence


@dataclass(frozen=True)
class EdgeParams:
    friction: float | np.ndarray
    diameter: float | np.ndarray
    ell0: float


@dataclass
class NodalState:
    rho: np.ndarray  # nonslack densities, length M
    s: np.ndarray  # slack densities, length b
    Phi: np.ndarray  # average edge flux, length E

    @property
    def rhoN(self):
        return np.concatenate([self.s, self.rho])


@dataclass
class EdgeBoundaryState:
    rho_in: np.ndarray
    rho_out: np.ndarray
    phi_in: np.ndarray
    phi_out: np.ndarray

    @property
    def Phi(self):
        return 0.5 * (self.phi_in + self.phi_out)


def _coef(params: EdgeParams):
    return 2.0 * np.asarray(params.diameter, dtype=float) / (np.asarray(params.friction, dtype=float) * params.ell0)


def dissipation(params: EdgeParams, u, w):
    """``sgn(w) * sqrt(|-u * 2D/(lambda*ell0) * w|)``."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(u <= 0):
        raise InvalidArgument("dissipation requires positive density u")
    out = np.sign(w) * np.sqrt(np.abs(-u * _coef(params) * w))
    return float(out) if out.ndim == 0 else out


def dissipation_dw(params: EdgeParams, u, w):
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(u <= 0):
        raise InvalidArgument("dissipation requires positive density u")
    if np.any(w == 0):
        raise SingularDerivative("dissipation derivative is unbounded at w = 0")
    c = u * _coef(params)
    out = 0.5 * c / np.sqrt(np.abs(c * w))
    return float(out) if out.ndim == 0 else out


def edge_params(rn: RefinedNetwork) -> EdgeParams:
    return EdgeParams(rn.friction, rn.diameter, rn.ell0)


def boundary_densities(rn: RefinedNetwork, rhoN, alpha_in, alpha_out):
    """``(rho_in, rho_out)`` per edge; works on stacked time rows as well."""
    rhoN = np.asarray(rhoN, dtype=float)
    return alpha_in * rhoN[..., rn.tail], alpha_out * rhoN[..., rn.head]


def phi_from_rho(rn: RefinedNetwork, t, rhoN, K=None):
    """Average edge flux eliminated from the momentum relation (matrix form)."""
    rhoN = np.asarray(rhoN, dtype=float)
    B, _, _ = weighted_incidence(rn, t)
    g = B.T @ rhoN
    h = abs(B).T @ rhoN
    if np.any(h <= 0):
        raise InvalidArgument("edge density sums must be positive")
    K = rn.K if K is None else K
    return -np.sqrt(np.abs(-(g * h) / (rn.lam * K))) * np.sign(g)


def phi_from_rho_componentwise(rn: RefinedNetwork, t, rhoN, friction=None):
    """Same quantity via the dissipation function, edge by edge."""
    rhoN = np.asarray(rhoN, dtype=float)
    ain, aout = rn.alphas(float(t))
    rin, rout = boundary_densities(rn, rhoN, ain, aout)
    if np.any(rin + rout <= 0):
        raise InvalidArgument("edge density sums must be positive")
    params = EdgeParams(rn.friction if friction is None else friction, rn.diameter, rn.ell0)
    return -dissipation(params, 0.5 * (rin + rout), (rout - rin) / rn.lam)


def _check_shapes(rn, **arrays):
    expected = {"rho": rn.M, "rho_dot": rn.M, "d": rn.M, "s": rn.n_slack, "s_dot": rn.n_slack, "Phi": rn.n_edges}
    for name, arr in arrays.items():
        if np.shape(arr) != (expected[name],):
            raise InvalidArgument(f"{name} has shape {np.shape(arr)}, expected ({expected[name]},)")


def storage_matrix(rn: RefinedNetwork):
    """``|A_d| X Lam`` (M x E)."""
    return (abs(rn.A_d) @ sp.diags(rn.X * rn.lam)).tocsr()


def dae_residual(rn: RefinedNetwork, t, state: NodalState, rho_dot, s_dot, d):
    """Residuals ``(r_mass, r_momentum)`` of the matrix DAE at time ``t``."""
    _check_shapes(rn, rho=state.rho, s=state.s, Phi=state.Phi, rho_dot=rho_dot, s_dot=s_dot, d=d)
    rhoN = state.rhoN
    rhoN_dot = np.concatenate([s_dot, rho_dot])
    ain, aout = rn.alphas(float(t))
    dain, daout = rn.alpha_rates(float(t))
    rin, rout = boundary_densities(rn, rhoN, ain, aout)
    rate = ain * rhoN_dot[rn.tail] + aout * rhoN_dot[rn.head] + dain * rhoN[rn.tail] + daout * rhoN[rn.head]
    Phi = state.Phi
    r_mass = storage_matrix(rn) @ rate - 4.0 * (rn.A_d @ (rn.X * Phi) - d)
    r_mom = rn.lam * rn.K * Phi * np.abs(Phi) + (rout - rin) * (rout + rin)
    return r_mass, r_mom


def dae_residual_matrix_form(rn: RefinedNetwork, t, state: NodalState, rho_dot, s_dot, d):
    """Literal sparse-matrix assembly with ``B``, ``|B|`` and ``d|B|/dt``; used as a cross-check."""
    _check_shapes(rn, rho=state.rho, s=state.s, Phi=state.Phi, rho_dot=rho_dot, s_dot=s_dot, d=d)
    B, B_s, B_d = weighted_incidence(rn, t)
    dain, daout = rn.alpha_rates(float(t))
    E = rn.n_edges
    cols = np.arange(E)
    # d|B|/dt, not |dB/dt|: a falling ratio must lower the stored mass
    absBdot = sp.csr_matrix(
        (np.concatenate([dain, daout]), (np.concatenate([rn.tail, rn.head]), np.concatenate([cols, cols]))),
        shape=(rn.n_nodes, E),
    )
    absAd = abs(rn.A_d)
    XL = sp.diags(rn.X * rn.lam)
    rhoN = state.rhoN
    r_mass = (
        absAd @ XL @ (abs(B_d).T @ rho_dot)
        + absAd @ XL @ (abs(B_s).T @ s_dot)
        + absAd @ XL @ (absBdot.T @ rhoN)
        - 4.0 * (rn.A_d @ sp.diags(rn.X) @ state.Phi - d)
    )
    r_mom = sp.diags(rn.lam * rn.K) @ (state.Phi * np.abs(state.Phi)) + (B.T @ rhoN) * (abs(B).T @ rhoN)
    return r_mass, r_mom


def segment_residual(rn: RefinedNetwork, t, state: NodalState, rho_dot, s_dot, d):
    """Segment-by-segment assembly of the same model.

    Each edge first recovers its boundary fluxes from the trapezoid mass balance,
    nodal flow balances are then summed edge by edge. Returned in the scaling of
    :func:`dae_residual` (flow-balance residual times -4) for direct comparison.
    """
    _check_shapes(rn, rho=state.rho, s=state.s, Phi=state.Phi, rho_dot=rho_dot, s_dot=s_dot, d=d)
    rhoN = state.rhoN
    rhoN_dot = np.concatenate([s_dot, rho_dot])
    ain, aout = rn.alphas(float(t))
    dain, daout = rn.alpha_rates(float(t))
    r_mass = np.zeros(rn.M)
    r_mom = np.zeros(rn.n_edges)
    nb = rn.n_slack
    for k, e in enumerate(rn.edges):
        i, j = e.tail, e.head
        L = rn.lam[k]
        rho_in = ain[k] * rhoN[i]
        rho_out = aout[k] * rhoN[j]
        drho_in = ain[k] * rhoN_dot[i] + dain[k] * rhoN[i]
        drho_out = aout[k] * rhoN_dot[j] + daout[k] * rhoN[j]
        # L/2 (drho_in + drho_out) = phi_in - phi_out, Phi = (phi_in + phi_out)/2
        diff = 0.5 * L * (drho_in + drho_out)
        phi_in = state.Phi[k] + 0.5 * diff
        phi_out = state.Phi[k] - 0.5 * diff
        # rho_out - rho_in = -(lambda ell0 L / 4D) (phi_in+phi_out)|phi_in+phi_out| / (rho_in+rho_out)
        s2 = phi_in + phi_out
        lhs = rho_out - rho_in
        rhs = -(rn.K[k] * L / 4.0) * s2 * abs(s2) / (rho_in + rho_out)
        r_mom[k] = -(rhs - lhs) * (rho_in + rho_out)
        area = rn.X[k]
        if j >= nb:
            r_mass[j - nb] += -4.0 * area * phi_out
        if i >= nb:
            r_mass[i - nb] -= -4.0 * area * phi_in
    r_mass += 4.0 * d
    return r_mass, r_mom


def mass_matrix(rn: RefinedNetwork, t):
    """``|A_d| X Lam |B_d^T|`` at time ``t``."""
    _, _, B_d = weighted_incidence(rn, t)
    return (storage_matrix(rn) @ abs(B_d).T).tocsc()


def nodal_ode_rhs(rn: RefinedNetwork, t, rho, s, s_dot, d):
    """Nonslack density rates with the flux eliminated through the dissipation closure."""
    _check_shapes(rn, rho=rho, s=s, s_dot=s_dot, d=d)
    rhoN = np.concatenate([s, rho])
    Phi = phi_from_rho_componentwise(rn, t, rhoN)
    ain, aout = rn.alphas(float(t))
    dain, daout = rn.alpha_rates(float(t))
    s_dot_N = np.concatenate([s_dot, np.zeros(rn.M)])
    known_rate = (
        ain * s_dot_N[rn.tail] + aout * s_dot_N[rn.head] + dain * rhoN[rn.tail] + daout * rhoN[rn.head]
    )
    rhs = 4.0 * (rn.A_d @ (rn.X * Phi) - d) - storage_matrix(rn) @ known_rate
    Mm = mass_matrix(rn, t)
    try:
        lu = spla.splu(Mm)
    except RuntimeError as exc:
        raise TopologyError("nodal mass matrix is singular (disconnected graph?)") from exc
    return lu.solve(rhs)
