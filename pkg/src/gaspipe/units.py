"""Physical constants and the dimensional <-> nondimensional maps.

Every other module works in nondimensional quantities:

    t_hat = t / (ell0 / a),  x_hat = x / ell0,
    rho_hat = rho / rho0,    phi_hat = phi / (a * rho0).

Mass flows (kg/s) are carried as ``phi_hat * area`` with the area kept in m^2,
so a withdrawal ``d`` is nondimensionalized by ``a * rho0`` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

PSI_TO_PA = 6894.757293168
DEFAULT_SOUND_SPEED = 377.0


@dataclass(frozen=True)
class GasConstants:
    """Scales used to nondimensionalize the model.

    ``a`` is the isothermal speed of sound (m/s), ``ell0`` the nominal length (m),
    ``rho0`` the nominal density (kg/m^3) and ``T_horizon`` the periodic horizon (s).
    """

    a: float = DEFAULT_SOUND_SPEED
    ell0: float = 1.0e5
    rho0: float = 1.0
    T_horizon: float = 86400.0

    def __post_init__(self):
        for name in ("a", "ell0", "rho0", "T_horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidArgument(f"GasConstants.{name} must be finite and > 0, got {v!r}")

    @property
    def time_scale(self) -> float:
        return self.ell0 / self.a

    @property
    def flux_scale(self) -> float:
        return self.a * self.rho0

    @property
    def T_hat(self) -> float:
        return self.T_horizon / self.time_scale


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(np.asarray(v, dtype=float))):
            raise InvalidArgument("non-finite input")


def nondimensionalize(t, x, rho, phi, c: GasConstants):
    _check_finite(t, x, rho, phi)
    return (
        np.asarray(t, dtype=float) / c.time_scale,
        np.asarray(x, dtype=float) / c.ell0,
        np.asarray(rho, dtype=float) / c.rho0,
        np.asarray(phi, dtype=float) / c.flux_scale,
    )


def redimensionalize(t_hat, x_hat, rho_hat, phi_hat, c: GasConstants):
    _check_finite(t_hat, x_hat, rho_hat, phi_hat)
    return (
        np.asarray(t_hat, dtype=float) * c.time_scale,
        np.asarray(x_hat, dtype=float) * c.ell0,
        np.asarray(rho_hat, dtype=float) * c.rho0,
        np.asarray(phi_hat, dtype=float) * c.flux_scale,
    )


def pressure_to_density(p, c: GasConstants):
    p = np.asarray(p, dtype=float)
    _check_finite(p)
    if np.any(p < 0):
        raise InvalidArgument("pressure must be non-negative")
    out = p / (c.a * c.a)
    return float(out) if out.ndim == 0 else out


def density_to_pressure(rho, c: GasConstants):
    rho = np.asarray(rho, dtype=float)
    _check_finite(rho)
    if np.any(rho < 0):
        raise InvalidArgument("density must be non-negative")
    out = rho * (c.a * c.a)
    return float(out) if out.ndim == 0 else out


def psi_to_pa(p_psi):
    return np.asarray(p_psi, dtype=float) * PSI_TO_PA if np.ndim(p_psi) else float(p_psi) * PSI_TO_PA


def pa_to_psi(p_pa):
    return np.asarray(p_pa, dtype=float) / PSI_TO_PA if np.ndim(p_pa) else float(p_pa) / PSI_TO_PA


def mass_flow_to_nondim(q, c: GasConstants):
    """kg/s -> nondimensional flux times area (m^2)."""
    return np.asarray(q, dtype=float) / c.flux_scale if np.ndim(q) else float(q) / c.flux_scale


def mass_flow_from_nondim(q_hat, c: GasConstants):
    return np.asarray(q_hat, dtype=float) * c.flux_scale if np.ndim(q_hat) else float(q_hat) * c.flux_scale
