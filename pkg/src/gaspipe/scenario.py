"""Boundary data for a network over one periodic horizon, in nondimensional units."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument
from .network import Compressor, Network, RefinedNetwork, refine
from .profiles import Profile, constant
from .units import GasConstants


@dataclass(frozen=True)
class Scenario:
    """Network plus periodic inputs.

    ``withdrawals`` maps nonslack junction ids to withdrawal profiles in units of
    ``kg/s / (a * rho0)``; ``slack`` maps slack junction ids to nondimensional
    densities. All profile times are nondimensional with period ``constants.T_hat``.
    Junctions missing from ``withdrawals`` withdraw nothing.
    """

    network: Network
    constants: GasConstants
    withdrawals: dict
    slack: dict
    delta: float = 5000.0
    name: str = "scenario"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        for jid in self.network.slack_ids:
            if jid not in self.slack:
                raise InvalidArgument(f"slack junction {jid} has no density profile")
        nonslack = set(self.network.nonslack_ids)
        for jid in self.withdrawals:
            if jid not in nonslack:
                raise InvalidArgument(f"withdrawal given for junction {jid}, which is not a nonslack junction")

    @cached_property
    def rn(self) -> RefinedNetwork:
        return refine(self.network, self.delta, self.constants.ell0)

    @property
    def period(self) -> float:
        return self.constants.T_hat

    def withdrawal_profile(self, jid) -> Profile:
        return self.withdrawals.get(jid) or constant(0.0, self.period)

    def physical_withdrawals(self, t, rn: RefinedNetwork | None = None):
        """Withdrawals at physical nonslack junctions, ordered as ``rn.physical_nonslack_ids``."""
        rn = rn or self.rn
        t = np.asarray(t, dtype=float)
        cols = [np.asarray(self.withdrawal_profile(j).eval(t), dtype=float) for j in rn.physical_nonslack_ids]
        return np.stack(cols, axis=-1) if cols else np.zeros(t.shape + (0,))

    def d_at(self, t, rn: RefinedNetwork | None = None):
        """Withdrawals on all refined nonslack nodes (zero on auxiliary nodes)."""
        rn = rn or self.rn
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (rn.M,))
        out[..., rn.physical_nonslack] = self.physical_withdrawals(t, rn)
        return out

    def s_at(self, t, rn: RefinedNetwork | None = None):
        rn = rn or self.rn
        t = np.asarray(t, dtype=float)
        cols = [np.asarray(self.slack[j].eval(t), dtype=float) for j in rn.slack_junction_ids]
        return np.stack(cols, axis=-1)

    def s_dot_at(self, t, rn: RefinedNetwork | None = None):
        rn = rn or self.rn
        t = np.asarray(t, dtype=float)
        cols = [np.asarray(self.slack[j].eval_deriv(t), dtype=float) for j in rn.slack_junction_ids]
        return np.stack(cols, axis=-1)

    def is_constant(self) -> bool:
        profiles = list(self.withdrawals.values()) + list(self.slack.values())
        profiles += [c.ratio for c in self.network.compressors]
        return all(p.is_constant() for p in profiles)

    def time_averaged(self) -> "Scenario":
        """Same scenario with every input replaced by its period mean."""
        T = self.period
        comps = tuple(
            Compressor(c.pipe, c.orientation, constant(c.ratio.time_average(), T)) for c in self.network.compressors
        )
        net = dataclasses.replace(self.network, compressors=comps)
        return dataclasses.replace(
            self,
            network=net,
            withdrawals={j: constant(p.time_average(), T) for j, p in self.withdrawals.items()},
            slack={j: constant(p.time_average(), T) for j, p in self.slack.items()},
        )

    def with_withdrawal_scaled(self, jid, factor) -> "Scenario":
        p = self.withdrawal_profile(jid)
        w = dict(self.withdrawals)
        w[jid] = p.rescaled(value_scale=factor)
        return dataclasses.replace(self, withdrawals=w)
