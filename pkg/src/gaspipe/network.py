"""Pipeline topology, spatial refinement and the incidence/parameter matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import InvalidArgument, TopologyError
from .profiles import Profile

SLACK = "slack"
NONSLACK = "nonslack"


@dataclass(frozen=True)
class Junction:
    id: int
    kind: str
    rho_min: float
    rho_max: float

    def __post_init__(self):
        if self.kind not in (SLACK, NONSLACK):
            raise InvalidArgument(f"junction {self.id}: kind must be 'slack' or 'nonslack'")
        if not (0 < self.rho_min < self.rho_max):
            raise InvalidArgument(f"junction {self.id}: need 0 < rho_min < rho_max")


@dataclass(frozen=True)
class Pipe:
    id: int
    from_node: int
    to_node: int
    length: float
    diameter: float
    friction: float

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise InvalidArgument(f"pipe {self.id}: from and to junction coincide")
        if not self.length > 0 or not self.diameter > 0:
            raise InvalidArgument(f"pipe {self.id}: length and diameter must be positive")
        if not 0 < self.friction < 1:
            raise InvalidArgument(f"pipe {self.id}: friction factor must lie in (0, 1)")

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0


@dataclass(frozen=True)
class Compressor:
    """Point compressor on ``pipe``.

    ``orientation='+'`` sits at the pipe's from-junction and boosts density entering
    the pipe there; ``'-'`` sits at the to-junction and boosts density entering the
    pipe in the reverse direction.
    """

    pipe: int
    orientation: str
    ratio: Profile

    def __post_init__(self):
        if self.orientation not in ("+", "-"):
            raise InvalidArgument("compressor orientation must be '+' or '-'")


@dataclass(frozen=True)
class Network:
    junctions: tuple
    pipes: tuple
    compressors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "junctions", tuple(self.junctions))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        object.__setattr__(self, "compressors", tuple(self.compressors))
        ids = [j.id for j in self.junctions]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("duplicate junction ids")
        pids = [p.id for p in self.pipes]
        if len(set(pids)) != len(pids):
            raise InvalidArgument("duplicate pipe ids")
        if not any(j.kind == SLACK for j in self.junctions):
            raise InvalidArgument("network needs at least one slack junction")
        known = set(ids)
        for p in self.pipes:
            if p.from_node not in known or p.to_node not in known:
                raise InvalidArgument(f"pipe {p.id} references an unknown junction")
        seen = set()
        for c in self.compressors:
            if c.pipe not in pids:
                raise InvalidArgument(f"compressor references unknown pipe {c.pipe}")
            if (c.pipe, c.orientation) in seen:
                raise InvalidArgument(f"two compressors on pipe {c.pipe} with orientation {c.orientation}")
            seen.add((c.pipe, c.orientation))
        index = {j: i for i, j in enumerate(ids)}
        n = len(ids)
        if n > 1:
            rows = [index[p.from_node] for p in self.pipes]
            cols = [index[p.to_node] for p in self.pipes]
            adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
            ncomp, _ = connected_components(adj, directed=False)
            if ncomp != 1:
                raise TopologyError("network graph is not connected")

    def junction(self, jid) -> Junction:
        for j in self.junctions:
            if j.id == jid:
                return j
        raise KeyError(jid)

    def pipe(self, pid) -> Pipe:
        for p in self.pipes:
            if p.id == pid:
                return p
        raise KeyError(pid)

    @property
    def slack_ids(self):
        return [j.id for j in self.junctions if j.kind == SLACK]

    @property
    def nonslack_ids(self):
        return [j.id for j in self.junctions if j.kind == NONSLACK]

    @property
    def max_length(self) -> float:
        return max(p.length for p in self.pipes)


@dataclass(frozen=True)
class RefinedNode:
    index: int
    kind: str
    junction: int | None  # parent junction id, None for auxiliary nodes
    pipe: int | None  # parent pipe id for auxiliary nodes
    rho_min: float
    rho_max: float


@dataclass(frozen=True)
class RefinedEdge:
    index: int
    tail: int
    head: int
    pipe: int
    position: int  # segment index along the parent pipe, from its from-junction
    length: float  # m


@dataclass(frozen=True, eq=False)
class RefinedNetwork:
    """Spatially refined network with nodes ordered slack, nonslack, auxiliary.

    Matrix attributes: ``A`` signed incidence (+1 where an edge enters a node),
    ``A_s``/``A_d`` its slack/nonslack row blocks, and the diagonals ``lam``
    (nondimensional segment lengths), ``K`` (``ell0*lambda/D``) and ``X`` (areas, m^2).
    """

    parent: Network
    delta: float
    ell0: float
    nodes: tuple
    edges: tuple
    mu: np.ndarray
    tail: np.ndarray
    head: np.ndarray
    lam: np.ndarray
    K: np.ndarray
    X: np.ndarray
    diameter: np.ndarray
    friction: np.ndarray
    n_slack: int
    alpha_in_profiles: tuple
    alpha_out_profiles: tuple
    A: sp.csr_matrix = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def M(self) -> int:
        return self.n_nodes - self.n_slack

    @property
    def A_s(self):
        return self.A[: self.n_slack]

    @property
    def A_d(self):
        return self.A[self.n_slack :]

    @property
    def pipe_ids(self):
        return [p.id for p in self.parent.pipes]

    @property
    def physical_nonslack(self):
        """Refined indices (into the nonslack block) of the physical nonslack junctions."""
        return np.array(
            [n.index - self.n_slack for n in self.nodes if n.kind == NONSLACK and n.junction is not None], dtype=int
        )

    @property
    def physical_nonslack_ids(self):
        return [n.junction for n in self.nodes if n.kind == NONSLACK and n.junction is not None]

    @property
    def slack_junction_ids(self):
        return [n.junction for n in self.nodes[: self.n_slack]]

    def withdrawal_selector(self):
        """Sparse M x P map from physical nonslack withdrawals to nonslack rows."""
        rows = self.physical_nonslack
        P = rows.size
        return sp.csr_matrix((np.ones(P), (rows, np.arange(P))), shape=(self.M, P))

    def edge_lengths_nondim(self):
        return self.lam

    def alphas(self, t):
        """Compression ratios at the tail (into edge) and head of every edge.

        ``t`` may be scalar or 1-D; output shape is ``(E,)`` or ``(len(t), E)``.
        """
        return self._eval(self.alpha_in_profiles, t, "eval", 1.0), self._eval(self.alpha_out_profiles, t, "eval", 1.0)

    def alpha_rates(self, t):
        return (
            self._eval(self.alpha_in_profiles, t, "eval_deriv", 0.0),
            self._eval(self.alpha_out_profiles, t, "eval_deriv", 0.0),
        )

    def _eval(self, profiles, t, method, default):
        t_arr = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(t_arr)):
            raise InvalidArgument("compression profile evaluated at non-finite time")
        out = np.full(t_arr.shape + (self.n_edges,), default)
        for k, prof in enumerate(profiles):
            if prof is not None:
                out[..., k] = getattr(prof, method)(t_arr)
        return out

    def pipe_edges(self, pid):
        return [e.index for e in self.edges if e.pipe == pid]


def refine(net: Network, delta: float, ell0: float | None = None) -> RefinedNetwork:
    """Split every pipe into ``ceil(L/delta)`` equal segments.

    ``delta`` and pipe lengths are in metres. ``ell0`` defaults to the longest pipe.
    """
    if not (isinstance(delta, (int, float)) and delta > 0 and math.isfinite(delta)):
        raise InvalidArgument("refinement delta must be positive")
    ell0 = float(net.max_length if ell0 is None else ell0)
    if not ell0 > 0:
        raise InvalidArgument("ell0 must be positive")

    slack = [j for j in net.junctions if j.kind == SLACK]
    nonslack = [j for j in net.junctions if j.kind == NONSLACK]
    nodes = []
    jindex = {}
    for j in slack + nonslack:
        jindex[j.id] = len(nodes)
        nodes.append(RefinedNode(len(nodes), j.kind, j.id, None, j.rho_min, j.rho_max))

    comp_in = {c.pipe: c.ratio for c in net.compressors if c.orientation == "+"}
    comp_out = {c.pipe: c.ratio for c in net.compressors if c.orientation == "-"}

    # auxiliary nodes first pass, edges second, so node blocks stay contiguous
    chains = []
    for p in net.pipes:
        n = max(1, math.ceil(p.length / delta - 1e-12))
        a, b = net.junction(p.from_node), net.junction(p.to_node)
        lo, hi = min(a.rho_min, b.rho_min), max(a.rho_max, b.rho_max)
        chain = [jindex[p.from_node]]
        for _ in range(n - 1):
            chain.append(len(nodes))
            nodes.append(RefinedNode(len(nodes), NONSLACK, None, p.id, lo, hi))
        chain.append(jindex[p.to_node])
        chains.append((p, n, chain))

    edges, mu, ain, aout = [], [], [], []
    for pi, (p, n, chain) in enumerate(chains):
        seg = p.length / n
        for s in range(n):
            edges.append(RefinedEdge(len(edges), chain[s], chain[s + 1], p.id, s, seg))
            mu.append(pi)
            ain.append(comp_in.get(p.id) if s == 0 else None)
            aout.append(comp_out.get(p.id) if s == n - 1 else None)

    E = len(edges)
    tail = np.array([e.tail for e in edges], dtype=int)
    head = np.array([e.head for e in edges], dtype=int)
    cols = np.arange(E)
    A = sp.csr_matrix(
        (np.concatenate([-np.ones(E), np.ones(E)]), (np.concatenate([tail, head]), np.concatenate([cols, cols]))),
        shape=(len(nodes), E),
    )
    pipes = [net.pipes[m] for m in mu]
    diameter = np.array([p.diameter for p in pipes])
    friction = np.array([p.friction for p in pipes])
    return RefinedNetwork(
        parent=net,
        delta=float(delta),
        ell0=ell0,
        nodes=tuple(nodes),
        edges=tuple(edges),
        mu=np.array(mu, dtype=int),
        tail=tail,
        head=head,
        lam=np.array([e.length for e in edges]) / ell0,
        K=ell0 * friction / diameter,
        X=np.pi * diameter**2 / 4.0,
        diameter=diameter,
        friction=friction,
        n_slack=len(slack),
        alpha_in_profiles=tuple(ain),
        alpha_out_profiles=tuple(aout),
        A=A,
    )


def incidence(rn: RefinedNetwork):
    """Return ``(A, A_s, A_d)`` as sparse CSR matrices."""
    return rn.A, rn.A_s, rn.A_d


def weighted_incidence(rn: RefinedNetwork, t: float):
    """Return ``(B, B_s, B_d)`` at time ``t``; ``sign(B) == A``."""
    t = float(t)
    ain, aout = rn.alphas(t)
    if np.any(ain <= 0) or np.any(aout <= 0):
        raise InvalidArgument(f"compression ratio not positive at t={t}")
    E = rn.n_edges
    cols = np.arange(E)
    B = sp.csr_matrix(
        (np.concatenate([-ain, aout]), (np.concatenate([rn.tail, rn.head]), np.concatenate([cols, cols]))),
        shape=(rn.n_nodes, E),
    )
    return B, B[: rn.n_slack], B[rn.n_slack :]
