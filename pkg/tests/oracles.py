"""Independent reference computations used by the tests."""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from gaspipe.network import Junction, Network, Pipe


def exact_rank(M) -> int:
    """Rank by fraction-free Gaussian elimination over Python integers."""
    rows = [[int(v) for v in r] for r in np.asarray(M)]
    if not rows:
        return 0
    n_rows, n_cols = len(rows), len(rows[0])
    rank, prev = 0, 1
    for col in range(n_cols):
        piv = next((r for r in range(rank, n_rows) if rows[r][col] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        p = rows[rank][col]
        for r in range(rank + 1, n_rows):
            a = rows[r][col]
            # Bareiss update keeps every entry an integer minor
            rows[r] = [(p * rows[r][c] - a * rows[rank][c]) // prev for c in range(n_cols)]
        prev = p
        rank += 1
        if rank == n_rows:
            break
    return rank


def random_connected_edges(rng, n_nodes, extra=None):
    """Random spanning tree plus extra chords, random orientation, no repeated pairs."""
    order = rng.permutation(n_nodes)
    edges = set()
    for i in range(1, n_nodes):
        a, b = int(order[i]), int(order[rng.integers(i)])
        edges.add((a, b) if rng.random() < 0.5 else (b, a))
    n_extra = rng.integers(0, n_nodes) if extra is None else extra
    for _ in range(n_extra):
        a, b = (int(v) for v in rng.choice(n_nodes, 2, replace=False))
        if (a, b) not in edges and (b, a) not in edges:
            edges.add((a, b))
    return sorted(edges)


def network_from_edges(n_nodes, edges, length=1000.0):
    junctions = [Junction(i + 1, "slack" if i == 0 else "nonslack", 0.5, 2.0) for i in range(n_nodes)]
    pipes = [Pipe(k + 1, a + 1, b + 1, length, 0.5, 0.01) for k, (a, b) in enumerate(edges)]
    return Network(junctions, pipes)


def colored_fd_jacobian(fun, x, pattern, h=1e-6):
    """Central-difference Jacobian that perturbs structurally orthogonal columns together.

    Returns ``(J_fd, leak)``: ``J_fd`` holds the difference quotients at the
    positions of ``pattern``; ``leak`` is the largest difference quotient seen in
    a row that no perturbed column is supposed to touch (a missing entry).
    """
    P = sp.csc_matrix(pattern)
    P.data[:] = 1.0
    m, n = P.shape
    colors = -np.ones(n, dtype=int)
    row_used = []
    for j in range(n):
        rows_j = P.indices[P.indptr[j] : P.indptr[j + 1]]
        for c, used in enumerate(row_used):
            if not used[rows_j].any():
                colors[j] = c
                used[rows_j] = True
                break
        else:
            used = np.zeros(m, dtype=bool)
            used[rows_j] = True
            row_used.append(used)
            colors[j] = len(row_used) - 1
    vals = np.zeros(P.nnz)
    leak = 0.0
    for c, used in enumerate(row_used):
        cols = np.flatnonzero(colors == c)
        step = h * np.maximum(1.0, np.abs(x[cols]))
        e = np.zeros_like(x)
        e[cols] = step
        diff = fun(x + e) - fun(x - e)
        if np.any(~used):
            leak = max(leak, float(np.max(np.abs(diff[~used]))) / (2 * float(np.min(step))))
        for j, hj in zip(cols, step):
            sl = slice(P.indptr[j], P.indptr[j + 1])
            vals[sl] = diff[P.indices[sl]] / (2 * hj)
    return sp.csc_matrix((vals, P.indices, P.indptr), shape=(m, n)), leak


class ToyProblem:
    """``0.5 x'Hx + g'x`` subject to ``Ax = b`` and optional bounds, in the solver's interface."""

    def __init__(self, H, g, A=None, b=None, lb=None, ub=None):
        self.H = sp.csc_matrix(np.asarray(H, dtype=float))
        self.g0 = np.asarray(g, dtype=float)
        n = self.g0.size
        self.A = sp.csr_matrix(np.asarray(A, dtype=float)) if A is not None else sp.csr_matrix((0, n))
        self.b = np.asarray(b if b is not None else [], dtype=float)
        self.lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        self.ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
        self.n, self.m = n, self.A.shape[0]

    def objective(self, x):
        return float(0.5 * x @ (self.H @ x) + self.g0 @ x)

    def gradient(self, x):
        return self.H @ x + self.g0

    def objective_hessian(self):
        return self.H

    def constraints(self, x):
        return self.A @ x - self.b

    def jacobian(self, x):
        return self.A

    def constraint_hessian(self, x, lam):
        return sp.csc_matrix((self.n, self.n))


def steady_pipe_density(rho_in, mass_flow, area, friction, diameter, a, x):
    """Isothermal steady density along a pipe: ``rho^2 = rho_in^2 - lambda phi|phi| x / (D a^2)``."""
    phi = mass_flow / area
    return np.sqrt(rho_in**2 - friction * phi * abs(phi) * np.asarray(x) / (diameter * a * a))


def n_subsets(n, sizes):
    return sum(math.comb(n, k) for k in sizes)
