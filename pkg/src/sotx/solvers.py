"""Exact and entropic solvers for dense transportation problems.

The exact path is a transportation network simplex on the bipartite graph:
spanning-tree basis, northwest-corner start, steepest reduced-cost pricing
with deterministic tie-breaking, and a Bland-rule fallback that engages
after a run of degenerate pivots (anti-cycling). Vertex solutions keep plans
sparse and map-like, and the tree duals are support-tight by construction.

The entropic path is log-domain Sinkhorn scaling with weighted marginals.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

__all__ = ["transportation_simplex", "sinkhorn_log", "SimplexResult"]


class SimplexResult:
    def __init__(self, flows, u, v, iterations, objective):
        self.flows = flows          # dict (i, j) -> mass on basic arcs
        self.u = u                  # source duals
        self.v = v                  # target duals
        self.iterations = iterations
        self.objective = objective


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial spanning-tree basis; exactly m + n - 1 arcs including zeros."""
    m, n = len(a), len(b)
    ra, rb = a.copy(), b.copy()
    arcs = []
    i = j = 0
    while True:
        f = min(ra[i], rb[j])
        arcs.append((i, j, f))
        ra[i] -= f
        rb[j] -= f
        if i == m - 1 and j == n - 1:
            break
        if ra[i] <= rb[j] and i < m - 1:
            i += 1
        elif j < n - 1:
            j += 1
        else:
            i += 1
    return arcs


class _TreeBasis:
    """Spanning tree over sources 0..m-1 and targets m..m+n-1."""

    def __init__(self, m, n, arcs):
        self.m, self.n = m, n
        self.adj = [[] for _ in range(m + n)]
        self.flow = {}
        for i, j, f in arcs:
            self.add(i, j, f)

    def add(self, i, j, f):
        self.flow[(i, j)] = f
        self.adj[i].append(j + self.m)
        self.adj[j + self.m].append(i)

    def remove(self, i, j):
        del self.flow[(i, j)]
        self.adj[i].remove(j + self.m)
        self.adj[j + self.m].remove(i)

    def duals(self, C):
        m = self.m
        u = np.zeros(m)
        v = np.zeros(self.n)
        seen = np.zeros(m + self.n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            x = stack.pop()
            for y in self.adj[x]:
                if not seen[y]:
                    seen[y] = True
                    if x < m:
                        v[y - m] = C[x, y - m] - u[x]
                    else:
                        u[y] = C[y, x - m] - v[x - m]
                    stack.append(y)
        return u, v

    def node_path(self, src, dst):
        prev = {src: None}
        stack = [src]
        while stack:
            x = stack.pop()
            if x == dst:
                break
            for y in self.adj[x]:
                if y not in prev:
                    prev[y] = x
                    stack.append(y)
        path = [dst]
        while prev[path[-1]] is not None:
            path.append(prev[path[-1]])
        path.reverse()
        return path


def transportation_simplex(C: np.ndarray, a: np.ndarray, b: np.ndarray,
                           tol: float | None = None,
                           max_iter: int | None = None) -> SimplexResult:
    """Solve min <C, X> with row sums a and column sums b, X >= 0.

    Requires sum(a) == sum(b) (caller balances). Returns basic flows, duals
    satisfying u_i + v_j <= C_ij with equality on every basic arc, and the
    objective.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = C.shape
    if len(a) != m or len(b) != n:
        raise ValueError("marginal lengths do not match the cost matrix")
    if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, a.sum()):
        raise ValueError("supplies and demands must balance")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be nonnegative")
    scale = 1.0 + float(np.abs(C).max()) if C.size else 1.0
    if tol is None:
        tol = 1e-11 * scale
    if max_iter is None:
        max_iter = 2000 + 60 * (m + n)

    basis = _TreeBasis(m, n, _northwest_corner(a, b))
    degen_run = 0
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise RuntimeError(f"simplex exceeded {max_iter} pivots")
        u, v = basis.duals(C)
        R = C - u[:, None] - v[None, :]
        flat = R.ravel()
        if degen_run > m + n:
            eligible = np.flatnonzero(flat < -tol)
            if len(eligible) == 0:
                break
            e = int(eligible[0])  # Bland: first eligible index
        else:
            e = int(np.argmin(flat))
            if flat[e] >= -tol:
                break
        ei, ej = divmod(e, n)

        nodes = basis.node_path(ej + m, ei)
        cycle = [(ei, ej)]
        for k in range(len(nodes) - 1):
            x, y = nodes[k], nodes[k + 1]
            cycle.append((x, y - m) if x < m else (y, x - m))
        # alternate orientation around the cycle; entering arc gains flow
        theta = np.inf
        leave = None
        for pos in range(1, len(cycle)):
            if pos % 2 == 1:  # reverse arcs lose flow
                f = basis.flow[cycle[pos]]
                if f < theta - 1e-15 or (abs(f - theta) <= 1e-15 and
                                         (leave is None or cycle[pos] < leave)):
                    theta = f
                    leave = cycle[pos]
        degen_run = degen_run + 1 if theta <= tol else 0
        for pos in range(1, len(cycle)):
            basis.flow[cycle[pos]] += theta if pos % 2 == 0 else -theta
        basis.remove(*leave)
        basis.add(ei, ej, theta)

    u, v = basis.duals(C)
    flows = {arc: f for arc, f in basis.flow.items()}
    objective = float(sum(C[i, j] * f for (i, j), f in flows.items()))
    return SimplexResult(flows, u, v, it, objective)


def sinkhorn_log(C: np.ndarray, a: np.ndarray, b: np.ndarray, epsilon: float,
                 tol: float = 1e-7, max_iter: int = 200_000,
                 epsilon_scaling: bool = True
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Log-domain Sinkhorn scaling with weighted marginals.

    Iterates until the row-marginal error (the columns are exact after each
    g-update) drops below ``tol`` in maximum absolute value relative to the
    total mass. With ``epsilon_scaling`` the regularization anneals
    geometrically from a coarse value down to the target, warm-starting the
    duals; this is what makes small epsilon affordable. Raises on
    non-convergence with the residual in the message.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mass = a.sum()
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    c_scale = float(np.abs(C).max()) if C.size else 1.0
    if epsilon_scaling and epsilon < c_scale / 10.0:
        n_stages = int(np.ceil(np.log(c_scale / (10.0 * epsilon)) / np.log(2.0)))
        stages = list(np.geomspace(c_scale / 10.0, epsilon, n_stages + 1))
    else:
        stages = [epsilon]
    it = 0
    err = np.inf
    for stage, eps in enumerate(stages):
        final = stage == len(stages) - 1
        Ce = C / eps
        stage_iters = max_iter if final else max(200, max_iter // (4 * len(stages)))
        start = it
        while it - start < stage_iters:
            it += 1
            f = eps * (log_a - logsumexp(g[None, :] / eps - Ce, axis=1))
            g = eps * (log_b - logsumexp(f[:, None] / eps - Ce, axis=0))
            if it % 10 == 0 or it - start < 10:
                log_pi = (f[:, None] + g[None, :]) / eps - Ce
                rows = np.exp(logsumexp(log_pi, axis=1))
                err = float(np.abs(rows - a).max() / mass)
                if err < (tol if final else 100.0 * tol):
                    break
    if err >= tol:
        raise RuntimeError(f"sinkhorn did not converge: marginal residual {err:.3e}")
    pi = np.exp((f[:, None] + g[None, :]) / epsilon - C / epsilon)
    return pi, f, g, it
