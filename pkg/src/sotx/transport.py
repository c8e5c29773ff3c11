"""Four-block signed Kantorovich problems: assembly, solves, maps, checks.

Same-sign mass moves at the quadratic cost c(x, y) = |x - y|^2 / 2; opposite
signs pay c plus a convex positional penalty. The four couplings share
linked marginals (each source splits between the two target signs), so the
problem is solved as one transportation LP over the concatenated clouds with
the block cost [[c, c+lam], [c+lam, c]]; the optimum induces the four plans
and the inter-sign split.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from sotx.measures import Cloud, balance_pair
from sotx.solvers import sinkhorn_log, transportation_simplex

__all__ = [
    "CostSpec",
    "TransportProblem",
    "BlockPlan",
    "DualPotentials",
    "TransportMap",
    "block_cost",
    "build_block_problem",
    "solve_exact",
    "solve_entropic",
    "extract_map",
    "check_cyclical_monotonicity",
    "duality_gap",
]

BLOCKS = ("pp", "mm", "pm", "mp")
INTRA_BLOCKS = ("pp", "mm")
INTER_BLOCKS = ("pm", "mp")
SPLIT_ATOL = 1e-9


def squared_distance_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if len(X) == 0 or len(Y) == 0:
        return np.zeros((len(X), len(Y)))
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class CostSpec:
    """Intra-sign quadratic cost plus an inter-sign convex penalty.

    The default penalty is ``alpha * |x - y|^2`` whose y-Hessian eigenvalues
    are exactly ``2 alpha``. A custom penalty must come with its eigenvalue
    bounds and, for the structure checks, derivative callables.
    """

    kind: str = "quadratic_penalty"
    alpha: float = 0.5
    penalty: object = None            # callable (X, Y) -> (n, m) penalty matrix
    eigenbounds: tuple[float, float] | None = None
    penalty_grad_y: object = None     # callable (x, y) -> vector
    penalty_hess_yy: object = None    # callable (x, y) -> matrix
    penalty_hess_xy: object = None    # callable (x, y) -> matrix

    def __post_init__(self):
        if self.kind == "quadratic_penalty":
            if self.alpha < 0:
                raise ValueError("alpha must be nonnegative")
        elif self.kind == "custom":
            if self.penalty is None or self.eigenbounds is None:
                raise ValueError("custom penalty requires callable and eigenbounds")
            a0, b0 = self.eigenbounds
            if not (0 < a0 <= b0):
                raise ValueError("custom eigenbounds must satisfy 0 < alpha0 <= beta0")
        else:
            raise ValueError(f"unknown cost kind {self.kind!r}")

    def intra(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return 0.5 * squared_distance_matrix(X, Y)

    def penalty_matrix(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        if self.kind == "quadratic_penalty":
            return self.alpha * squared_distance_matrix(X, Y)
        return np.asarray(self.penalty(X, Y), dtype=float)

    def inter(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return self.intra(X, Y) + self.penalty_matrix(X, Y)

    def penalty_eigenbounds(self) -> tuple[float, float]:
        if self.kind == "quadratic_penalty":
            return (2.0 * self.alpha, 2.0 * self.alpha)
        return tuple(self.eigenbounds)

    def grad_y_penalty(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "quadratic_penalty":
            return 2.0 * self.alpha * (np.asarray(y) - np.asarray(x))
        if self.penalty_grad_y is None:
            raise ValueError("custom penalty lacks a gradient callable")
        return np.asarray(self.penalty_grad_y(x, y), dtype=float)

    def hess_yy_penalty(self, x, y, dim: int) -> np.ndarray:
        if self.kind == "quadratic_penalty":
            return 2.0 * self.alpha * np.eye(dim)
        if self.penalty_hess_yy is None:
            raise ValueError("custom penalty lacks a yy-Hessian callable")
        return np.asarray(self.penalty_hess_yy(x, y), dtype=float)

    def hess_xy_penalty(self, x, y, dim: int) -> np.ndarray:
        if self.kind == "quadratic_penalty":
            return -2.0 * self.alpha * np.eye(dim)
        if self.penalty_hess_xy is None:
            raise ValueError("custom penalty lacks an xy-Hessian callable")
        return np.asarray(self.penalty_hess_xy(x, y), dtype=float)

    def verify_eigenbounds(self, X: np.ndarray, Y: np.ndarray, samples: int = 32,
                           seed: int = 0, step: float = 1e-4) -> tuple[float, float]:
        """Sampled finite-difference y-Hessian eigenvalue range of the penalty."""
        rng = np.random.default_rng(seed)
        dim = X.shape[1]
        lo, hi = np.inf, -np.inf
        for _ in range(samples):
            x = X[rng.integers(len(X))]
            y = Y[rng.integers(len(Y))]
            H = np.zeros((dim, dim))
            for k in range(dim):
                for l in range(dim):
                    ek = np.eye(dim)[k] * step
                    el = np.eye(dim)[l] * step
                    vals = [self.penalty_matrix(x[None, :], (y + sk * ek + sl * el)[None, :])[0, 0]
                            for sk in (1, -1) for sl in (1, -1)]
                    H[k, l] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * step ** 2)
            eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
            lo = min(lo, float(eigs.min()))
            hi = max(hi, float(eigs.max()))
        return lo, hi

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha,
                "eigenbounds": list(self.penalty_eigenbounds())}


def block_cost(X: np.ndarray, Y: np.ndarray, cost: CostSpec, intra: bool
               ) -> np.ndarray:
    return cost.intra(X, Y) if intra else cost.inter(X, Y)


@dataclass
class TransportProblem:
    """Concatenated four-block problem with lazily materialized costs."""

    source_plus: Cloud
    source_minus: Cloud
    target_plus: Cloud
    target_minus: Cloud
    cost: CostSpec
    signed_balanced: bool = True
    _cost_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def source(self, sign: str) -> Cloud:
        return self.source_plus if sign == "p" else self.source_minus

    def target(self, sign: str) -> Cloud:
        return self.target_plus if sign == "p" else self.target_minus

    def block(self, kind: str) -> np.ndarray:
        """Cost table of one block, materialized on demand."""
        if kind not in self._cost_cache:
            X = self.source(kind[0]).points
            Y = self.target(kind[1]).points
            self._cost_cache[kind] = block_cost(X, Y, self.cost, kind in INTRA_BLOCKS)
        return self._cost_cache[kind]

    @property
    def total_points(self) -> int:
        return (self.source_plus.size + self.source_minus.size
                + self.target_plus.size + self.target_minus.size)

    @property
    def total_source_mass(self) -> float:
        return self.source_plus.mass + self.source_minus.mass

    @property
    def dim(self) -> int:
        for c in (self.source_plus, self.source_minus, self.target_plus,
                  self.target_minus):
            if c.size:
                return c.points.shape[1]
        raise ValueError("empty problem")


def build_block_problem(mu_clouds: tuple[Cloud, Cloud],
                        nu_clouds: tuple[Cloud, Cloud], cost: CostSpec,
                        require_signed_balance: bool = True) -> TransportProblem:
    """Assemble the four-block problem from per-sign clouds.

    The target clouds are rescaled so total variations match exactly (the LP
    feasibility requirement); imbalance beyond 1e-8 relative is an error.
    With ``require_signed_balance`` (default) the signed totals must also
    agree, which is what forces the two inter-sign plan masses to coincide;
    window scans turn it off. Disjointness of the four support products is
    checked and warned about, never raised.
    """
    nu_plus, nu_minus = balance_pair(mu_clouds, nu_clouds,
                                     require_signed_balance=require_signed_balance)
    problem = TransportProblem(source_plus=mu_clouds[0], source_minus=mu_clouds[1],
                               target_plus=nu_plus, target_minus=nu_minus,
                               cost=cost, signed_balanced=require_signed_balance)
    for a, b, label in ((mu_clouds[0], mu_clouds[1], "source"),
                        (nu_plus, nu_minus, "target")):
        if a.size and b.size:
            d = squared_distance_matrix(a.points, b.points)
            if float(d.min()) <= 0.0:
                warnings.warn(f"{label} plus/minus supports intersect; the four "
                              "support products are not disjoint", RuntimeWarning)
    return problem


@dataclass
class BlockPlan:
    """Four sparse couplings (block-local indices) plus solver metadata."""

    blocks: dict
    objective: float
    solver: dict
    marginal_error: float = 0.0

    def block_mass(self, kind: str) -> float:
        i, j, m = self.blocks[kind]
        return float(m.sum()) if len(m) else 0.0

    @property
    def inter_mass(self) -> float:
        return self.block_mass("pm") + self.block_mass("mp")

    def support_size(self, kind: str) -> int:
        return len(self.blocks[kind][2])

    def to_dict(self) -> dict:
        out = {"objective": self.objective, "solver": self.solver,
               "marginal_error": self.marginal_error, "blocks": {}}
        for kind in BLOCKS:
            i, j, m = self.blocks[kind]
            out["blocks"][kind] = [[int(ii), int(jj), float(mm)]
                                   for ii, jj, mm in zip(i, j, m)]
        return out


@dataclass
class DualPotentials:
    """Discrete duals on the four clouds, centered for stable comparisons."""

    phi_plus: np.ndarray
    phi_minus: np.ndarray
    psi_plus: np.ndarray
    psi_minus: np.ndarray

    def feasibility_slack(self, p: TransportProblem) -> float:
        """Minimum slack of phi + psi <= block cost over all pairs (>= -eps)."""
        worst = np.inf
        for kind in BLOCKS:
            phi = self.phi_plus if kind[0] == "p" else self.phi_minus
            psi = self.psi_plus if kind[1] == "p" else self.psi_minus
            if len(phi) == 0 or len(psi) == 0:
                continue
            slack = p.block(kind) - phi[:, None] - psi[None, :]
            worst = min(worst, float(slack.min()))
        return worst

    def dual_objective(self, p: TransportProblem) -> float:
        return float(self.phi_plus @ p.source_plus.weights
                     + self.phi_minus @ p.source_minus.weights
                     + self.psi_plus @ p.target_plus.weights
                     + self.psi_minus @ p.target_minus.weights)

    def to_dict(self) -> dict:
        return {"phi_plus": self.phi_plus.tolist(),
                "phi_minus": self.phi_minus.tolist(),
                "psi_plus": self.psi_plus.tolist(),
                "psi_minus": self.psi_minus.tolist()}


def _lex_order(points: np.ndarray) -> np.ndarray:
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    keys = tuple(points[:, k] for k in reversed(range(points.shape[1])))
    return np.lexsort(keys)


def _assemble(p: TransportProblem):
    """Sorted concatenation of sources and targets plus the block cost matrix.

    Group-wise lexicographic sorting makes the northwest-corner start
    near-optimal on one-dimensional instances.
    """
    op = _lex_order(p.source_plus.points)
    om = _lex_order(p.source_minus.points)
    oq = _lex_order(p.target_plus.points)
    on = _lex_order(p.target_minus.points)
    SP = p.source_plus.points[op]
    SM = p.source_minus.points[om]
    TP = p.target_plus.points[oq]
    TM = p.target_minus.points[on]
    a = np.concatenate([p.source_plus.weights[op], p.source_minus.weights[om]])
    b = np.concatenate([p.target_plus.weights[oq], p.target_minus.weights[on]])
    rows = []
    if len(SP):
        rows.append(np.concatenate(
            [block_cost(SP, TP, p.cost, True), block_cost(SP, TM, p.cost, False)],
            axis=1) if len(TP) and len(TM) else
            (block_cost(SP, TP, p.cost, True) if len(TP)
             else block_cost(SP, TM, p.cost, False)))
    if len(SM):
        rows.append(np.concatenate(
            [block_cost(SM, TP, p.cost, False), block_cost(SM, TM, p.cost, True)],
            axis=1) if len(TP) and len(TM) else
            (block_cost(SM, TP, p.cost, False) if len(TP)
             else block_cost(SM, TM, p.cost, True)))
    C = np.concatenate(rows, axis=0) if rows else np.zeros((0, 0))
    return C, a, b, (op, om, oq, on)


def _split_blocks(p, flows_or_dense, orders, dense: bool):
    """Global (sorted) couplings back to block-local original indices."""
    op, om, oq, on = orders
    np_, nm = len(op), len(om)
    ntp = len(oq)
    coo = {kind: ([], [], []) for kind in BLOCKS}
    if dense:
        ii, jj = np.nonzero(flows_or_dense > 0)
        entries = zip(ii, jj, flows_or_dense[ii, jj])
    else:
        entries = ((i, j, m) for (i, j), m in flows_or_dense.items() if m > 0)
    for i, j, m in entries:
        s_sign = "p" if i < np_ else "m"
        t_sign = "p" if j < ntp else "m"
        si = op[i] if s_sign == "p" else om[i - np_]
        tj = oq[j] if t_sign == "p" else on[j - ntp]
        kind = s_sign + t_sign
        coo[kind][0].append(int(si))
        coo[kind][1].append(int(tj))
        coo[kind][2].append(float(m))
    return {kind: (np.array(v[0], dtype=int), np.array(v[1], dtype=int),
                   np.array(v[2])) for kind, v in coo.items()}


def _marginal_error(p: TransportProblem, blocks: dict) -> float:
    """Max relative linked-marginal violation across the four constraints."""
    worst = 0.0
    total = p.total_source_mass
    for cloud, kinds, axis in (
            (p.source_plus, ("pp", "pm"), 0), (p.source_minus, ("mm", "mp"), 0),
            (p.target_plus, ("pp", "mp"), 1), (p.target_minus, ("mm", "pm"), 1)):
        if cloud.size == 0:
            continue
        sums = np.zeros(cloud.size)
        for kind in kinds:
            i, j, m = blocks[kind]
            np.add.at(sums, i if axis == 0 else j, m)
        worst = max(worst, float(np.abs(sums - cloud.weights).max()) / total)
    return worst


def _flow_components(p: TransportProblem, blocks: dict):
    """Union-find components of the positive-flow support graph."""
    np_, nm = p.source_plus.size, p.source_minus.size
    ntp, ntm = p.target_plus.size, p.target_minus.size
    n_nodes = np_ + nm + ntp + ntm
    parent = list(range(n_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[ry] = rx

    def src_node(kind, i):
        return i if kind[0] == "p" else np_ + i

    def tgt_node(kind, j):
        base = np_ + nm
        return base + (j if kind[1] == "p" else ntp + j)

    for kind in BLOCKS:
        i, j, m = blocks[kind]
        for ii, jj in zip(i, j):
            union(src_node(kind, ii), tgt_node(kind, jj))
    roots = [find(x) for x in range(n_nodes)]
    return roots, np_, nm, ntp, ntm


def _center_duals(p: TransportProblem, blocks: dict, duals: DualPotentials
                  ) -> DualPotentials:
    """Pin the free constant between decoupled sign clusters.

    When the optimal plan carries no inter-sign flow, the plus and minus dual
    groups are only linked by inequality constraints and the simplex vertex
    can sit anywhere on the optimal dual face. The shift below maximizes the
    smallest own-branch dominance margin (the quantity the partition reads),
    staying inside the feasible dual face, with a closed-form optimum since
    every margin is affine in the shift.
    """
    if min(p.source_plus.size + p.target_plus.size,
           p.source_minus.size + p.target_minus.size) == 0:
        return duals
    roots, np_, nm, ntp, ntm = _flow_components(p, blocks)
    plus_nodes = set(range(np_)) | set(range(np_ + nm, np_ + nm + ntp))
    comp_signs = {}
    for node, root in enumerate(roots):
        sign = "p" if node in plus_nodes else "m"
        comp_signs.setdefault(root, set()).add(sign)
    if any(len(s) > 1 for s in comp_signs.values()):
        return duals  # inter-sign flow pins the relative constant
    if len(comp_signs) < 2:
        return duals

    SP, SM = p.source_plus.points, p.source_minus.points
    TP, TM = p.target_plus.points, p.target_minus.points
    u_plus_own = 0.5 * np.einsum("ij,ij->i", SP, SP) - duals.phi_plus
    u_minus_own = 0.5 * np.einsum("ij,ij->i", SM, SM) - duals.phi_minus
    v_plus_own = 0.5 * np.einsum("ij,ij->i", TP, TP) - duals.psi_plus
    v_minus_own = 0.5 * np.einsum("ij,ij->i", TM, TM) - duals.psi_minus

    def transform(X, Y, v_own):
        if len(X) == 0 or len(Y) == 0:
            return np.full(len(X), -np.inf)
        return (X @ Y.T - v_own[None, :]).max(axis=1)

    margins_up = []   # margins that grow with the shift
    margins_down = []
    if len(SP):
        margins_up.append(u_plus_own - transform(SP, TM, v_minus_own))
    if len(TM):
        margins_up.append(v_minus_own - transform(TM, SP, u_plus_own))
    if len(SM):
        margins_down.append(u_minus_own - transform(SM, TP, v_plus_own))
    if len(TP):
        margins_down.append(v_plus_own - transform(TP, SM, u_minus_own))
    A = min(float(np.min(m)) for m in margins_up) if margins_up else np.inf
    B = min(float(np.min(m)) for m in margins_down) if margins_down else np.inf
    if not (np.isfinite(A) and np.isfinite(B)):
        return duals

    slack_pm = np.inf
    if len(SP) and len(TM):
        slack_pm = float((p.block("pm") - duals.phi_plus[:, None]
                          - duals.psi_minus[None, :]).min())
    slack_mp = np.inf
    if len(SM) and len(TP):
        slack_mp = float((p.block("mp") - duals.phi_minus[:, None]
                          - duals.psi_plus[None, :]).min())
    s = float(np.clip((B - A) / 2.0, -slack_pm, slack_mp))
    return DualPotentials(phi_plus=duals.phi_plus,
                          phi_minus=duals.phi_minus + s,
                          psi_plus=duals.psi_plus,
                          psi_minus=duals.psi_minus - s)


def solve_exact(p: TransportProblem, cap: int = 20_000
                ) -> tuple[BlockPlan, DualPotentials]:
    """Network-simplex solve of the block LP; vertex plan plus tight duals.

    The relative duality gap of the result is at most 1e-6 and every
    positive-mass pair is dual-tight (tree arcs satisfy the dual equality
    exactly).
    """
    if p.total_points > cap:
        raise ValueError(f"problem size {p.total_points} exceeds cap {cap}")
    if p.total_points == 0:
        raise ValueError("empty problem")
    C, a, b, orders = _assemble(p)
    res = transportation_simplex(C, a, b)
    blocks = _split_blocks(p, res.flows, orders, dense=False)
    op, om, oq, on = orders
    np_ = len(op)
    ntp = len(oq)
    phi_plus = np.zeros(p.source_plus.size)
    phi_minus = np.zeros(p.source_minus.size)
    psi_plus = np.zeros(p.target_plus.size)
    psi_minus = np.zeros(p.target_minus.size)
    phi_plus[op] = res.u[:np_]
    phi_minus[om] = res.u[np_:]
    psi_plus[oq] = res.v[:ntp]
    psi_minus[on] = res.v[ntp:]
    duals = DualPotentials(phi_plus, phi_minus, psi_plus, psi_minus)
    duals = _center_duals(p, blocks, duals)
    err = _marginal_error(p, blocks)
    plan = BlockPlan(blocks=blocks, objective=res.objective,
                     solver={"kind": "exact", "iterations": res.iterations},
                     marginal_error=err)
    _validate_plan(p, plan)
    return plan, duals


def solve_entropic(p: TransportProblem, epsilon: float, tol: float = 1e-7,
                   max_iter: int = 200_000) -> tuple[BlockPlan, DualPotentials]:
    """Log-domain scaling solve; dense plan, duals from the scaling variables."""
    C, a, b, orders = _assemble(p)
    pi, f, g, it = sinkhorn_log(C, a, b, epsilon, tol=tol, max_iter=max_iter)
    blocks = _split_blocks(p, pi, orders, dense=True)
    op, om, oq, on = orders
    np_, ntp = len(op), len(oq)
    phi_plus = np.zeros(p.source_plus.size)
    phi_minus = np.zeros(p.source_minus.size)
    psi_plus = np.zeros(p.target_plus.size)
    psi_minus = np.zeros(p.target_minus.size)
    phi_plus[op] = f[:np_]
    phi_minus[om] = f[np_:]
    psi_plus[oq] = g[:ntp]
    psi_minus[on] = g[ntp:]
    objective = float(np.sum(pi * C))
    err = _marginal_error(p, blocks)
    plan = BlockPlan(blocks=blocks, objective=objective,
                     solver={"kind": "entropic", "epsilon": epsilon,
                             "iterations": it},
                     marginal_error=err)
    _validate_plan(p, plan, entropic=True)
    return plan, DualPotentials(phi_plus, phi_minus, psi_plus, psi_minus)


def _validate_plan(p: TransportProblem, plan: BlockPlan, entropic: bool = False):
    rtol = 1e-7
    if plan.marginal_error > rtol:
        raise AssertionError(f"linked marginals violated: {plan.marginal_error:.3e}")
    if p.signed_balanced:
        imbalance = abs(plan.block_mass("pm") - plan.block_mass("mp"))
        if imbalance > rtol * max(1.0, p.total_source_mass):
            raise AssertionError(
                f"inter-sign plan masses differ by {imbalance:.3e} on a "
                "signed-balanced problem")


@dataclass
class TransportMap:
    """Barycentric collapse of a plan to one image point per source."""

    source_points: np.ndarray     # concatenated plus then minus sources
    source_weights: np.ndarray
    source_signs: np.ndarray      # +1 / -1 per source point
    image: np.ndarray
    dominant_block: list
    split: np.ndarray

    @property
    def n_split(self) -> int:
        return int(self.split.sum())

    def plus_rows(self) -> np.ndarray:
        return np.flatnonzero(self.source_signs > 0)

    def to_dict(self) -> dict:
        return {"image": self.image.tolist(),
                "dominant_block": list(self.dominant_block),
                "split": self.split.astype(bool).tolist()}


def extract_map(plan: BlockPlan, p: TransportProblem) -> TransportMap:
    """Per source point: dominant block, barycentric image, split flag.

    The dominant block is the one carrying the larger mass share (ties go to
    the intra block, then lexicographically smallest target index decides the
    barycenter's composition ordering, which is immaterial to the value).
    """
    sizes = {"p": p.source_plus.size, "m": p.source_minus.size}
    targets = {"p": p.target_plus.points, "m": p.target_minus.points}
    dim = p.dim
    total = sizes["p"] + sizes["m"]
    image = np.zeros((total, dim))
    dominant = [""] * total
    split = np.zeros(total, dtype=bool)
    counts = np.zeros(total, dtype=int)

    mass_by_block = {s: {t: np.zeros(sizes[s]) for t in "pm"} for s in "pm"}
    bary = {s: {t: np.zeros((sizes[s], dim)) for t in "pm"} for s in "pm"}
    for kind in BLOCKS:
        i, j, m = plan.blocks[kind]
        if len(m) == 0:
            continue
        s, t = kind[0], kind[1]
        np.add.at(mass_by_block[s][t], i, m)
        np.add.at(bary[s][t], i, m[:, None] * targets[t][j])
        np.add.at(counts, i + (0 if s == "p" else sizes["p"]),
                  (m > SPLIT_ATOL).astype(int))
    labels = {"pp": "PP", "pm": "PM", "mp": "MP", "mm": "MM"}
    for s, offset in (("p", 0), ("m", sizes["p"])):
        for local in range(sizes[s]):
            mp_, mm_ = mass_by_block[s]["p"][local], mass_by_block[s]["m"][local]
            if s == "p":  # intra block wins ties
                t = "p" if mp_ >= mm_ else "m"
            else:
                t = "m" if mm_ >= mp_ else "p"
            dom_mass = mass_by_block[s][t][local]
            g = offset + local
            if dom_mass > 0:
                image[g] = bary[s][t][local] / dom_mass
            dominant[g] = labels[s + t]
            split[g] = counts[g] > 1
    dim_pts = p.source_plus.points if sizes["p"] else p.source_minus.points
    src_pts = np.concatenate([
        p.source_plus.points.reshape(-1, dim_pts.shape[1]),
        p.source_minus.points.reshape(-1, dim_pts.shape[1])])
    src_w = np.concatenate([p.source_plus.weights, p.source_minus.weights])
    signs = np.concatenate([np.ones(sizes["p"]), -np.ones(sizes["m"])])
    return TransportMap(source_points=src_pts, source_weights=src_w,
                        source_signs=signs, image=image, dominant_block=dominant,
                        split=split)


def check_cyclical_monotonicity(plan: BlockPlan, cost: CostSpec,
                                p: TransportProblem, maxlen: int = 4,
                                samples: int = 1000, seed: int = 0,
                                gain_tol: float = 1e-9) -> dict:
    """Sample support cycles per block; report strict cost-lowering swaps.

    Intra blocks use the plain quadratic cost, inter blocks the penalized
    one. A violation is a cycle whose cyclic target shift lowers the summed
    block cost by more than ``gain_tol``.
    """
    rng = np.random.default_rng(seed)
    sources = {"p": p.source_plus.points, "m": p.source_minus.points}
    targets = {"p": p.target_plus.points, "m": p.target_minus.points}
    violations = []
    checked = 0
    max_gain = 0.0
    kinds = [k for k in BLOCKS if plan.support_size(k) > 0]
    if not kinds:
        return {"cycles": 0, "violations": [], "max_gain": 0.0, "pass": True}
    for c in range(samples):
        kind = kinds[c % len(kinds)]
        i, j, m = plan.blocks[kind]
        if len(m) < 2:
            continue
        k = int(rng.integers(2, maxlen + 1))
        k = min(k, len(m))
        sel = rng.choice(len(m), size=k, replace=False)
        X = sources[kind[0]][i[sel]]
        Y = targets[kind[1]][j[sel]]
        Cb = block_cost(X, Y, cost, kind in INTRA_BLOCKS)
        orig = float(np.trace(Cb))
        shifted = float(Cb[np.arange(k), (np.arange(k) + 1) % k].sum())
        gain = orig - shifted
        checked += 1
        max_gain = max(max_gain, gain)
        if gain > gain_tol:
            violations.append({"block": kind,
                               "pairs": [[int(a), int(bb)] for a, bb
                                         in zip(i[sel], j[sel])],
                               "gain": gain})
    return {"cycles": checked, "violations": violations, "max_gain": max_gain,
            "pass": len(violations) == 0}


def duality_gap(plan: BlockPlan, duals: DualPotentials, p: TransportProblem,
                feas_tol: float = 1e-6) -> float:
    """Primal objective minus dual objective (zero at LP optimality)."""
    primal = 0.0
    for kind in BLOCKS:
        i, j, m = plan.blocks[kind]
        if len(m) == 0:
            continue
        X = p.source(kind[0]).points[i]
        Y = p.target(kind[1]).points[j]
        diff = X - Y
        c = 0.5 * np.einsum("ij,ij->i", diff, diff)
        if kind in INTER_BLOCKS:
            pen = np.array([p.cost.penalty_matrix(x[None, :], y[None, :])[0, 0]
                            for x, y in zip(X, Y)]) \
                if p.cost.kind == "custom" else 2.0 * p.cost.alpha * c
            c = c + pen
        primal += float(m @ c)
    dual = duals.dual_objective(p)
    slack = duals.feasibility_slack(p)
    if slack < -feas_tol * (1.0 + abs(primal)):
        warnings.warn(f"dual potentials infeasible by {-slack:.3e}", RuntimeWarning)
    return primal - dual
