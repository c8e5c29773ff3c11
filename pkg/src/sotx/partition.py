"""Ambient potentials, the four-region labeling, and the summary statistics.

Discrete duals extend to the whole space by block-specific conjugation: the
plus source branch is the sup over plus targets of ``x . y - v(y)`` (and
symmetrically), after the quadratic flip ``u = |x|^2/2 - phi``. Labels read
the sign of the branch gap at the source and at its realized image, with a
separation parameter delta and a tie band around it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sotx.measures import Cloud
from sotx.transport import (
    BLOCKS,
    INTER_BLOCKS,
    BlockPlan,
    CostSpec,
    DualPotentials,
    TransportMap,
    TransportProblem,
    build_block_problem,
    extract_map,
    solve_exact,
)

__all__ = [
    "AmbientPotentials",
    "PartitionParams",
    "PartitionLabels",
    "build_potentials",
    "assign_regions",
    "signed_texture_distance",
    "inter_sign_ratio",
    "regime_scan",
]

LABELS = ("PP", "MM", "PM", "MP", "UNASSIGNED")


@dataclass
class AmbientPotentials:
    """Evaluators for the branch potentials and their gradients.

    Branch values are discrete Legendre transforms over the matching sign's
    samples; gradients are the transform's argmax target (exact at vertices
    of the dual polytope, no grid differencing).
    """

    problem: TransportProblem
    duals: DualPotentials

    def _own_u(self, sign: str) -> np.ndarray:
        cloud = self.problem.source(sign)
        phi = self.duals.phi_plus if sign == "p" else self.duals.phi_minus
        return 0.5 * np.einsum("ij,ij->i", cloud.points, cloud.points) - phi

    def _own_v(self, sign: str) -> np.ndarray:
        cloud = self.problem.target(sign)
        psi = self.duals.psi_plus if sign == "p" else self.duals.psi_minus
        return 0.5 * np.einsum("ij,ij->i", cloud.points, cloud.points) - psi

    def _sup_transform(self, X: np.ndarray, Y: np.ndarray, flip: np.ndarray,
                       return_arg: bool = False):
        X = np.atleast_2d(X)
        if len(Y) == 0:
            vals = np.full(len(X), -np.inf)
            return (vals, np.full(len(X), -1)) if return_arg else vals
        scores = X @ Y.T - flip[None, :]
        arg = scores.argmax(axis=1)
        vals = scores[np.arange(len(X)), arg]
        return (vals, arg) if return_arg else vals

    def u_plus(self, X) -> np.ndarray:
        return self._sup_transform(X, self.problem.target_plus.points, self._own_v("p"))

    def u_minus(self, X) -> np.ndarray:
        return self._sup_transform(X, self.problem.target_minus.points, self._own_v("m"))

    def v_plus(self, Y) -> np.ndarray:
        return self._sup_transform(Y, self.problem.source_plus.points, self._own_u("p"))

    def v_minus(self, Y) -> np.ndarray:
        return self._sup_transform(Y, self.problem.source_minus.points, self._own_u("m"))

    def phi(self, X) -> np.ndarray:
        return np.maximum(self.u_plus(X), self.u_minus(X))

    def psi(self, Y) -> np.ndarray:
        return np.maximum(self.v_plus(Y), self.v_minus(Y))

    def grad_phi(self, X) -> np.ndarray:
        """Gradient of the active branch: the transform's argmax target."""
        X = np.atleast_2d(X)
        up, argp = self._sup_transform(X, self.problem.target_plus.points,
                                       self._own_v("p"), return_arg=True)
        um, argm = self._sup_transform(X, self.problem.target_minus.points,
                                       self._own_v("m"), return_arg=True)
        out = np.zeros_like(X)
        plus_active = up >= um
        if np.any(plus_active):
            out[plus_active] = self.problem.target_plus.points[argp[plus_active]]
        if np.any(~plus_active):
            out[~plus_active] = self.problem.target_minus.points[argm[~plus_active]]
        return out

    def source_u_values(self, sign: str) -> np.ndarray:
        """Flip of the discrete dual on the sign's own source samples."""
        return self._own_u(sign)

    def target_v_values(self, sign: str) -> np.ndarray:
        return self._own_v(sign)

    def tightening_gap(self) -> float:
        """Max amount by which own-block conjugation undershoots the duals.

        At optimality the block transform reproduces the discrete dual value
        at every support sample (it can only tighten upward); the gap is a
        consistency diagnostic and should be at float-noise level.
        """
        worst = 0.0
        pb = self.problem
        for sign in "pm":
            src = pb.source(sign)
            if src.size == 0 or pb.target(sign).size == 0:
                continue
            amb = (self.u_plus(src.points) if sign == "p"
                   else self.u_minus(src.points))
            own = self._own_u(sign)
            worst = max(worst, float((own - amb).max()))
        return worst


def build_potentials(duals: DualPotentials, p: TransportProblem,
                     cost: CostSpec | None = None) -> AmbientPotentials:
    """Ambient extension of discrete duals by block-specific conjugation."""
    return AmbientPotentials(problem=p, duals=duals)


@dataclass(frozen=True)
class PartitionParams:
    """Separation parameter and the tie band around it."""

    delta: float = 1e-4
    tie_tolerance: float | None = None  # default delta * 1e-3

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def tie(self) -> float:
        return self.tie_tolerance if self.tie_tolerance is not None \
            else self.delta * 1e-3


@dataclass
class PartitionLabels:
    """Per-source labels, mass totals, and the plan-agreement diagnostic."""

    labels: list
    masses: dict
    unassigned_mass: float
    disagreement_mass: float
    delta: float

    @property
    def labeled_mass(self) -> float:
        return float(sum(v for k, v in self.masses.items() if k != "UNASSIGNED"))

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "masses": self.masses,
                "unassigned_mass": self.unassigned_mass,
                "disagreement_mass": self.disagreement_mass, "delta": self.delta}


def assign_regions(pot: AmbientPotentials, tmap: TransportMap,
                   params: PartitionParams) -> PartitionLabels:
    """Label each source point by the strict branch inequalities.

    The source-side gap compares the two u branches at the point itself; the
    target-side gap compares the v branches at the realized image T(x).
    Points whose gaps fall inside the delta band (widened by the tie
    tolerance) stay UNASSIGNED. Disagreement mass counts points whose label
    differs from the plan's dominant block.
    """
    X = tmap.source_points
    T = tmap.image
    s1 = pot.u_plus(X) - pot.u_minus(X)
    s2 = pot.v_plus(T) - pot.v_minus(T)
    thr = params.delta + params.tie
    labels = []
    masses = {label: 0.0 for label in LABELS}
    disagreement = 0.0
    for k in range(len(X)):
        if s1[k] > thr:
            src = "P"
        elif s1[k] < -thr:
            src = "M"
        else:
            src = None
        if s2[k] > thr:
            tgt = "P"
        elif s2[k] < -thr:
            tgt = "M"
        else:
            tgt = None
        label = "UNASSIGNED" if src is None or tgt is None else src + tgt
        labels.append(label)
        masses[label] += float(tmap.source_weights[k])
        if label != "UNASSIGNED" and label != tmap.dominant_block[k]:
            disagreement += float(tmap.source_weights[k])
    return PartitionLabels(labels=labels, masses=masses,
                           unassigned_mass=masses["UNASSIGNED"],
                           disagreement_mass=disagreement, delta=params.delta)


def plan_cost(plan: BlockPlan, p: TransportProblem) -> float:
    """Recompute the plan's transport cost block by block."""
    total = 0.0
    for kind in BLOCKS:
        i, j, m = plan.blocks[kind]
        if len(m) == 0:
            continue
        X = p.source(kind[0]).points[i]
        Y = p.target(kind[1]).points[j]
        diff = X - Y
        c = 0.5 * np.einsum("ij,ij->i", diff, diff)
        if kind in INTER_BLOCKS:
            if p.cost.kind == "quadratic_penalty":
                c = c * (1.0 + 2.0 * p.cost.alpha)
            else:
                pen = np.array([p.cost.penalty_matrix(x[None], y[None])[0, 0]
                                for x, y in zip(X, Y)])
                c = c + pen
        total += float(m @ c)
    return total


def signed_texture_distance(plan: BlockPlan, p: TransportProblem) -> float:
    """Intra mass at the quadratic cost plus inter mass at the penalized cost.

    Identical to the transport objective by regrouping, and reported as the
    texture statistic.
    """
    return plan_cost(plan, p)


def inter_sign_ratio(plan: BlockPlan) -> float:
    """Fraction of source mass routed between opposite signs (in [0, 1])."""
    total = sum(plan.block_mass(kind) for kind in BLOCKS)
    if total <= 0:
        raise ValueError("plan carries no mass; ratio undefined")
    return plan.inter_mass / total


def _window_cloud_pair(values: np.ndarray, start: int, window: int,
                       embed: str) -> tuple[Cloud, Cloud]:
    seg = values[start:start + window]
    idx = np.arange(window)
    if embed == "time-value":
        pos = np.stack([idx / window, seg], axis=1)
    elif embed == "value":
        pos = seg.reshape(-1, 1)
    else:
        raise ValueError(f"unknown embedding {embed!r}")
    plus = seg > 0
    minus = seg < 0
    return (Cloud(pos[plus], seg[plus]), Cloud(pos[minus], -seg[minus]))


def regime_scan(series, window: int, stride: int, cost: CostSpec,
                embed: str = "time-value", solver_cap: int = 20_000) -> list[dict]:
    """Sliding-window signed transport diagnostics over a 1D series.

    Each window becomes a signed atomic measure (positive samples are plus
    atoms, negative ones minus atoms, embedded on the time-value plane);
    consecutive windows are balanced by uniform rescaling and solved
    pairwise. Rows carry the second window's start index, the inter-sign
    ratio, and the texture distance; windows without usable mass yield
    missing entries.
    """
    values = np.asarray(series, dtype=float).ravel()
    if window < 4:
        raise ValueError("window must be >= 4")
    if len(values) < 2 * window:
        raise ValueError("series must cover at least two windows")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    starts = list(range(0, len(values) - window + 1, stride))
    rows = []
    for k in range(len(starts) - 1):
        t = starts[k + 1]
        mu = _window_cloud_pair(values, starts[k], window, embed)
        nu = _window_cloud_pair(values, t, window, embed)
        mu_tv = mu[0].mass + mu[1].mass
        nu_tv = nu[0].mass + nu[1].mass
        if mu_tv <= 0 or nu_tv <= 0:
            rows.append({"t": t, "R": None, "d_ST": None})
            continue
        p = build_block_problem(mu, nu, cost, require_signed_balance=False)
        plan, _ = solve_exact(p, cap=solver_cap)
        rows.append({"t": t, "R": inter_sign_ratio(plan),
                     "d_ST": signed_texture_distance(plan, p)})
    return rows
