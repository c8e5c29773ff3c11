"""Numerical verification of the structure equations.

Covers the coupled Monge-Ampere residuals on intra- and inter-sign regions,
the sign condition on the mixed cost Hessian, the double Legendre system
satisfied by optimal potentials, and preservation of fractal dimension and
regularity under the transport map.

For one-dimensional absolutely continuous instances the gradient and
Jacobian of the optimal map are evaluated through the cumulative-mass
quantile form of the monotone plan. Raw vertex duals snap to the target
grid, which leaves a non-decaying quantization floor under central
differencing; the quantile form carries the sub-cell information and
restores first-order decay of the residuals under refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sotx.fractalgeo import (
    AhlforsReport,
    DimensionFit,
    ahlfors_constants,
    box_counting_dimension,
    _nn_spacing,
)
from sotx.measures import Cloud, FractalPart, GridDensity
from sotx.partition import AmbientPotentials
from sotx.transport import CostSpec, TransportMap

__all__ = [
    "ResidualField",
    "PreservationReport",
    "ma_residual_intra",
    "ma_residual_inter",
    "sign_condition",
    "legendre_system_residual",
    "fractal_preservation_report",
    "quantile_map_1d",
]


@dataclass
class ResidualField:
    """Residual samples with norms and the spacing they were measured at."""

    points: np.ndarray
    values: np.ndarray
    spacing: float
    n_excluded: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def max_norm(self) -> float:
        return float(np.abs(self.values).max()) if len(self.values) else 0.0

    @property
    def mean_norm(self) -> float:
        return float(np.abs(self.values).mean()) if len(self.values) else 0.0

    def to_dict(self) -> dict:
        return {"max_norm": self.max_norm, "mean_norm": self.mean_norm,
                "spacing": self.spacing, "n_points": int(len(self.values)),
                "n_excluded": self.n_excluded, "meta": self.meta}


def _grid_1d(g: GridDensity):
    x = g.axis_centers(0)
    edges = np.concatenate([[g.origin[0]], g.origin[0]
                            + (np.arange(g.values.shape[0]) + 1) * g.spacing[0]])
    return x, edges, g.values.ravel(), float(g.spacing[0])


def quantile_map_1d(f: GridDensity, g: GridDensity) -> tuple[np.ndarray, np.ndarray]:
    """Monotone rearrangement of f onto g at f's cell centers, with Jacobian.

    Matches cumulative masses at cell edges (exact for the discretized
    measures) and interpolates the target quantile function piecewise
    linearly; the Jacobian is the stride-1 central difference of the map.
    Valid for any strictly convex translation-invariant 1D cost.
    """
    x, _, fv, dx = _grid_1d(f)
    _, ye, gv, dy = _grid_1d(g)
    a = fv * dx
    b = gv * dy
    b = b * (a.sum() / b.sum())
    F = np.concatenate([[0.0], np.cumsum(a)])
    G = np.concatenate([[0.0], np.cumsum(b)])
    Fc = F[:-1] + a / 2.0
    T = np.interp(Fc, G, ye)
    dT = np.full_like(T, np.nan)
    dT[1:-1] = (T[2:] - T[:-2]) / (2.0 * dx)
    return T, dT


def _duals_on_grid(pot: AmbientPotentials, grid: GridDensity, side: str,
                   sign: str) -> np.ndarray:
    """Dual values reshaped onto the grid a cloud was discretized from."""
    cloud = pot.problem.source(sign) if side == "source" else pot.problem.target(sign)
    ncells = int(np.prod(grid.values.shape))
    if cloud.size != ncells:
        raise ValueError(
            "dual-grid evaluation needs a fully supported density (every grid "
            f"cell one cloud point); got {cloud.size} points for {ncells} cells")
    centers = grid.centers()
    if not np.allclose(centers[0], cloud.points[0]) or \
       not np.allclose(centers[-1], cloud.points[-1]):
        raise ValueError("cloud points do not match the grid's cell centers")
    duals = pot.duals
    vec = {("source", "p"): duals.phi_plus, ("source", "m"): duals.phi_minus,
           ("target", "p"): duals.psi_plus, ("target", "m"): duals.psi_minus}[
               (side, sign)]
    return vec.reshape(grid.values.shape)


def ma_residual_intra(pot: AmbientPotentials, f: GridDensity, g: GridDensity,
                      sign: str = "plus", labels=None,
                      method: str = "auto", g_floor: float = 1e-12
                      ) -> ResidualField:
    """Residual of det(D^2 phi) = f / g(grad phi) on an intra-sign region.

    One-dimensional instances use the quantile form of the monotone map for
    both the gradient and the Jacobian (see the module note); grids in two
    dimensions use central differences of the dual values with the gradient
    from the conjugation argmax. Interior points only (2-cell margin);
    points where the target density at the image falls below ``g_floor``
    are excluded and counted.
    """
    s = "p" if sign == "plus" else "m"
    if f.dim == 1 and method in ("auto", "quantile"):
        T, dT = quantile_map_1d(f, g)
        x, _, fv, dx = _grid_1d(f)
        gi = g.interp(T.reshape(-1, 1))
        keep = np.ones(len(x), dtype=bool)
        keep[:2] = keep[-2:] = False
        keep &= ~np.isnan(dT)
        excluded = int((gi[keep] < g_floor).sum())
        keep &= gi >= g_floor
        if labels is not None:
            want = "PP" if sign == "plus" else "MM"
            offset = 0 if sign == "plus" else pot.problem.source_plus.size
            lab = np.array(labels[offset:offset + len(x)])
            keep &= lab == want
        resid = dT[keep] - fv[keep] / gi[keep]
        agreement = float(np.abs(pot.grad_phi(x[keep].reshape(-1, 1)).ravel()
                                 - T[keep]).max()) if keep.any() else 0.0
        return ResidualField(points=x[keep].reshape(-1, 1), values=resid,
                             spacing=dx, n_excluded=excluded,
                             meta={"method": "quantile",
                                   "map_agreement": agreement})
    return _ma_intra_grid(pot, f, g, s, labels, g_floor)


def _ma_intra_grid(pot, f, g, s, labels, g_floor) -> ResidualField:
    """Central-difference Hessian of the flipped duals on the source grid."""
    phi_grid = _duals_on_grid(pot, f, "source", s)
    centers = f.centers()
    u = (0.5 * np.einsum("ij,ij->i", centers, centers)
         - phi_grid.ravel()).reshape(f.values.shape)
    dim = f.dim
    sp = f.spacing
    shape = f.values.shape
    if dim > 2:
        raise ValueError("intra residuals support 1D and 2D grids")
    grad = pot.grad_phi(centers).reshape(shape + (dim,))
    gi = g.interp(grad.reshape(-1, dim)).reshape(shape)
    if dim == 1:
        det = np.full(shape, np.nan)
        det[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / sp[0] ** 2
    else:
        det = np.full(shape, np.nan)
        uxx = (u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / sp[0] ** 2
        uyy = (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / sp[1] ** 2
        uxy = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4 * sp[0] * sp[1])
        det[1:-1, 1:-1] = uxx * uyy - uxy ** 2
    keep = ~np.isnan(det)
    for axis in range(dim):
        sl = [slice(None)] * dim
        sl[axis] = slice(0, 2)
        keep[tuple(sl)] = False
        sl[axis] = slice(-2, None)
        keep[tuple(sl)] = False
    excluded = int((gi[keep] < g_floor).sum())
    keep &= gi >= g_floor
    if labels is not None:
        want = "PP" if s == "p" else "MM"
        offset = 0 if s == "p" else pot.problem.source_plus.size
        lab = np.array(labels[offset:offset + keep.size]).reshape(shape)
        keep &= lab == want
    resid = det[keep] - f.values[keep] / gi[keep]
    return ResidualField(points=centers[keep.ravel()], values=resid,
                         spacing=float(sp.max()), n_excluded=excluded,
                         meta={"method": "grid-duals"})


def ma_residual_inter(pot: AmbientPotentials | None, tmap: TransportMap | None,
                      f_plus: GridDensity, g_minus: GridDensity, cost: CostSpec,
                      psi_grad=None, psi_hess=None,
                      image: np.ndarray | None = None,
                      g_floor: float = 1e-12) -> tuple[ResidualField, ResidualField]:
    """Implicit-equation and determinant residuals on the plus-to-minus region.

    Returns the pair (a, b): (a) is the residual of
    ``x = grad psi(T(x)) + grad_y lambda(x, T(x))`` and (b) the determinant
    identity residual. With analytic ``psi_grad`` / ``psi_hess`` callables
    both are evaluated directly; otherwise psi derivatives come from the
    target-grid duals (first differences) for (a) and from the quantile
    Jacobian of the monotone 1D map for (b).
    """
    if f_plus.dim != 1 and psi_hess is None:
        raise ValueError("grid-based inter residuals are one-dimensional; "
                         "higher dimensions need analytic psi callables")
    x, _, fv, dx = _grid_1d(f_plus) if f_plus.dim == 1 else (None,) * 4
    if image is not None:
        T = np.asarray(image, dtype=float).ravel()
        dT = np.gradient(T, x) if f_plus.dim == 1 else None
    else:
        T, dT = quantile_map_1d(f_plus, g_minus)
    pts = x.reshape(-1, 1)

    # (a) implicit first-order condition
    if psi_grad is not None:
        dpsi_T = np.asarray(psi_grad(T), dtype=float).ravel()
    else:
        if pot is None:
            raise ValueError("need potentials or an analytic psi gradient")
        psi_grid = _duals_on_grid(pot, g_minus, "target", "m")
        y = g_minus.axis_centers(0)
        v_vals = 0.5 * y ** 2 - psi_grid.ravel()
        dpsi = np.gradient(v_vals, y)
        dpsi_T = np.interp(T, y, dpsi)
    lam_grad = np.array([cost.grad_y_penalty(np.array([xi]), np.array([ti]))[0]
                         for xi, ti in zip(x, T)])
    res_a_vals = x - dpsi_T - lam_grad
    keep = np.ones(len(x), dtype=bool)
    keep[:2] = keep[-2:] = False
    res_a = ResidualField(points=pts[keep], values=res_a_vals[keep], spacing=dx,
                          meta={"equation": "implicit"})

    # (b) determinant identity
    gi = g_minus.interp(T.reshape(-1, 1))
    excluded = 0
    d = 1
    if psi_hess is not None:
        lhs = np.empty(len(x))
        rhs = np.empty(len(x))
        for k, (xi, ti) in enumerate(zip(x, T)):
            hyy = cost.hess_yy_penalty(np.array([xi]), np.array([ti]), d)
            hxy = cost.hess_xy_penalty(np.array([xi]), np.array([ti]), d)
            Lyy = np.eye(d) + hyy
            Lxy = -np.eye(d) + hxy
            lhs[k] = np.linalg.det(np.atleast_2d(psi_hess(ti)) + Lyy - np.eye(d))
            rhs[k] = (gi[k] / max(fv[k], 1e-300)) * (-1) ** d * np.linalg.det(Lxy)
        res_b_vals = lhs - rhs
        kb = keep.copy()
    else:
        kb = keep & ~np.isnan(dT) & (dT > 0)
        excluded = int((gi[kb] < g_floor).sum())
        kb &= gi >= g_floor
        lam_xy = np.array([cost.hess_xy_penalty(np.array([xi]), np.array([ti]), 1)[0, 0]
                           for xi, ti in zip(x[kb], T[kb])])
        factor = 1.0 - lam_xy  # (-1)^1 det(D2_xy Ltilde) = 1 - lam_xy in 1D
        res_b_vals = np.full(len(x), np.nan)
        res_b_vals[kb] = factor * (1.0 / dT[kb] - gi[kb] / fv[kb])
        res_b_vals = res_b_vals
    res_b = ResidualField(points=pts[kb], values=np.asarray(res_b_vals)[kb],
                          spacing=dx, n_excluded=excluded,
                          meta={"equation": "determinant"})
    return res_a, res_b


def sign_condition(d: int, cost: CostSpec, x=None, y=None) -> float:
    """(-1)^d det(D^2_xy of the penalized cost); positive when well-posed.

    Exactly ``(1 + 2 alpha)^d`` for the quadratic penalty.
    """
    if cost.kind == "quadratic_penalty":
        return float((1.0 + 2.0 * cost.alpha) ** d)
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    y = np.zeros(d) if y is None else np.asarray(y, dtype=float)
    hxy = cost.hess_xy_penalty(x, y, d)
    Lxy = -np.eye(d) + hxy
    return float((-1) ** d * np.linalg.det(Lxy))


def legendre_system_residual(pot: AmbientPotentials, p=None) -> dict:
    """Residual of the two-branch conjugation system at every support sample.

    Each branch potential must equal the max of its plain conjugate over the
    same sign and its penalty-shifted conjugate over the opposite sign; at
    LP optimality both transforms are support-tight, so residuals sit at
    float-noise level and any dual perturbation surfaces immediately.
    Also reports the dual objective for comparison with the primal.
    """
    p = p if p is not None else pot.problem
    cost = p.cost
    sides = []
    for sign in "pm":
        src = p.source(sign)
        if src.size == 0:
            continue
        own = pot.source_u_values(sign)
        intra_t = p.target(sign)
        inter_t = p.target("m" if sign == "p" else "p")
        intra = pot._sup_transform(src.points, intra_t.points,
                                   pot.target_v_values(sign))
        if inter_t.size:
            pen = cost.penalty_matrix(src.points, inter_t.points)
            scores = src.points @ inter_t.points.T - pen \
                - pot.target_v_values("m" if sign == "p" else "p")[None, :]
            inter = scores.max(axis=1)
        else:
            inter = np.full(src.size, -np.inf)
        rhs = np.maximum(intra, inter)
        sides.append(("source_" + sign, np.abs(own - rhs), np.abs(own).max()))
    for sign in "pm":
        tgt = p.target(sign)
        if tgt.size == 0:
            continue
        own = pot.target_v_values(sign)
        intra_s = p.source(sign)
        inter_s = p.source("m" if sign == "p" else "p")
        intra = pot._sup_transform(tgt.points, intra_s.points,
                                   pot.source_u_values(sign))
        if inter_s.size:
            pen = cost.penalty_matrix(inter_s.points, tgt.points).T
            scores = tgt.points @ inter_s.points.T - pen \
                - pot.source_u_values("m" if sign == "p" else "p")[None, :]
            inter = scores.max(axis=1)
        else:
            inter = np.full(tgt.size, -np.inf)
        rhs = np.maximum(intra, inter)
        sides.append(("target_" + sign, np.abs(own - rhs), np.abs(own).max()))
    max_resid = max(float(r.max()) for _, r, _ in sides)
    mean_resid = float(np.mean(np.concatenate([r for _, r, _ in sides])))
    scale = max(s for _, _, s in sides)
    return {
        "max_residual": max_resid,
        "mean_residual": mean_resid,
        "potential_scale": float(scale),
        "scaled_max": max_resid / (1.0 + float(scale)),
        "per_side": {name: float(r.max()) for name, r, _ in sides},
        "dual_objective": pot.duals.dual_objective(p),
    }


@dataclass
class PreservationReport:
    """Dimension, regularity, and bi-Lipschitz diagnostics of a mapped set."""

    d_hat_source: DimensionFit
    d_hat_image: DimensionFit
    ahlfors_source: AhlforsReport
    ahlfors_image: AhlforsReport
    lip_lower: float
    lip_upper: float
    ds: float
    dim_tolerance: float
    pass_flags: dict

    @property
    def passed(self) -> bool:
        return all(self.pass_flags.values())

    def to_dict(self) -> dict:
        return {"d_hat_source": self.d_hat_source.to_dict(),
                "d_hat_image": self.d_hat_image.to_dict(),
                "ahlfors_source": self.ahlfors_source.to_dict(),
                "ahlfors_image": self.ahlfors_image.to_dict(),
                "lip_lower": self.lip_lower, "lip_upper": self.lip_upper,
                "ds": self.ds, "dim_tolerance": self.dim_tolerance,
                "pass_flags": self.pass_flags}


def fractal_preservation_report(E: FractalPart, image: np.ndarray,
                                scales=None, seed: int = 0,
                                dim_tolerance: float = 0.1,
                                n_pairs: int = 20_000,
                                ahlfors_max_ratio: float = 12.0
                                ) -> PreservationReport:
    """Compare the image sample of a fractal set against its source structure.

    ``image`` holds the mapped points aligned with ``E``'s sample. The
    bi-Lipschitz ratio quantiles are the 1st and 99th percentiles of
    ``|T(x) - T(y)| / |x - y|`` over seeded pairs separated by at least the
    trusted sampling scale (near-coincident pairs are discretization noise).
    """
    image = np.asarray(image, dtype=float)
    if image.ndim == 1:
        image = image.reshape(-1, 1)
    if len(image) != len(E.points):
        raise ValueError("image must align with the fractal sample")
    fit_src = box_counting_dimension(E, scale_range=scales)
    degenerate = float(np.ptp(image, axis=0).max()) == 0.0
    if degenerate:
        fit_img = DimensionFit(d_hat=0.0, scales=[], counts=[], fit_r2=0.0,
                               degenerate=True)
    else:
        fit_img = box_counting_dimension(image, scale_range=scales)
    ahl_src = ahlfors_constants(E, E.ds, seed=seed, max_ratio=ahlfors_max_ratio)
    if degenerate:
        ahl_img = AhlforsReport(c_lower=0.0, c_upper=0.0, scales=[], n_centers=0,
                                max_ratio=ahlfors_max_ratio, passed=False)
    else:
        ahl_img = ahlfors_constants(Cloud(image, E.weights), E.ds, seed=seed,
                                    max_ratio=ahlfors_max_ratio)
    rng = np.random.default_rng(seed)
    n = len(E.points)
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n, size=n_pairs)
    src_d = np.linalg.norm(E.points[i] - E.points[j], axis=1)
    band_lo = 3.0 * _nn_spacing(E.points)
    ok = src_d >= band_lo
    ratios = np.linalg.norm(image[i[ok]] - image[j[ok]], axis=1) / src_d[ok]
    if len(ratios) == 0:
        lip_lo, lip_hi = 0.0, float("inf")
    else:
        lip_lo = float(np.percentile(ratios, 1.0))
        lip_hi = float(np.percentile(ratios, 99.0))
    flags = {
        "dimension": (not degenerate)
        and abs(fit_img.d_hat - E.ds) <= dim_tolerance,
        "ahlfors": bool(ahl_img.passed),
        "bilipschitz": (not degenerate) and lip_lo > 0.0
        and np.isfinite(lip_hi),
    }
    return PreservationReport(d_hat_source=fit_src, d_hat_image=fit_img,
                              ahlfors_source=ahl_src, ahlfors_image=ahl_img,
                              lip_lower=lip_lo, lip_upper=lip_hi, ds=E.ds,
                              dim_tolerance=dim_tolerance, pass_flags=flags)
