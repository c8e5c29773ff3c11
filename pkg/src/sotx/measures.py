"""Data model for signed measures with smooth, atomic, and fractal parts.

A signed measure is held as a plus/minus pair of components; each component
splits into an absolutely continuous grid density, a finite atom set, and a
weighted point-cloud sample of a fractal set. Discretization collapses each
component to a weighted cloud; ``check_assumptions`` produces the structural
diagnostics (density floor/ceiling, support separation, penalty convexity,
dimension consistency, and the smoothed lower bound on fractal mass).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridDensity",
    "AtomSet",
    "FractalPart",
    "SignedComponent",
    "SignedMeasure",
    "Cloud",
    "AssumptionReport",
    "build_signed_measure",
    "discretize",
    "check_assumptions",
]

MASS_BALANCE_RTOL = 1e-8


def _as_points(points, dim=None) -> np.ndarray:
    """Coerce to an (n, d) array; a flat sequence is read as n points in R^1."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise ValueError("points must be a (n, d) array")
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {dim}")
    return pts


@dataclass(frozen=True)
class GridDensity:
    """Piecewise-constant nonnegative density on a regular grid.

    ``values[i1, ..., id]`` is the density (mass per unit volume) on the cell
    whose center is ``origin + (i + 1/2) * spacing``.
    """

    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        spacing = np.atleast_1d(np.asarray(self.spacing, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if values.ndim != len(origin) or len(spacing) != len(origin):
            raise ValueError("origin/spacing length must match values.ndim")
        if np.any(spacing <= 0):
            raise ValueError("spacing must be positive")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.values.shape[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing[axis]

    def centers(self) -> np.ndarray:
        """Cell centers as a (ncells, d) array in C order."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def support_points(self) -> np.ndarray:
        """Centers of cells with strictly positive density."""
        mask = self.values.ravel() > 0
        return self.centers()[mask]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin
        hi = self.origin + self.spacing * np.asarray(self.values.shape)
        return lo, hi

    def interp(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of the density at arbitrary points."""
        pts = _as_points(points, self.dim)
        t = (pts - self.origin) / self.spacing - 0.5
        vals = self.values
        shape = vals.shape
        i0 = np.floor(t).astype(int)
        frac = t - i0
        # accumulate multilinear weights over the 2^d corner offsets
        acc = np.zeros(len(pts))
        for corner in range(2 ** self.dim):
            w = np.ones(len(pts))
            idx = []
            for k in range(self.dim):
                bit = (corner >> k) & 1
                ik = np.clip(i0[:, k] + bit, 0, shape[k] - 1)
                w = w * (frac[:, k] if bit else 1.0 - frac[:, k])
                idx.append(ik)
            acc += w * vals[tuple(idx)]
        out = acc
        # outside the grid box the density is zero
        lo, hi = self.bounds()
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        out[~inside] = 0.0
        return out

    def rebin(self, resolution: int) -> "GridDensity":
        """Mass-exact rebinning to ``resolution`` cells per axis over the same box."""
        lo, hi = self.bounds()
        new_spacing = (hi - lo) / resolution
        vals = self.values
        for axis in range(self.dim):
            vals = _rebin_axis(vals, axis, self.spacing[axis], new_spacing[axis], resolution)
        return GridDensity(lo, new_spacing, vals)


def _rebin_axis(vals, axis, old_dx, new_dx, n_new):
    """Overlap-weighted rebinning of a piecewise-constant density along one axis."""
    n_old = vals.shape[axis]
    out_shape = list(vals.shape)
    out_shape[axis] = n_new
    out = np.zeros(out_shape)
    vals_m = np.moveaxis(vals, axis, 0)
    out_m = np.moveaxis(out, axis, 0)
    for j in range(n_new):
        a, b = j * new_dx, (j + 1) * new_dx
        i_lo = int(np.floor(a / old_dx))
        i_hi = min(int(np.ceil(b / old_dx)), n_old)
        acc = 0.0
        for i in range(max(i_lo, 0), i_hi):
            ov = min(b, (i + 1) * old_dx) - max(a, i * old_dx)
            if ov > 0:
                acc = acc + ov * vals_m[i]
        out_m[j] = acc / new_dx
    return np.moveaxis(out_m, 0, axis)


@dataclass(frozen=True)
class AtomSet:
    """Finite set of point masses; masses strictly positive, points distinct."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        if len(pts) != len(masses):
            raise ValueError("points and masses must have equal length")
        if np.any(masses <= 0):
            raise ValueError("atom masses must be strictly positive")
        if len(pts) > 1:
            d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            np.fill_diagonal(d, np.inf)
            if d.min() == 0.0:
                raise ValueError("atom points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", masses)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(self.masses.sum())


@dataclass(frozen=True)
class FractalPart:
    """Weighted point-cloud sample of a fractal measure of dimension ``ds``.

    The weights carry the sampled measure directly; ``density_bounds`` records
    the (min, max) local density of that measure against ``r**ds`` at the
    finest trusted scale.
    """

    points: np.ndarray
    weights: np.ndarray
    ds: float
    density_bounds: tuple[float, float] = (0.0, float("inf"))
    label: str = ""

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if len(pts) != len(w):
            raise ValueError("points and weights must have equal length")
        if np.any(w <= 0):
            raise ValueError("fractal sample weights must be strictly positive")
        if not 0 < self.ds < pts.shape[1]:
            raise ValueError(f"ds={self.ds} outside (0, {pts.shape[1]})")
        m, M = self.density_bounds
        if m > M:
            raise ValueError("density bounds must satisfy m <= M")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def diameter(self) -> float:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class SignedComponent:
    """One sign of a signed measure: optional ac + atoms + fractal parts.

    ``smoothed`` holds the grid density that replaces the fractal part after
    regularization; it is empty on freshly built measures.
    """

    ac: GridDensity | None = None
    atoms: AtomSet | None = None
    fractal: FractalPart | None = None
    smoothed: GridDensity | None = None

    @property
    def is_empty(self) -> bool:
        return all(p is None for p in (self.ac, self.atoms, self.fractal, self.smoothed))

    @property
    def mass(self) -> float:
        total = 0.0
        for part in (self.ac, self.atoms, self.fractal, self.smoothed):
            if part is not None:
                total += part.mass
        return total

    def parts_dim(self) -> int | None:
        for part in (self.ac, self.atoms, self.fractal, self.smoothed):
            if part is not None:
                return part.dim
        return None

    def support_points(self) -> np.ndarray:
        chunks = []
        if self.ac is not None:
            chunks.append(self.ac.support_points())
        if self.smoothed is not None:
            chunks.append(self.smoothed.support_points())
        if self.atoms is not None:
            chunks.append(self.atoms.points)
        if self.fractal is not None:
            chunks.append(self.fractal.points)
        if not chunks:
            return np.zeros((0, self.parts_dim() or 1))
        return np.concatenate(chunks, axis=0)


EMPTY_COMPONENT = SignedComponent()


@dataclass(frozen=True)
class SignedMeasure:
    """Signed measure as a plus/minus pair of components on R^d."""

    plus: SignedComponent
    minus: SignedComponent
    dim: int
    part_masses: dict = field(default_factory=dict, compare=False)

    @property
    def signed_mass(self) -> float:
        return self.plus.mass - self.minus.mass

    @property
    def total_variation(self) -> float:
        return self.plus.mass + self.minus.mass


@dataclass(frozen=True)
class Cloud:
    """Weighted point cloud; the discrete currency of the transport layer."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[1] if pts.ndim == 2 else 1)
        else:
            pts = _as_points(pts)
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if len(pts) != len(w):
            raise ValueError("points and weights must have equal length")
        if np.any(w < 0):
            raise ValueError("cloud weights must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @staticmethod
    def empty(dim: int) -> "Cloud":
        return Cloud(np.zeros((0, dim)), np.zeros(0))


def build_signed_measure(plus: SignedComponent | None, minus: SignedComponent | None,
                         d: int) -> SignedMeasure:
    """Assemble and validate a signed measure from its two components.

    Parameters
    ----------
    plus, minus : SignedComponent or None
        The two Jordan components; ``None`` stands for an empty component.
    d : int
        Ambient dimension; every part must live in R^d.
    """
    plus = plus if plus is not None else EMPTY_COMPONENT
    minus = minus if minus is not None else EMPTY_COMPONENT
    if d < 1:
        raise ValueError("ambient dimension must be >= 1")
    if plus.is_empty and minus.is_empty:
        raise ValueError("signed measure must have at least one nonempty component")
    masses = {}
    for sign, comp in (("plus", plus), ("minus", minus)):
        pd = comp.parts_dim()
        if pd is not None and pd != d:
            raise ValueError(f"{sign} component has dimension {pd}, expected {d}")
        for name in ("ac", "atoms", "fractal", "smoothed"):
            part = getattr(comp, name)
            if part is not None:
                masses[f"{name}_{sign}"] = part.mass
        if not comp.is_empty and comp.mass <= 0:
            raise ValueError(f"{sign} component present but has zero mass")
    return SignedMeasure(plus=plus, minus=minus, dim=d, part_masses=masses)


def _component_cloud(comp: SignedComponent, dim: int, resolution: int | None) -> Cloud:
    pts, w = [], []
    for grid in (comp.ac, comp.smoothed):
        if grid is None:
            continue
        g = grid if resolution is None else grid.rebin(resolution)
        weights = g.values.ravel() * g.cell_volume
        mask = weights > 0
        pts.append(g.centers()[mask])
        w.append(weights[mask])
    if comp.atoms is not None:
        pts.append(comp.atoms.points)
        w.append(comp.atoms.masses)
    if comp.fractal is not None:
        pts.append(comp.fractal.points)
        w.append(comp.fractal.weights)
    if not pts:
        return Cloud.empty(dim)
    return Cloud(np.concatenate(pts, axis=0), np.concatenate(w))


def discretize(m: SignedMeasure, resolution: int | None = None) -> tuple[Cloud, Cloud]:
    """Collapse a signed measure to one weighted cloud per sign.

    Grid densities become cell-center points weighted by ``density * cell
    volume`` (midpoint rule, mass-exact for the piecewise-constant
    representation); atoms and fractal samples pass through unchanged. When
    ``resolution`` is given, ac parts are mass-exactly rebinned to that many
    cells per axis first.
    """
    if resolution is not None and resolution < 2:
        raise ValueError("resolution must be >= 2")
    plus = _component_cloud(m.plus, m.dim, resolution)
    minus = _component_cloud(m.minus, m.dim, resolution)
    if plus.size and minus.size:
        gap = _cloud_gap(plus.points, minus.points)
        cell = _finest_spacing(m, resolution)
        if cell is not None and gap < 2.0 * cell:
            warnings.warn(
                f"resolution too coarse to resolve the plus/minus support gap "
                f"({gap:.3g} < 2 cells)", RuntimeWarning)
    return plus, minus


def _finest_spacing(m: SignedMeasure, resolution: int | None) -> float | None:
    spacings = []
    for comp in (m.plus, m.minus):
        for grid in (comp.ac, comp.smoothed):
            if grid is not None:
                g = grid if resolution is None else grid.rebin(resolution)
                spacings.append(float(g.spacing.max()))
    return max(spacings) if spacings else None


def _cloud_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between two point sets (brute force, chunked)."""
    if len(a) == 0 or len(b) == 0:
        return float("inf")
    best = np.inf
    for chunk in np.array_split(a, max(1, len(a) * len(b) // 2_000_000 + 1)):
        d = np.linalg.norm(chunk[:, None, :] - b[None, :, :], axis=-1)
        best = min(best, float(d.min()))
    return best


@dataclass
class AssumptionTolerances:
    """Thresholds used by ``check_assumptions``."""

    density_floor_min: float = 0.0
    support_gap_min: float = 0.0
    ds_consistency: float = 1e-9
    atom_tie: float = 1e-12
    h5_radii: tuple = (1.0, 2.0, 4.0)  # in units of the kernel bandwidth


@dataclass
class AssumptionReport:
    """Measured diagnostics for the five structural assumptions."""

    density_floor: float
    density_ceiling: float
    support_gap_mu: float
    support_gap_nu: float
    penalty_eigenbounds: tuple[float, float]
    ds_values: list[float]
    h5_gamma: float | None
    pass_flags: dict[str, bool]
    notes: list[str]

    @property
    def hard_failure(self) -> bool:
        """H3/H4 failures invalidate the block structure; others are soft."""
        return not (self.pass_flags["H3"] and self.pass_flags["H4"])

    def to_dict(self) -> dict:
        return {
            "density_floor": self.density_floor,
            "density_ceiling": self.density_ceiling,
            "support_gap_mu": self.support_gap_mu,
            "support_gap_nu": self.support_gap_nu,
            "penalty_eigenbounds": list(self.penalty_eigenbounds),
            "ds_values": self.ds_values,
            "h5_gamma": self.h5_gamma,
            "pass_flags": self.pass_flags,
            "notes": self.notes,
        }


def _ac_floor_ceiling(measures) -> tuple[float, float]:
    floor, ceiling = np.inf, 0.0
    for m in measures:
        for comp in (m.plus, m.minus):
            for grid in (comp.ac, comp.smoothed):
                if grid is None:
                    continue
                vals = grid.values[grid.values > 0]
                if vals.size:
                    floor = min(floor, float(vals.min()))
                    ceiling = max(ceiling, float(vals.max()))
    if not np.isfinite(floor):
        floor = 0.0
    return floor, ceiling


def _component_gap(m: SignedMeasure) -> float:
    plus = m.plus.support_points()
    minus = m.minus.support_points()
    return _cloud_gap(plus, minus)


def _atom_cost_ties(mu: SignedMeasure, nu: SignedMeasure, cost, tie_tol: float) -> bool:
    """True when some source atom has an intra/inter candidate cost tie."""
    from sotx.transport import block_cost  # local import; transport builds on measures

    srcs = [(mu.plus.atoms, "+"), (mu.minus.atoms, "-")]
    tgts = [(nu.plus.atoms, "+"), (nu.minus.atoms, "-")]
    for atoms, s_sign in srcs:
        if atoms is None:
            continue
        cols = []
        for tatoms, t_sign in tgts:
            if tatoms is None:
                continue
            cols.append(block_cost(atoms.points, tatoms.points, cost, s_sign == t_sign))
        if len(cols) < 2:
            continue
        intra, inter = cols[0], cols[1]
        ties = np.abs(intra[:, :, None] - inter[:, None, :]) <= tie_tol
        if bool(ties.any()):
            return True
    return False


def check_assumptions(mu: SignedMeasure, nu: SignedMeasure, cost,
                      tol: AssumptionTolerances | None = None,
                      kernel_h: float = 0.05, seed: int = 0) -> AssumptionReport:
    """Measure the structural diagnostics for a transport pair.

    Diagnostic only: failures are reported in ``pass_flags``, never raised.
    The H5 flag smooths each fractal part with the adaptive kernel at
    bandwidth ``kernel_h`` and fits the constant in the lower bound
    ``integral over B(x, r) of the smoothed density >= gamma * r**ds``.
    """
    tol = tol or AssumptionTolerances()
    notes = []

    floor, ceiling = _ac_floor_ceiling((mu, nu))
    gap_mu = _component_gap(mu)
    gap_nu = _component_gap(nu)

    # H3: penalty convexity bounds
    alpha0, beta0 = cost.penalty_eigenbounds()
    h3 = alpha0 > 0 and alpha0 <= beta0

    # H4: disjoint ac supports, no cross-sign coincidence, no atom cost ties
    h4 = gap_mu > tol.support_gap_min and gap_nu > tol.support_gap_min
    if _atom_cost_ties(mu, nu, cost, tol.atom_tie):
        h4 = False
        notes.append("opposite-sign atom cost tie within tolerance")

    # H2: common fractal dimension
    ds_values = []
    fractals = []
    for m in (mu, nu):
        for comp in (m.plus, m.minus):
            if comp.fractal is not None:
                ds_values.append(float(comp.fractal.ds))
                fractals.append(comp.fractal)
    h2 = True
    if ds_values:
        h2 = (max(ds_values) - min(ds_values)) <= tol.ds_consistency

    # H1: positive density floor on compact supports (regularity class unchecked)
    has_ac = any(c.ac is not None for m in (mu, nu) for c in (m.plus, m.minus))
    h1 = (not has_ac) or floor > tol.density_floor_min
    notes.append("H1 boundary regularity class is not numerically checked")

    # H5: smoothed fractal parts keep d_s-dimensional mass in balls
    h5 = True
    h5_gamma = None
    if fractals:
        from sotx.fractalgeo import KernelSpec, fractal_smooth, kernel_normalizer

        gammas = []
        for part in fractals:
            spec = KernelSpec(ds=part.ds, h=kernel_h, e_sample=part, seed=seed)
            kernel_normalizer(spec)
            smoothed = fractal_smooth(part, spec)
            gammas.append(_h5_gamma(smoothed, part, kernel_h, tol.h5_radii, seed))
        h5_gamma = float(min(gammas))
        h5 = h5_gamma > 0
    flags = {"H1": bool(h1), "H2": bool(h2), "H3": bool(h3), "H4": bool(h4), "H5": bool(h5)}
    return AssumptionReport(
        density_floor=floor,
        density_ceiling=ceiling,
        support_gap_mu=gap_mu,
        support_gap_nu=gap_nu,
        penalty_eigenbounds=(alpha0, beta0),
        ds_values=sorted(set(ds_values)),
        h5_gamma=h5_gamma,
        pass_flags=flags,
        notes=notes,
    )


def _h5_gamma(smoothed: GridDensity, part: FractalPart, h: float,
              radii_units: tuple, seed: int) -> float:
    """Fitted constant gamma in the ball-mass lower bound for r >= h."""
    rng = np.random.default_rng(seed)
    centers = part.points
    if len(centers) > 64:
        centers = centers[rng.choice(len(centers), 64, replace=False)]
    grid_pts = smoothed.centers()
    grid_w = smoothed.values.ravel() * smoothed.cell_volume
    gamma = np.inf
    for unit in radii_units:
        r = unit * h
        for x in centers:
            ball = np.linalg.norm(grid_pts - x, axis=1) <= r
            mass = float(grid_w[ball].sum())
            gamma = min(gamma, mass / r ** part.ds)
    return float(gamma)


def balance_pair(mu_clouds: tuple[Cloud, Cloud], nu_clouds: tuple[Cloud, Cloud],
                 rtol: float = MASS_BALANCE_RTOL,
                 require_signed_balance: bool = True) -> tuple[Cloud, Cloud]:
    """Rescale the target pair so total variations match exactly.

    The transport LP needs equal total source and target mass. Within
    ``rtol`` relative the target clouds are rescaled by the mass ratio;
    beyond it a ``ValueError`` is raised. When ``require_signed_balance`` the
    signed totals must also agree (the setting in which the inter-sign plan
    masses are forced equal); window scans disable it.
    """
    mu_tv = mu_clouds[0].mass + mu_clouds[1].mass
    nu_tv = nu_clouds[0].mass + nu_clouds[1].mass
    if mu_tv <= 0 or nu_tv <= 0:
        raise ValueError("transport pair must have positive total variation")
    scale = max(mu_tv, nu_tv)
    if abs(mu_tv - nu_tv) > rtol * scale:
        raise ValueError(
            f"total-variation imbalance {mu_tv:.12g} vs {nu_tv:.12g} exceeds tolerance")
    if require_signed_balance:
        mu_signed = mu_clouds[0].mass - mu_clouds[1].mass
        nu_signed = nu_clouds[0].mass - nu_clouds[1].mass
        if abs(mu_signed - nu_signed) > rtol * scale:
            raise ValueError(
                f"signed-mass imbalance {mu_signed:.12g} vs {nu_signed:.12g} "
                "exceeds tolerance")
    ratio = mu_tv / nu_tv
    nu_plus = Cloud(nu_clouds[0].points, nu_clouds[0].weights * ratio)
    nu_minus = Cloud(nu_clouds[1].points, nu_clouds[1].weights * ratio)
    return nu_plus, nu_minus
