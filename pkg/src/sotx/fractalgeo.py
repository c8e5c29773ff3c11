"""Fractal test-set generators, dimension estimators, and the adaptive kernel.

The kernel smooths measures carried by a d_s-dimensional set E: its value at
offset z is the bump profile ``rho(|z|/h)`` weighted by the local ball mass
of E at z and scaled by ``h**-ds``, normalized by the quadrature constant
``z_h`` so the kernel integrates to one. Ball masses are estimated from the
weighted sample of E; below roughly three nearest-neighbor spacings the
point-cloud approximation of the underlying measure breaks down and scales
are excluded.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from sotx.measures import Cloud, FractalPart, GridDensity

__all__ = [
    "KernelSpec",
    "AhlforsReport",
    "DimensionFit",
    "generate_cantor",
    "generate_sierpinski",
    "local_measure",
    "ahlfors_constants",
    "box_counting_dimension",
    "kernel_normalizer",
    "kernel_eval",
    "kernel_mass_check",
    "kernel_convolve",
    "fractal_smooth",
    "profile_l1_norm",
]

CANTOR_DS = np.log(2.0) / np.log(3.0)
SIERPINSKI_DS = np.log(3.0) / np.log(2.0)

MAX_CANTOR_DEPTH = 20
MAX_SIERPINSKI_DEPTH = 13


# ---------------------------------------------------------------------------
# bump profiles

def _rho_poly3(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = t <= 1.0
    out[m] = (1.0 - t[m] ** 2) ** 3
    return out


def _rho_cosine(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    m = t <= 1.0
    out[m] = 0.5 * (1.0 + np.cos(np.pi * t[m]))
    return out


PROFILES = {"poly3": _rho_poly3, "cosine": _rho_cosine}


def profile_l1_norm(name: str, dim: int) -> float:
    """L1 norm of z -> rho(|z|) over R^dim (radial quadrature)."""
    rho = PROFILES[name]
    if dim == 1:
        val, _ = integrate.quad(lambda r: 2.0 * rho(np.array([r]))[0], 0.0, 1.0)
    else:
        surf = 2.0 * np.pi ** (dim / 2) / math.gamma(dim / 2)
        val, _ = integrate.quad(
            lambda r: surf * r ** (dim - 1) * rho(np.array([r]))[0], 0.0, 1.0)
    return float(val)


# ---------------------------------------------------------------------------
# generators

def _estimate_density_bounds(points: np.ndarray, weights: np.ndarray,
                             ds: float) -> tuple[float, float]:
    """Min/max local weight per r**ds ball at the finest trusted scale."""
    if len(points) < 2:
        return (0.0, float("inf"))
    r0 = 3.0 * _nn_spacing(points)
    masses = _ball_mass(points, weights, points, r0)
    dens = masses / r0 ** ds
    return (float(dens.min()), float(dens.max()))


def generate_cantor(depth: int, interval: tuple[float, float] = (0.0, 1.0),
                    mass: float = 1.0) -> FractalPart:
    """Middle-thirds construction sampled at level-``depth`` interval centers.

    Returns ``2**depth`` points with uniform weights ``mass / 2**depth`` and
    dimension ``log 2 / log 3``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > MAX_CANTOR_DEPTH:
        raise ValueError(f"depth {depth} exceeds the size guard {MAX_CANTOR_DEPTH}")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise ValueError("interval must have positive length")
    pts = np.array([0.0])
    w = 1.0
    for _ in range(depth):
        w /= 3.0
        pts = np.concatenate([pts, pts + 2.0 * w])
    pts = np.sort(pts) + w / 2.0  # centers of level-depth intervals on [0, 1]
    pts = a + (b - a) * pts
    n = len(pts)
    weights = np.full(n, mass / n)
    bounds = _estimate_density_bounds(pts.reshape(-1, 1), weights, CANTOR_DS)
    return FractalPart(points=pts.reshape(-1, 1), weights=weights, ds=CANTOR_DS,
                       density_bounds=bounds, label=f"cantor(depth={depth})")


def generate_sierpinski(depth: int, mass: float = 1.0) -> FractalPart:
    """Sierpinski gasket sampled at level-``depth`` sub-triangle centroids."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > MAX_SIERPINSKI_DEPTH:
        raise ValueError(f"depth {depth} exceeds the size guard {MAX_SIERPINSKI_DEPTH}")
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]])
    pts = np.array([[0.0, 0.0]])
    w = 1.0
    for _ in range(depth):
        w /= 2.0
        pts = np.concatenate([pts + w * v for v in verts])
    pts = pts + verts.mean(axis=0) * w  # corner -> centroid of each sub-triangle
    n = len(pts)
    weights = np.full(n, mass / n)
    bounds = _estimate_density_bounds(pts, weights, SIERPINSKI_DS)
    return FractalPart(points=pts, weights=weights, ds=SIERPINSKI_DS,
                       density_bounds=bounds, label=f"sierpinski(depth={depth})")


# ---------------------------------------------------------------------------
# ball masses and local Hausdorff measure

def _nn_spacing(points: np.ndarray) -> float:
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return float(np.median(d[:, 1]))


def _ball_mass(sample: np.ndarray, weights: np.ndarray, queries: np.ndarray,
               r: float) -> np.ndarray:
    """Total sample weight within the closed ball of radius r at each query."""
    queries = np.atleast_2d(queries)
    if sample.shape[1] == 1:
        order = np.argsort(sample[:, 0])
        ys = sample[order, 0]
        cw = np.concatenate([[0.0], np.cumsum(weights[order])])
        hi = np.searchsorted(ys, queries[:, 0] + r, side="right")
        lo = np.searchsorted(ys, queries[:, 0] - r, side="left")
        return cw[hi] - cw[lo]
    tree = cKDTree(sample)
    groups = tree.query_ball_point(queries, r, workers=-1)
    return np.array([weights[g].sum() if len(g) else 0.0 for g in groups])


def local_measure(E: FractalPart | Cloud, z, r: float) -> float:
    """Sampled measure of ``E`` intersected with the closed ball B(z, r)."""
    if r <= 0:
        raise ValueError("radius must be positive")
    pts, w = _sample_of(E)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return float(_ball_mass(pts, w, z, r)[0])


def _sample_of(E) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(E, FractalPart):
        return E.points, E.weights
    if isinstance(E, Cloud):
        return E.points, E.weights
    raise TypeError("expected FractalPart or Cloud")


# ---------------------------------------------------------------------------
# Ahlfors regularity

@dataclass
class AhlforsReport:
    """Extremal ball-mass ratios against r**ds over sampled centers and scales."""

    c_lower: float
    c_upper: float
    scales: list[float]
    n_centers: int
    max_ratio: float
    passed: bool

    @property
    def ratio(self) -> float:
        return self.c_upper / self.c_lower if self.c_lower > 0 else float("inf")

    def to_dict(self) -> dict:
        return {"c_lower": self.c_lower, "c_upper": self.c_upper,
                "scales": list(self.scales), "n_centers": self.n_centers,
                "max_ratio": self.max_ratio, "pass": self.passed}


def ahlfors_constants(E: FractalPart | Cloud, ds: float,
                      scales=None, centers: int = 64, seed: int = 0,
                      max_ratio: float = 12.0) -> AhlforsReport:
    """Measure the regularity constants of ``E`` against dimension ``ds``.

    Centers are drawn from the sample itself; scales below three
    nearest-neighbor spacings are excluded with a warning. The check passes
    when ``c_upper / c_lower <= max_ratio``.
    """
    pts, w = _sample_of(E)
    rng = np.random.default_rng(seed)
    if len(pts) > centers:
        idx = rng.choice(len(pts), centers, replace=False)
        ctr = pts[idx]
    else:
        ctr = pts
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    r_min = 3.0 * _nn_spacing(pts)
    if scales is None:
        scales = [diam / 2 ** k for k in range(1, 16) if diam / 2 ** k >= r_min]
    used = []
    for r in scales:
        if r < r_min:
            warnings.warn(f"scale {r:.3g} below sample resolution, excluded",
                          RuntimeWarning)
        elif r <= diam:
            used.append(float(r))
    if not used:
        raise ValueError("no usable scales between sample resolution and diameter")
    c_lo, c_hi = np.inf, 0.0
    for r in used:
        ratios = _ball_mass(pts, w, ctr, r) / r ** ds
        c_lo = min(c_lo, float(ratios.min()))
        c_hi = max(c_hi, float(ratios.max()))
    passed = c_lo > 0 and (c_hi / c_lo) <= max_ratio
    return AhlforsReport(c_lower=c_lo, c_upper=c_hi, scales=used,
                         n_centers=len(ctr), max_ratio=max_ratio, passed=passed)


# ---------------------------------------------------------------------------
# box counting

@dataclass
class DimensionFit:
    """Least-squares slope of log N(eps) against log(1/eps)."""

    d_hat: float
    scales: list[float]
    counts: list[int]
    fit_r2: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"d_hat": self.d_hat, "scales": list(self.scales),
                "counts": list(self.counts), "fit_r2": self.fit_r2,
                "degenerate": self.degenerate}


def box_counting_dimension(cloud, scale_range: tuple[float, float] | None = None
                           ) -> DimensionFit:
    """Box-counting dimension of a point cloud on dyadic scales.

    Boxes are axis-aligned and anchored at the cloud's bounding-box corner.
    The default range runs from a quarter of the bounding-box side down to
    three nearest-neighbor spacings, extended upward if fewer than four
    dyadic scales fit.
    """
    pts = cloud.points if isinstance(cloud, (Cloud, FractalPart)) else np.atleast_2d(cloud)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    corner = pts.min(axis=0)
    span = float((pts.max(axis=0) - corner).max())
    if span == 0.0 or len(pts) < 2:
        return DimensionFit(d_hat=0.0, scales=[], counts=[], fit_r2=0.0,
                            degenerate=True)
    if scale_range is None:
        e_min = 3.0 * _nn_spacing(pts)
        e_max = span / 4.0
        while e_max / e_min < 8.0 and e_max < span:  # fewer than 4 dyadic scales
            e_max *= 2.0
    else:
        e_min, e_max = float(scale_range[0]), float(scale_range[1])
    scales = []
    e = e_max
    while e >= e_min and len(scales) < 24:
        scales.append(e)
        e /= 2.0
    if len(scales) < 4:
        raise ValueError("need at least 4 dyadic scales in the range")
    counts = []
    for e in scales:
        idx = np.floor((pts - corner) / e).astype(np.int64)
        counts.append(int(len(np.unique(idx, axis=0))))
    x = np.log(1.0 / np.asarray(scales))
    y = np.log(np.asarray(counts, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return DimensionFit(d_hat=float(slope), scales=[float(s) for s in scales],
                        counts=counts, fit_r2=r2)


# ---------------------------------------------------------------------------
# adaptive kernel

@dataclass
class KernelSpec:
    """Adaptive kernel configuration bound to a sampled set E.

    ``z_h`` is filled in by ``kernel_normalizer`` and cached; evaluation
    before normalization is an error. ``position_weighted`` switches the
    ball-mass weight from the offset argument to the evaluation point (with
    per-source normalization); the default is the offset-weighted form.
    """

    ds: float
    h: float
    e_sample: FractalPart
    rho: str = "poly3"
    nodes: int = 100_000
    seed: int = 0
    position_weighted: bool = False
    z_h: float | None = field(default=None, compare=False)
    z_h_error: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("bandwidth h must be positive")
        if self.rho not in PROFILES:
            raise ValueError(f"unknown profile {self.rho!r}")
        rho = PROFILES[self.rho]
        if not rho(np.array([0.0]))[0] > 0:
            raise ValueError("profile must be positive at 0")

    @property
    def dim(self) -> int:
        return self.e_sample.dim

    def profile(self, t: np.ndarray) -> np.ndarray:
        return PROFILES[self.rho](t)

    def to_dict(self) -> dict:
        return {"ds": self.ds, "h": self.h, "rho": {"name": self.rho, "params": {}},
                "z_h": self.z_h,
                "quadrature": {"nodes": self.nodes, "seed": self.seed},
                "position_weighted": self.position_weighted}


def _stratified_nodes(dim: int, h: float, n: int, rng) -> tuple[np.ndarray, float]:
    """Stratified uniform nodes on the cube [-h, h]^dim and its volume."""
    k = max(1, int(round(n ** (1.0 / dim))))
    n_per = max(1, n // k ** dim)
    cells = np.stack(np.meshgrid(*([np.arange(k)] * dim), indexing="ij"),
                     axis=-1).reshape(-1, dim)
    width = 2.0 * h / k
    lo = -h + cells * width
    u = rng.random((len(cells), n_per, dim))
    pts = (lo[:, None, :] + u * width).reshape(-1, dim)
    return pts, (2.0 * h) ** dim


def _kernel_raw(spec: KernelSpec, z: np.ndarray) -> np.ndarray:
    """Unnormalized kernel integrand h^-ds * rho(|z|/h) * ballmass(z, h)."""
    z = np.atleast_2d(z)
    r = np.linalg.norm(z, axis=1)
    vals = spec.profile(r / spec.h)
    m = vals > 0
    if np.any(m):
        vals[m] = vals[m] * _ball_mass(spec.e_sample.points, spec.e_sample.weights,
                                       z[m], spec.h)
    return spec.h ** (-spec.ds) * vals


def kernel_normalizer(spec: KernelSpec) -> float:
    """Stratified Monte Carlo quadrature of the kernel integrand.

    Caches the value on the spec and returns it; a nonpositive result with a
    nonempty sample is an internal error. The batch standard error of the
    estimate is stored alongside.
    """
    if spec.nodes < 10_000:
        raise ValueError("normalizer quadrature needs at least 1e4 nodes")
    rng = np.random.default_rng(spec.seed)
    pts, vol = _stratified_nodes(spec.dim, spec.h, spec.nodes, rng)
    vals = _kernel_raw(spec, pts)
    z = float(vals.mean() * vol)
    # within-stratum variances give the stratified-sampling standard error
    k = max(1, int(round(spec.nodes ** (1.0 / spec.dim))))
    n_per = max(1, spec.nodes // k ** spec.dim)
    per_cell = vals.reshape(-1, n_per)
    if n_per > 1:
        cell_var = per_cell.var(axis=1, ddof=1)
        err = float(vol * np.sqrt(cell_var.sum() / n_per) / per_cell.shape[0])
    else:
        err = float(vol * vals.std(ddof=1) / np.sqrt(len(vals)))
    if z <= 0:
        raise RuntimeError("kernel normalizer is nonpositive; sample/bandwidth "
                           "leave the integrand without support")
    spec.z_h = z
    spec.z_h_error = err
    return z


def kernel_eval(spec: KernelSpec, z) -> np.ndarray:
    """Normalized kernel value at offsets ``z`` (vectorized).

    Zero whenever |z| > h or the sample of E puts no mass within h of z.
    """
    if spec.z_h is None:
        raise ValueError("normalizer not computed; call kernel_normalizer first")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    return _kernel_raw(spec, z) / spec.z_h


def kernel_mass_check(spec: KernelSpec, nodes: int | None = None,
                      seed: int | None = None) -> float:
    """Independent quadrature of the normalized kernel; 1 up to MC error."""
    if spec.z_h is None:
        raise ValueError("normalizer not computed; call kernel_normalizer first")
    nodes = nodes if nodes is not None else spec.nodes
    seed = seed if seed is not None else spec.seed + 1
    rng = np.random.default_rng(seed)
    pts, vol = _stratified_nodes(spec.dim, spec.h, nodes, rng)
    return float(_kernel_raw(spec, pts).mean() * vol / spec.z_h)


def kernel_convolve(spec: KernelSpec, fn, points, nodes: int = 20_000,
                    seed: int | None = None) -> np.ndarray:
    """Quadrature of (fn * K_h)(x) at the given points."""
    if spec.z_h is None:
        raise ValueError("normalizer not computed; call kernel_normalizer first")
    rng = np.random.default_rng(spec.seed + 2 if seed is None else seed)
    zs, vol = _stratified_nodes(spec.dim, spec.h, nodes, rng)
    kv = _kernel_raw(spec, zs) / spec.z_h
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(pts))
    for i, x in enumerate(pts):
        out[i] = float(np.mean(fn(x[None, :] - zs) * kv) * vol)
    return out


def fractal_smooth(part: FractalPart, spec: KernelSpec,
                   spacing: float | None = None) -> GridDensity:
    """Smooth a fractal part onto a grid covering its support plus one bandwidth.

    The grid spacing defaults to h/5; anything coarser than h/2 undersamples
    the kernel and is an error. Under the default convention the result is
    ``sum_y w_y K(x - y)``; under ``position_weighted`` the ball-mass weight
    sits at the evaluation point and each source is normalized exactly on the
    grid.
    """
    h = spec.h
    if spec.z_h is None and not spec.position_weighted:
        kernel_normalizer(spec)
    if spacing is None:
        spacing = h / 5.0
    if spacing > h / 2.0 + 1e-12:
        raise ValueError(f"grid spacing {spacing} undersamples the kernel (> h/2)")
    pts, w = part.points, part.weights
    dim = part.dim
    lo = pts.min(axis=0) - h - spacing
    hi = pts.max(axis=0) + h + spacing
    shape = np.maximum(np.ceil((hi - lo) / spacing).astype(int), 3)
    grid = GridDensity(lo, np.full(dim, spacing), np.zeros(shape))
    centers_axes = [grid.axis_centers(k) for k in range(dim)]
    values = np.zeros(shape)
    cellvol = grid.cell_volume

    pos_weight = None
    if spec.position_weighted:
        all_centers = grid.centers()
        pos_weight = _ball_mass(pts, w, all_centers, h).reshape(shape)

    for y, wy in zip(pts, w):
        # window of grid cells within one bandwidth of the source point
        sl = []
        for k in range(dim):
            ax = centers_axes[k]
            i0 = int(np.searchsorted(ax, y[k] - h))
            i1 = int(np.searchsorted(ax, y[k] + h, side="right"))
            sl.append(slice(max(i0 - 1, 0), min(i1 + 1, shape[k])))
        sub_axes = [centers_axes[k][sl[k]] for k in range(dim)]
        mesh = np.meshgrid(*sub_axes, indexing="ij")
        xs = np.stack([mm.ravel() for mm in mesh], axis=1)
        z = xs - y[None, :]
        if spec.position_weighted:
            r = np.linalg.norm(z, axis=1)
            kv = spec.profile(r / h) * pos_weight[tuple(sl)].ravel()
            total = kv.sum() * cellvol
            if total > 0:
                values[tuple(sl)] += (wy * kv / total).reshape(
                    [len(a) for a in sub_axes])
        else:
            kv = _kernel_raw(spec, z) / spec.z_h
            values[tuple(sl)] += (wy * kv).reshape([len(a) for a in sub_axes])
    return GridDensity(lo, np.full(dim, spacing), values)
