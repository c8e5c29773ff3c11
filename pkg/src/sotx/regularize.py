"""Signed regularization: mollify smooth parts, keep atoms, smooth fractals.

The operator mollifies the two absolutely continuous parts with distinct
radii (preserving the support separation), passes atoms through unchanged,
and replaces each fractal part by its adaptive-kernel smoothing. The weak
error of the fractal step is bounded by ``mass * h`` per unit Lipschitz
constant, which ``weak_error_check`` measures against a battery of test
functions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from sotx.fractalgeo import PROFILES, KernelSpec, fractal_smooth, kernel_normalizer
from sotx.measures import FractalPart, GridDensity, SignedComponent, SignedMeasure

__all__ = [
    "RegularizationParams",
    "mollify_ac",
    "apply_Rn",
    "weak_error_check",
    "lipschitz_test_functions",
]


@dataclass(frozen=True)
class RegularizationParams:
    """Stage parameters: distinct mollifier radii, bandwidth, output grid."""

    delta_plus: float
    delta_minus: float
    h: float
    n: int = 0
    grid_resolution: float | None = None  # spacing of the smoothed-fractal grid

    def __post_init__(self):
        if self.delta_plus <= 0 or self.delta_minus <= 0:
            raise ValueError("mollifier radii must be positive")
        if self.delta_plus == self.delta_minus:
            raise ValueError("mollifier radii must be distinct per sign")
        if self.h <= 0:
            raise ValueError("bandwidth h must be positive")

    @staticmethod
    def schedule(gap: float, n: int, h0: float = 0.2) -> "RegularizationParams":
        """Default geometric stage: radii g/4, g/5 and bandwidth h0, halved n times."""
        scale = 0.5 ** n
        return RegularizationParams(delta_plus=scale * gap / 4.0,
                                    delta_minus=scale * gap / 5.0,
                                    h=scale * h0, n=n)

    def to_dict(self) -> dict:
        return {"delta_plus": self.delta_plus, "delta_minus": self.delta_minus,
                "h": self.h, "n": self.n, "grid_resolution": self.grid_resolution}


def _bump_kernel(dim: int, delta: float, spacing: np.ndarray, rho: str = "poly3"
                 ) -> np.ndarray:
    """Discrete compactly supported bump of radius delta, unit discrete mass."""
    radii = np.ceil(delta / spacing).astype(int)
    axes = [np.arange(-r, r + 1) * s for r, s in zip(radii, spacing)]
    mesh = np.meshgrid(*axes, indexing="ij")
    dist = np.sqrt(sum(m ** 2 for m in mesh))
    vals = PROFILES[rho](dist / delta)
    total = vals.sum()
    if total <= 0:
        raise ValueError("mollifier radius below grid resolution")
    return vals / total


def mollify_ac(density: GridDensity, delta: float) -> GridDensity:
    """Convolve a grid density with a C2 bump of radius ``delta``.

    Mass is preserved exactly (the discrete kernel is normalized); the
    support grows by at most ``delta`` per side and the grid is padded
    accordingly.
    """
    spacing = density.spacing
    if delta < float(spacing.max()):
        raise ValueError(f"mollifier radius {delta} below grid spacing")
    kernel = _bump_kernel(density.dim, delta, spacing)
    pad = [(s - 1) // 2 for s in kernel.shape]
    padded = np.pad(density.values, [(p, p) for p in pad])
    out = ndimage.convolve(padded, kernel, mode="constant", cval=0.0)
    out[out < 0] = 0.0  # clip convolution round-off
    origin = density.origin - np.array(pad) * spacing
    return GridDensity(origin, spacing, out)


def _regularize_component(comp: SignedComponent, delta: float,
                          params: RegularizationParams, seed: int
                          ) -> SignedComponent:
    ac = mollify_ac(comp.ac, delta) if comp.ac is not None else None
    smoothed = comp.smoothed
    fractal = comp.fractal
    if fractal is not None:
        spec = KernelSpec(ds=fractal.ds, h=params.h, e_sample=fractal, seed=seed)
        kernel_normalizer(spec)
        smoothed = fractal_smooth(fractal, spec, spacing=params.grid_resolution)
        fractal = None
    return SignedComponent(ac=ac, atoms=comp.atoms, fractal=fractal,
                           smoothed=smoothed)


def apply_Rn(m: SignedMeasure, params: RegularizationParams,
             seed: int = 0) -> SignedMeasure:
    """Apply one regularization stage to a signed measure.

    AC parts are mollified with the sign-specific radii, atoms pass through,
    and fractal parts are replaced by their kernel smoothings (stored in the
    component's ``smoothed`` slot). Support disjointness of the two signs is
    re-checked afterwards; a collision means the radii violate the
    separation precondition.
    """
    from sotx.measures import _cloud_gap, build_signed_measure

    plus = _regularize_component(m.plus, params.delta_plus, params, seed)
    minus = _regularize_component(m.minus, params.delta_minus, params, seed + 1)
    out = build_signed_measure(plus, minus, m.dim)
    if not plus.is_empty and not minus.is_empty:
        gap = _cloud_gap(plus.support_points(), minus.support_points())
        if gap <= 0.0:
            raise ValueError("regularized supports collide; radii violate the "
                             "separation gap")
    for key, mass in m.part_masses.items():
        kind = key.split("_")[0]
        if kind == "atoms":
            if abs(out.part_masses.get(key, 0.0) - mass) > 0:
                raise AssertionError("atoms must pass through unchanged")
        elif kind == "ac":
            new = out.part_masses.get(key, 0.0)
            if abs(new - mass) > 1e-3 * max(mass, 1.0):
                raise AssertionError(f"ac mass drifted: {mass} -> {new}")
        elif kind == "fractal":
            new = out.part_masses.get("smoothed_" + key.split("_")[1], 0.0)
            if abs(new - mass) > 1e-3 * max(mass, 1.0):
                raise AssertionError(f"fractal mass drifted: {mass} -> {new}")
    return out


def lipschitz_test_functions(dim: int, count: int, seed: int = 0):
    """1-Lipschitz piecewise-linear test functions (min of random affines).

    Returns a list of (callable, lipschitz_constant) pairs; each callable
    maps an (n, dim) array to (n,) values.
    """
    rng = np.random.default_rng(seed)
    fns = []
    for _ in range(count):
        k = int(rng.integers(2, 6))
        dirs = rng.normal(size=(k, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        offs = rng.uniform(-1.0, 1.0, size=k)
        take_min = bool(rng.integers(0, 2))

        def fn(x, dirs=dirs, offs=offs, take_min=take_min):
            vals = x @ dirs.T + offs
            return vals.min(axis=1) if take_min else vals.max(axis=1)

        fns.append((fn, 1.0))
    return fns


def weak_error_check(part: FractalPart, spec: KernelSpec, test_fns=None,
                     seed: int = 0, count: int = 100,
                     spacing: float | None = None) -> dict:
    """Measured smoothing error against the ``mass * h * Lip`` bound.

    For each test function the difference between its integral against the
    smoothed density and against the sample is compared with the bound;
    passes require every error at or below bound * (1 + 1e-6).
    """
    if test_fns is None:
        test_fns = lipschitz_test_functions(part.dim, count, seed)
    if spec.z_h is None:
        kernel_normalizer(spec)
    smoothed = fractal_smooth(part, spec, spacing=spacing)
    grid_pts = smoothed.centers()
    grid_w = smoothed.values.ravel() * smoothed.cell_volume
    rows = []
    all_pass = True
    for idx, (fn, lip) in enumerate(test_fns):
        smoothed_int = float(grid_w @ fn(grid_pts))
        sample_int = float(part.weights @ fn(part.points))
        err = abs(smoothed_int - sample_int)
        bound = part.mass * spec.h * lip
        ok = err <= bound * (1.0 + 1e-6)
        all_pass = all_pass and ok
        rows.append({"index": idx, "lip": lip, "error": err, "bound": bound,
                     "pass": bool(ok)})
    return {"h": spec.h, "mass": part.mass, "rows": rows,
            "max_error": max(r["error"] for r in rows), "pass": bool(all_pass)}
