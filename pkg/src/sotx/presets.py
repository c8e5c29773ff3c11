"""Synthetic measure pairs covering the component mix of the data model."""

from __future__ import annotations

import numpy as np

from sotx.fractalgeo import generate_cantor, generate_sierpinski
from sotx.measures import (
    AtomSet,
    FractalPart,
    GridDensity,
    SignedComponent,
    SignedMeasure,
    build_signed_measure,
)

__all__ = ["make_preset", "PRESETS", "gaussian_grid"]


def gaussian_grid(mean: float, sd: float, lo: float, hi: float, n: int,
                  mass: float = 1.0) -> GridDensity:
    """Truncated Gaussian renormalized to ``mass`` on [lo, hi] with n cells."""
    edges = np.linspace(lo, hi, n + 1)
    x = 0.5 * (edges[:-1] + edges[1:])
    dx = edges[1] - edges[0]
    vals = np.exp(-0.5 * ((x - mean) / sd) ** 2)
    vals *= mass / (vals * dx).sum()
    return GridDensity([lo], [dx], vals)


def _affine_fractal(part: FractalPart, scale: float, shift) -> FractalPart:
    shift = np.atleast_1d(np.asarray(shift, dtype=float))
    return FractalPart(points=part.points * scale + shift, weights=part.weights,
                       ds=part.ds, density_bounds=part.density_bounds,
                       label=part.label + f"*affine({scale},{shift.tolist()})")


def cantor_pair(depth: int = 6, scale: float = 1.0, shift: float = 2.0,
                mass: float = 1.0, **_):
    """Plus-only fractal pair: a Cantor sample and its affine image."""
    E = generate_cantor(depth, mass=mass)
    F = _affine_fractal(E, scale, [shift])
    mu = build_signed_measure(SignedComponent(fractal=E), None, 1)
    nu = build_signed_measure(SignedComponent(fractal=F), None, 1)
    return mu, nu


def sierpinski_pair(depth: int = 5, scale: float = 1.0, shift: float = 2.5,
                    mass: float = 1.0, **_):
    E = generate_sierpinski(depth, mass=mass)
    F = _affine_fractal(E, scale, [shift, 0.0])
    mu = build_signed_measure(SignedComponent(fractal=E), None, 2)
    nu = build_signed_measure(SignedComponent(fractal=F), None, 2)
    return mu, nu


def gaussian_signed(resolution: int = 96, signed: bool = True, **_):
    """Separated truncated Gaussians; plus pair fits the refinement checks.

    The target grids are incommensurate with the source grids so the
    discrete solve carries no accidental alignment.
    """
    n = resolution
    ny = int(round(1.37 * n))
    mu_plus = SignedComponent(ac=gaussian_grid(0.0, 1.0, -4.0, 4.0, n))
    nu_plus = SignedComponent(ac=gaussian_grid(1.0, 2.0, -7.13, 9.41, ny))
    if not signed:
        return (build_signed_measure(mu_plus, None, 1),
                build_signed_measure(nu_plus, None, 1))
    mu_minus = SignedComponent(ac=gaussian_grid(12.0, 1.0, 8.0, 16.0, n))
    nu_minus = SignedComponent(ac=gaussian_grid(13.0, 1.5, 9.9, 16.1, ny))
    return (build_signed_measure(mu_plus, mu_minus, 1),
            build_signed_measure(nu_plus, nu_minus, 1))


def atoms_signed(n: int | None = None, seed: int = 0, **_):
    """Two-atom hand instance by default; seeded random atom sets with n."""
    if n is None:
        mu = build_signed_measure(SignedComponent(atoms=AtomSet([[0.0]], [1.0])),
                                  SignedComponent(atoms=AtomSet([[2.0]], [1.0])), 1)
        nu = build_signed_measure(SignedComponent(atoms=AtomSet([[1.0]], [1.0])),
                                  SignedComponent(atoms=AtomSet([[3.0]], [1.0])), 1)
        return mu, nu
    rng = np.random.default_rng(seed)
    boxes = {"mu_plus": 0.0, "nu_plus": 0.5, "mu_minus": 6.0, "nu_minus": 6.5}

    def atoms(offset):
        return AtomSet(rng.uniform(offset, offset + 1.0, size=(n, 1)),
                       np.full(n, 1.0 / n))

    mu = build_signed_measure(SignedComponent(atoms=atoms(boxes["mu_plus"])),
                              SignedComponent(atoms=atoms(boxes["mu_minus"])), 1)
    nu = build_signed_measure(SignedComponent(atoms=atoms(boxes["nu_plus"])),
                              SignedComponent(atoms=atoms(boxes["nu_minus"])), 1)
    return mu, nu


def mixed_triple(depth: int = 5, resolution: int = 64, **_):
    """All six parts present: ac, atoms, and fractal on both signs.

    The plus cluster lives on [-3, 3], the minus cluster on [5, 12]; the
    target is the source translated by 0.25 within each cluster, which keeps
    the separation intact and the masses balanced part by part.
    """
    def cluster(base: float, translate: float) -> SignedComponent:
        ac = gaussian_grid(base, 0.5, base - 1.5, base + 1.5, resolution,
                           mass=1.0)
        ac = GridDensity(ac.origin + translate, ac.spacing, ac.values)
        atoms = AtomSet([[base - 2.6 + translate], [base - 2.2 + translate]],
                        [0.1, 0.2])
        fr = generate_cantor(depth, interval=(base + 2.0 + translate,
                                              base + 3.0 + translate), mass=0.5)
        return SignedComponent(ac=ac, atoms=atoms, fractal=fr)

    mu = build_signed_measure(cluster(0.0, 0.0), cluster(8.0, 0.0), 1)
    nu = build_signed_measure(cluster(0.0, 0.25), cluster(8.0, 0.25), 1)
    return mu, nu


PRESETS = {
    "cantor-pair": cantor_pair,
    "sierpinski-pair": sierpinski_pair,
    "gaussian-signed": gaussian_signed,
    "atoms-signed": atoms_signed,
    "mixed-triple": mixed_triple,
}


def make_preset(name: str, **params) -> tuple[SignedMeasure, SignedMeasure]:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**params)
