"""File formats: point-cloud CSV, measure manifests, and JSON reports.

Clouds are CSV with header ``x1,...,xd,weight``. A measure manifest is JSON
with ``{dim, parts: {...}}`` where each part entry points at its CSV and
carries the metadata needed to rebuild it exactly (grid geometry for
densities, dimension and density bounds for fractal samples). All JSON is
written with sorted keys so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from sotx.measures import (
    AtomSet,
    FractalPart,
    GridDensity,
    SignedComponent,
    SignedMeasure,
    build_signed_measure,
)

__all__ = [
    "write_cloud_csv",
    "read_cloud_csv",
    "write_measure",
    "read_measure",
    "write_json",
    "read_json",
]


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_cloud_csv(path, points: np.ndarray, weights: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = np.atleast_2d(points)
    d = pts.shape[1]
    lines = [",".join([f"x{k + 1}" for k in range(d)] + ["weight"])]
    for p, w in zip(pts, weights):
        lines.append(",".join(repr(float(v)) for v in p) + f",{float(w)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_cloud_csv(path) -> tuple[np.ndarray, np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    d = len(header) - 1
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    arr = np.asarray(rows, dtype=float).reshape(-1, d + 1)
    return arr[:, :d], arr[:, d]


def _write_grid(grid: GridDensity, stem: Path) -> dict:
    pts = grid.centers()
    weights = grid.values.ravel() * grid.cell_volume
    write_cloud_csv(stem.with_suffix(".csv"), pts, weights)
    return {"file": stem.with_suffix(".csv").name,
            "origin": grid.origin.tolist(),
            "spacing": grid.spacing.tolist(),
            "shape": list(grid.values.shape)}


def _read_grid(entry: dict, base: Path) -> GridDensity:
    _, weights = read_cloud_csv(base / entry["file"])
    shape = tuple(entry["shape"])
    spacing = np.asarray(entry["spacing"], dtype=float)
    values = weights.reshape(shape) / float(np.prod(spacing))
    return GridDensity(np.asarray(entry["origin"], dtype=float), spacing, values)


def write_measure(measure: SignedMeasure, out_dir, name: str) -> Path:
    """Persist a signed measure as per-part CSVs plus a manifest JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = {}
    for sign_name, comp in (("plus", measure.plus), ("minus", measure.minus)):
        if comp.ac is not None:
            parts[f"ac_{sign_name}"] = _write_grid(comp.ac, out / f"{name}_ac_{sign_name}")
        if comp.smoothed is not None:
            parts[f"smoothed_{sign_name}"] = _write_grid(
                comp.smoothed, out / f"{name}_smoothed_{sign_name}")
        if comp.atoms is not None:
            f = write_cloud_csv(out / f"{name}_atoms_{sign_name}.csv",
                                comp.atoms.points, comp.atoms.masses)
            parts[f"atoms_{sign_name}"] = {"file": f.name}
        if comp.fractal is not None:
            fr = comp.fractal
            f = write_cloud_csv(out / f"{name}_fractal_{sign_name}.csv",
                                fr.points, fr.weights)
            parts[f"fractal_{sign_name}"] = {
                "file": f.name, "ds": fr.ds,
                "m": fr.density_bounds[0], "M": fr.density_bounds[1],
                "label": fr.label}
    manifest = {"dim": measure.dim, "parts": parts}
    return write_json(out / f"{name}.json", manifest)


def read_measure(manifest_path) -> SignedMeasure:
    path = Path(manifest_path)
    manifest = read_json(path)
    base = path.parent
    dim = int(manifest["dim"])
    comps = {}
    for sign_name in ("plus", "minus"):
        parts = manifest["parts"]
        ac = _read_grid(parts[f"ac_{sign_name}"], base) \
            if f"ac_{sign_name}" in parts else None
        smoothed = _read_grid(parts[f"smoothed_{sign_name}"], base) \
            if f"smoothed_{sign_name}" in parts else None
        atoms = None
        if f"atoms_{sign_name}" in parts:
            pts, masses = read_cloud_csv(base / parts[f"atoms_{sign_name}"]["file"])
            atoms = AtomSet(pts, masses)
        fractal = None
        if f"fractal_{sign_name}" in parts:
            entry = parts[f"fractal_{sign_name}"]
            pts, weights = read_cloud_csv(base / entry["file"])
            fractal = FractalPart(points=pts, weights=weights, ds=float(entry["ds"]),
                                  density_bounds=(float(entry["m"]), float(entry["M"])),
                                  label=entry.get("label", ""))
        comps[sign_name] = SignedComponent(ac=ac, atoms=atoms, fractal=fractal,
                                           smoothed=smoothed)
    return build_signed_measure(comps["plus"], comps["minus"], dim)
