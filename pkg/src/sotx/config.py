"""Run configuration: defaults, file overrides, and the reproducibility hash."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

__all__ = ["RunConfig", "DEFAULT_CONFIG"]

DEFAULT_CONFIG = {
    "cost": {"alpha": 0.5},
    "solver": {"kind": "exact", "epsilon": 1e-3, "cap": 20000},
    "regularization": {"enabled": "auto", "delta_plus": None, "delta_minus": None,
                       "h": 0.05, "n": 0, "grid_resolution": None},
    "partition": {"delta": 1e-4},
    "kernel": {"h": 0.05, "rho": "poly3", "nodes": 100000,
               "position_weighted": False},
    "verify": {"ma_resolutions": [64, 128, 256], "ma_rate": 1.7,
               "legendre_scaled_tol": 1e-6, "dim_tolerance": 0.1,
               "kernel_mass_tol": 1e-3, "weak_error_h": [0.1, 0.05, 0.025],
               "monotone_samples": 1000, "monotone_maxlen": 4,
               "z_scaling_octaves": [2, 8], "ahlfors_max_ratio": 12.0},
    "seed": 0,
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


class RunConfig:
    """Resolved configuration with dotted access for the pipeline."""

    def __init__(self, overrides: dict | None = None, seed: int | None = None):
        data = _merge(DEFAULT_CONFIG, overrides or {})
        if seed is not None:
            data["seed"] = int(seed)
        self.data = data

    @classmethod
    def load(cls, path=None, seed: int | None = None) -> "RunConfig":
        overrides = {}
        if path is not None:
            overrides = json.loads(Path(path).read_text())
        return cls(overrides, seed=seed)

    def __getitem__(self, dotted: str):
        node = self.data
        for key in dotted.split("."):
            node = node[key]
        return node

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.data))

    def hash(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True,
                               separators=(",", ":")).encode()
        return hashlib.sha256(canonical).hexdigest()[:16]
