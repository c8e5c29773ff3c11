"""Figure rendering for the CLI report paths (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_measure_pair",
    "plot_map",
    "plot_labels",
    "plot_scan",
    "plot_decay",
    "plot_dimension_fit",
    "plot_weak_error",
]

BLOCK_COLORS = {"PP": "tab:blue", "MM": "tab:red", "PM": "tab:purple",
                "MP": "tab:orange", "UNASSIGNED": "0.6"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def _component_artists(ax, comp, sign: str, dim: int):
    color = "tab:blue" if sign == "+" else "tab:red"
    for grid, style in ((comp.ac, "-"), (comp.smoothed, "--")):
        if grid is None:
            continue
        if dim == 1:
            ax.plot(grid.axis_centers(0), grid.values.ravel(), style, color=color,
                    lw=1.2, label=f"ac {sign}" if style == "-" else f"smoothed {sign}")
        else:
            pts = grid.support_points()
            ax.scatter(pts[:, 0], pts[:, 1], s=2, color=color, alpha=0.25)
    if comp.atoms is not None:
        pts = comp.atoms.points
        if dim == 1:
            ax.stem(pts[:, 0], comp.atoms.masses, linefmt=color, markerfmt="o",
                    basefmt=" ")
        else:
            ax.scatter(pts[:, 0], pts[:, 1], s=40, color=color, marker="^")
    if comp.fractal is not None:
        pts = comp.fractal.points
        if dim == 1:
            ax.plot(pts[:, 0], np.zeros(len(pts)), "|", color=color, ms=12)
        else:
            ax.scatter(pts[:, 0], pts[:, 1], s=3, color=color, marker=".")


def plot_measure_pair(mu, nu, path) -> Path:
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for ax, m, name in ((axes[0], mu, "source"), (axes[1], nu, "target")):
        _component_artists(ax, m.plus, "+", m.dim)
        _component_artists(ax, m.minus, "-", m.dim)
        ax.set_ylabel(name)
        ax.legend(loc="best", fontsize=7)
    axes[1].set_xlabel("x")
    fig.suptitle("signed measure pair")
    return _save(fig, path)


def plot_map(tmap, path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    X = tmap.source_points
    T = tmap.image
    dim = X.shape[1]
    for k in range(len(X)):
        color = BLOCK_COLORS.get(tmap.dominant_block[k], "0.5")
        if dim == 1:
            ax.plot([X[k, 0], T[k, 0]], [0, 1], color=color, lw=0.5, alpha=0.6)
        else:
            ax.annotate("", xy=T[k], xytext=X[k],
                        arrowprops=dict(arrowstyle="->", color=color, lw=0.5))
    if dim == 1:
        ax.set_yticks([0, 1])
        ax.set_yticklabels(["source", "target"])
    handles = [plt.Line2D([0], [0], color=c, label=b)
               for b, c in BLOCK_COLORS.items() if b != "UNASSIGNED"]
    ax.legend(handles=handles, fontsize=7)
    ax.set_title("transport map by block")
    return _save(fig, path)


def plot_labels(tmap, labels, path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 3))
    X = tmap.source_points
    dim = X.shape[1]
    for label in BLOCK_COLORS:
        idx = [k for k, lab in enumerate(labels.labels) if lab == label]
        if not idx:
            continue
        if dim == 1:
            ax.plot(X[idx, 0], np.zeros(len(idx)), "o", ms=4,
                    color=BLOCK_COLORS[label], label=label)
        else:
            ax.scatter(X[idx, 0], X[idx, 1], s=8, color=BLOCK_COLORS[label],
                       label=label)
    ax.legend(fontsize=7)
    ax.set_title(f"partition labels (delta={labels.delta:g})")
    return _save(fig, path)


def plot_scan(rows, path) -> Path:
    fig, ax1 = plt.subplots(figsize=(8, 3.5))
    ts = [r["t"] for r in rows if r["R"] is not None]
    rs = [r["R"] for r in rows if r["R"] is not None]
    ds = [r["d_ST"] for r in rows if r["R"] is not None]
    ax1.plot(ts, rs, "o-", color="tab:orange", label="R")
    ax1.set_ylabel("inter-sign ratio R", color="tab:orange")
    ax1.set_ylim(-0.05, 1.05)
    ax2 = ax1.twinx()
    ax2.plot(ts, ds, "s--", color="tab:blue", label="d_ST")
    ax2.set_ylabel("texture distance", color="tab:blue")
    ax1.set_xlabel("window start")
    fig.suptitle("regime scan")
    return _save(fig, path)


def plot_decay(spacings, norms, path, rate_line: float | None = 1.0) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(spacings, norms, "o-", label="max residual")
    if rate_line is not None and len(spacings) > 1:
        ref = norms[0] * (np.asarray(spacings) / spacings[0]) ** rate_line
        ax.loglog(spacings, ref, "--", color="0.6", label=f"order {rate_line:g}")
    ax.set_xlabel("grid spacing")
    ax.set_ylabel("residual norm")
    ax.legend(fontsize=8)
    ax.set_title("residual decay under refinement")
    return _save(fig, path)


def plot_dimension_fit(fit, path, ds: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    if fit.scales:
        x = np.log(1.0 / np.asarray(fit.scales))
        y = np.log(np.asarray(fit.counts, dtype=float))
        ax.plot(x, y, "o", label="counts")
        coef = np.polyfit(x, y, 1)
        ax.plot(x, np.polyval(coef, x), "-",
                label=f"slope {fit.d_hat:.4f} (r2 {fit.fit_r2:.4f})")
    if ds is not None:
        ax.plot([], [], " ", label=f"target ds {ds:.4f}")
    ax.set_xlabel("log 1/eps")
    ax.set_ylabel("log N(eps)")
    ax.legend(fontsize=8)
    ax.set_title("box-counting fit")
    return _save(fig, path)


def plot_weak_error(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    errors = [r["error"] for r in report["rows"]]
    bounds = [r["bound"] for r in report["rows"]]
    ax.plot(errors, "o", ms=3, label="measured")
    ax.axhline(bounds[0], color="tab:red", ls="--",
               label=f"bound mass*h = {bounds[0]:.3g}")
    ax.set_xlabel("test function")
    ax.set_ylabel("weak error")
    ax.legend(fontsize=8)
    ax.set_title(f"smoothing weak error at h={report['h']:g}")
    return _save(fig, path)
