"""Report figures, rendered off-screen to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_ladder(name: str, resolutions, values, path, classification: str = ""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        v = np.asarray(values, dtype=float)
        ax.loglog(resolutions, np.where(v > 0, v, np.nan), "o-")
        ax.set_xlabel("resolution")
        ax.set_ylabel(name)
        ax.set_title(f"{name} ({classification})" if classification else name)
        _save(fig, path)


def plot_sweep(lambdas, violations, lambda_bar: float, tol: float, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(lambdas, np.maximum(violations, 1e-18), ".-", label="max (u - u_lambda)^+ on cap")
        ax.axhline(tol, color="gray", ls="--", lw=0.8, label="tolerance")
        ax.axvline(lambda_bar, color="C3", lw=0.8, label="lambda bar")
        ax.set_xlabel("lambda")
        ax.legend(fontsize=7)
        _save(fig, path)


def plot_field(grid, values, path, component: int = 0):
    if grid.n != 2:
        return False
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        z = np.where(grid.in_domain, values[component], np.nan)
        im = ax.pcolormesh(grid.axes[0], grid.axes[1], z.T, shading="nearest")
        fig.colorbar(im, ax=ax)
        ax.set_aspect("equal")
        ax.set_title(f"u{component + 1}")
        _save(fig, path)
    return True
