"""Matplotlib figures written next to an experiment's CSV."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .flow import chow_knopf_bounds, sharp_lower_bound  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def experiment_figures(trajectory, names, rows, params, out_dir, prefix, bounds=None):
    """Eigenvalue, quantity and curvature plots; returns ``{figure_name: path}``."""
    out_dir = Path(out_dir)
    t = trajectory.times
    lam = trajectory.lambdas
    paths = {}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(t, lam, "o-", ms=3, lw=1.2, color="C0")
        ax.set_xlabel("t")
        ax.set_ylabel(r"$\lambda_{1,p}$")
        ax.set_title(f"first p-eigenvalue, p = {params.p:g}")
        paths["fig_lambda"] = _save(fig, out_dir / f"{prefix}_lambda.png")

        if names:
            fig, axes = plt.subplots(1, len(names), squeeze=False, figsize=(3.2 * len(names), 3.2))
            base = len(rows[0]) - len(names)
            for k, name in enumerate(names):
                q = np.array([row[base + k] for row in rows], dtype=np.float64)
                ax = axes[0, k]
                ax.plot(t, q, "o-", ms=3, lw=1.2, color=f"C{k + 1}")
                ax.set_xlabel("t")
                ax.set_title(name)
            paths["fig_quantities"] = _save(fig, out_dir / f"{prefix}_quantities.png")

        fig, ax = plt.subplots()
        Rmin = np.array([s.R_min for s in trajectory.samples])
        Rmax = np.array([s.R_max for s in trajectory.samples])
        ax.fill_between(t, Rmin, Rmax, color="C0", alpha=0.25, label="R range")
        ax.plot(t, [s.r for s in trajectory.samples], color="C0", lw=1.0, label="r")
        if bounds is not None:
            r = 0.0 if params.chi == 0 else params.r
            lo, hi = chow_knopf_bounds(t, r, params.C)
            ax.plot(t, lo, "--", color="C3", lw=1.0, label="exponential bounds")
            ax.plot(t, hi, "--", color="C3", lw=1.0)
            if r < 0 and params.rho0 < 0:
                ax.plot(t, sharp_lower_bound(t, r, params.rho0), ":", color="C2", lw=1.2,
                        label="sharp lower bound")
        ax.set_xlabel("t")
        ax.set_ylabel("scalar curvature")
        ax.legend()
        paths["fig_curvature"] = _save(fig, out_dir / f"{prefix}_curvature.png")
    return paths
