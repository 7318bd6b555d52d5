"""PNG figures written next to the CSV outputs of a run."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

if TYPE_CHECKING:
    from .ensemble import EnsembleResult

_LABELS = {"x": r"$\langle X_i \rangle$", "z": r"$\langle Z_i \rangle$"}


def plot_observables(result: EnsembleResult, path: Path, observable: str = "x", title: str = "") -> Path:
    """One curve per measured site with a shaded one-standard-error band."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0), constrained_layout=True)
    mean = result.series(observable)
    err = result.series_stderr(observable)
    cmap = plt.get_cmap("viridis", max(len(result.sites), 2))
    for j, site in enumerate(result.sites):
        color = cmap(j)
        ax.plot(result.times, mean[:, j], color=color, lw=1.4, label=f"site {site}")
        if np.isfinite(err[:, j]).all() and err[:, j].any():
            ax.fill_between(result.times, mean[:, j] - err[:, j], mean[:, j] + err[:, j], color=color, alpha=0.2, lw=0)
    ax.set_xlabel("time")
    ax.set_ylabel(_LABELS.get(observable, observable))
    if title:
        ax.set_title(title)
    ax.legend(ncol=2 if len(result.sites) > 4 else 1, fontsize="small", frameon=False)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_martingale(result: EnsembleResult, path: Path) -> Path:
    """Mean martingale with its standard error; the reference line is 1."""
    fig, ax = plt.subplots(figsize=(6.4, 3.2), constrained_layout=True)
    n = max(result.n_traj, 1)
    se = np.sqrt(np.maximum(result.mu_var, 0.0) / n)
    ax.axhline(1.0, color="0.6", lw=0.8, ls="--")
    ax.plot(result.times, result.mu_mean, color="C3", lw=1.4)
    ax.fill_between(result.times, result.mu_mean - se, result.mu_mean + se, color="C3", alpha=0.2, lw=0)
    ax.set_xlabel("time")
    ax.set_ylabel(r"mean $\mu_t$")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_jumps(result: EnsembleResult, path: Path) -> Path:
    """Jump fraction per step and channel kind."""
    fig, ax = plt.subplots(figsize=(6.4, 3.2), constrained_layout=True)
    n = max(result.n_traj, 1)
    for k, kind in enumerate(result.channel_kinds):
        ax.plot(result.jump_times, result.jump_counts[:, k] / n, lw=0.9, label=kind)
    ax.set_xlabel("time")
    ax.set_ylabel(r"$N_{\rm jump}/N_{\rm traj}$")
    if result.channel_kinds:
        ax.legend(fontsize="small", frameon=False)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_all(result: EnsembleResult, out_dir: Path, title: str = "") -> list[Path]:
    paths = [plot_observables(result, out_dir / f"observable_{o}.png", o, title) for o in result.observables]
    paths.append(plot_martingale(result, out_dir / "martingale.png"))
    paths.append(plot_jumps(result, out_dir / "jumps.png"))
    return paths
