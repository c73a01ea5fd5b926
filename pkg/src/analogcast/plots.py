"""Figure rendering for the report path: skill curves and mode diagnostics
as PNG files next to the CSV output. CSV stays the data contract; figures
are a convenience view of the same numbers.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def plot_skill_curves(curves_list, path, pc_threshold: float = 0.6, title: str = "",
                      config_hash: str = "") -> None:
    """RMSE and PC against lead time, one line per method."""
    fig, (ax_rmse, ax_pc) = plt.subplots(1, 2, figsize=(10, 4))
    for i, curves in enumerate(curves_list):
        color = _COLORS[i % len(_COLORS)]
        label = curves.method
        ax_rmse.plot(curves.leads, curves.rmse, color=color, label=label, lw=1.5)
        ax_pc.plot(curves.leads, curves.pc, color=color, label=label, lw=1.5)
    ax_pc.axhline(pc_threshold, color="k", ls=":", lw=1, label=f"PC = {pc_threshold}")
    ax_rmse.set_xlabel("lead (months)")
    ax_rmse.set_ylabel("RMSE")
    ax_pc.set_xlabel("lead (months)")
    ax_pc.set_ylabel("pattern correlation")
    ax_pc.set_ylim(-0.3, 1.05)
    ax_pc.legend(fontsize=8, loc="lower left")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path, config_hash)


def plot_mode_diagnostics(basis, diagnostics, timestamps, dt, path, max_modes: int = 8,
                          config_hash: str = "") -> None:
    """Eigenfunction time series with their periodograms and classifications."""
    n_modes = min(max_modes, basis.l)
    fig, axes = plt.subplots(n_modes, 2, figsize=(10, 1.8 * n_modes), squeeze=False)
    for i in range(n_modes):
        diag = diagnostics[i]
        ax_ts, ax_pg = axes[i]
        ax_ts.plot(timestamps, basis.eigenfunctions[:, i], lw=0.7, color=_COLORS[0])
        ax_ts.set_ylabel(f"$\\phi_{{{i + 1}}}$", fontsize=9)
        if diag.power.sum() > 0:
            ax_pg.semilogy(diag.frequencies, diag.power, lw=0.7, color=_COLORS[1])
        ax_pg.set_title(
            f"{diag.classification} (T $\\approx$ {diag.dominant_period:.1f} mo)", fontsize=8
        )
        if i < n_modes - 1:
            ax_ts.set_xticklabels([])
            ax_pg.set_xticklabels([])
    axes[-1][0].set_xlabel("month")
    axes[-1][1].set_xlabel("frequency (1/month)")
    fig.tight_layout()
    _save(fig, path, config_hash)


def plot_forecast_snapshots(run, truth, path, n_snapshots: int = 3, config_hash: str = "") -> None:
    """A few sample trajectories: prediction against truth over lead time."""
    n_init = run.predictions.shape[0]
    picks = np.linspace(0, n_init - 1, n_snapshots, dtype=int)
    fig, axes = plt.subplots(1, n_snapshots, figsize=(4 * n_snapshots, 3), squeeze=False)
    for ax, j in zip(axes[0], picks):
        ax.plot(run.leads, truth[j], "k-", lw=1.2, label="truth")
        ax.plot(run.leads, run.predictions[j], "--", color=_COLORS[0], lw=1.2, label=run.method)
        ax.set_xlabel("lead (months)")
        ax.set_title(f"init month {int(run.init_timestamps[j])}", fontsize=9)
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, config_hash)


def _save(fig, path, config_hash: str) -> None:
    # PNG text chunk carries the config hash, mirroring the CSV comments
    metadata = {"Description": f"config={config_hash}"} if config_hash else None
    fig.savefig(path, dpi=150, metadata=metadata)
    plt.close(fig)
