"""
SVG line plots rendered from the analysis CSV files.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import pandas as pd

from harness.persistence import read_csv

logger = logging.getLogger(__name__)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams.update({"font.family": "DejaVu Sans", "axes.unicode_minus": False,
                                "svg.hashsalt": "phi4-kz"})
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path, plt) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_g2k0_series(series: pd.DataFrame, path) -> Path:
    """G2(k=0, t) per tauQ; columns tauQ, time, g2k0"""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for tauQ, grp in series.groupby("tauQ"):
        ax.plot(grp["time"], grp["g2k0"], label=f"tauQ={tauQ:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("G2(k=0, t)")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, Path(path), plt)


def _group_label(columns: Sequence[str], key) -> str:
    keys = key if isinstance(key, tuple) else (key,)
    return ", ".join(f"{c}={k:g}" for c, k in zip(columns, keys))


def plot_power_law(frame: pd.DataFrame, x: str, y: str, path,
                   group: Optional[Union[str, Sequence[str]]] = None, ylabel: str = None) -> Path:
    """log-log y against x, one series per value of the group column(s)"""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4), constrained_layout=True)
    columns = [group] if isinstance(group, str) else list(group or [])
    groups = frame.groupby(columns if len(columns) > 1 else columns[0]) if columns else [(None, frame)]
    for key, grp in groups:
        grp = grp.sort_values(x)
        ax.loglog(grp[x], grp[y].abs(), marker="o", label=None if key is None else _group_label(columns, key))
    ax.set_xlabel(x)
    ax.set_ylabel(ylabel or y)
    ax.grid(True, which="both", alpha=0.3)
    if group:
        ax.legend(loc="best", fontsize=8)
    return _save(fig, Path(path), plt)


def plot_collapse(collapse: pd.DataFrame, path) -> Path:
    """G_uni and G_uni/G_kink against k/n_est, one line per tauQ"""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), constrained_layout=True)
    for tauQ, grp in collapse.groupby("tauQ"):
        axes[0].plot(grp["y"], grp["g_uni"], label=f"tauQ={tauQ:g}")
        axes[1].plot(grp["y"], grp["g_uni_kink"], label=f"tauQ={tauQ:g}")
    axes[0].set_xlim(0, 10)
    axes[1].set_xlim(0, 15)
    for ax, title in zip(axes, ("G_uni", "G_uni / G_kink")):
        ax.set_title(title)
        ax.set_xlabel("k / n_est")
        ax.grid(True, alpha=0.3)
    axes[-1].legend(loc="best", fontsize=8)
    return _save(fig, Path(path), plt)


def plot_ansatz(averaged: pd.DataFrame, path, title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    ax.plot(averaged["k"], averaged["G2k_bar"], label="time-averaged")
    ax.plot(averaged["k"], averaged["G2k_vacuum"], linestyle=":", label="vacuum")
    if "G2k_fit" in averaged:
        ax.plot(averaged["k"], averaged["G2k_fit"], linestyle="--", label="defect ansatz")
    ax.set_xlabel("k")
    ax.set_ylabel("G2(k)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, Path(path), plt)


def render_analysis(analysis_dir) -> List[Path]:
    """Render every figure whose source CSV exists in analysis_dir"""
    analysis_dir = Path(analysis_dir)
    written = []
    sources = {
        "g2k0_series.csv": lambda df: plot_g2k0_series(df, analysis_dir / "g2k0_series.svg"),
        "epsilon_hat.csv": lambda df: plot_power_law(df, "tauQ", "epsilon_hat",
                                                     analysis_dir / "epsilon_hat.svg", ylabel="|eps_hat|"),
        "defect_density.csv": lambda df: plot_power_law(df, "tauQ", "delta_g2k0",
                                                        analysis_dir / "defect_signal.svg",
                                                        group=["mu0sq_final", "chi"],
                                                        ylabel="G2_bar(0) - G2_vac(0)"),
        "collapse.csv": lambda df: plot_collapse(df, analysis_dir / "collapse.svg"),
    }
    for name, render in sources.items():
        source = analysis_dir / name
        if not source.exists():
            continue
        frame, _ = read_csv(source)
        if frame.empty:
            continue
        try:
            written.append(render(frame))
        except (ValueError, KeyError) as e:
            logger.warning(f"Skipping plot for {name}: {e}")
    for source in sorted(analysis_dir.glob("averaged_*.csv")):
        frame, _ = read_csv(source)
        written.append(plot_ansatz(frame, source.with_suffix(".svg"), title=source.stem))
    logger.info(f"Rendered {len(written)} figures in {analysis_dir}")
    return written


__all__ = [
    "plot_g2k0_series",
    "plot_power_law",
    "plot_collapse",
    "plot_ansatz",
    "render_analysis",
]
