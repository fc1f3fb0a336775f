"""
SVG line charts of sweep tables (matplotlib, headless).
"""

import io
import logging
from typing import Dict, List, Optional, Sequence

import matplotlib

# Set matplotlib backend for headless operation
matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

from latentflow.kinds import SWEEP_AXIS_LABELS, SweepKind

logger = logging.getLogger(__name__)

# Deterministic element ids in the SVG output
matplotlib.rcParams["svg.hashsalt"] = "latentflow"

THEMES = {
    "default": {
        "colors": ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"],
        "grid": True,
        "style": "default"
    },
    "minimal": {
        "colors": ["#333333", "#666666", "#999999", "#bbbbbb", "#dddddd", "#000000"],
        "grid": False,
        "style": "classic"
    }
}

# x column, grouping columns and plotted metrics per sweep
SWEEP_LAYOUT: Dict[SweepKind, Dict[str, List[str]]] = {
    SweepKind.T_EDIT: {"x": ["t_edit"], "group": ["method"], "metrics": ["frechet", "lpaps", "adherence"]},
    SweepKind.NFE: {"x": ["nfe"], "group": ["method"], "metrics": ["frechet", "lpaps", "adherence"]},
    SweepKind.LAMBDA_KL: {
        "x": ["lambda_kl"], "group": ["pred_space", "cond_mode"], "metrics": ["frechet", "lpaps", "adherence"]
    },
    SweepKind.CFG: {"x": ["scale"], "group": [], "metrics": ["frechet", "adherence"]},
    SweepKind.EFFICIENCY: {"x": ["nfe"], "group": ["method"], "metrics": ["frechet", "adherence", "straightness"]},
    SweepKind.TRAINING: {"x": ["variant"], "group": [], "metrics": ["val_mse", "frechet", "straightness"]},
}


def line_chart_svg(
    table: pd.DataFrame,
    x: str,
    metrics: Sequence[str],
    group: Sequence[str] = (),
    title: str = "",
    xlabel: Optional[str] = None,
    theme: str = "default"
) -> bytes:
    """
    Render one panel per metric with one line per group.

    Args:
        table: Sweep rows
        x: Column on the horizontal axis
        metrics: Columns plotted, one panel each
        group: Columns whose combinations become separate lines
        title: Figure title
        xlabel: Axis label (defaults to the column name)
        theme: Key into THEMES

    Returns:
        SVG document bytes
    """
    theme_config = THEMES.get(theme, THEMES["default"])
    present = [m for m in metrics if m in table.columns and table[m].notna().any()]
    with plt.style.context(theme_config["style"]):
        fig, axes = plt.subplots(1, max(1, len(present)), figsize=(5 * max(1, len(present)), 4), squeeze=False)
        groups = table.groupby(list(group), sort=False) if group else [("all", table)]
        for ax, metric in zip(axes[0], present):
            for i, (key, rows) in enumerate(groups):
                label = "/".join(str(k) for k in key) if isinstance(key, tuple) else str(key)
                ax.plot(
                    rows[x], rows[metric],
                    color=theme_config["colors"][i % len(theme_config["colors"])],
                    marker="o", linewidth=2, label=label
                )
            ax.set_xlabel(xlabel or x)
            ax.set_ylabel(metric)
            ax.grid(theme_config["grid"], alpha=0.3)
            if group:
                ax.legend(fontsize=8)
        if title:
            fig.suptitle(title, fontsize=14, fontweight="bold")
        fig.tight_layout()
        buffer = io.BytesIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buffer.getvalue()


def sweep_chart_svg(table: pd.DataFrame, sweep: SweepKind, theme: str = "default") -> bytes:
    """Chart of a sweep table using the sweep's standard layout."""
    sweep = SweepKind(sweep)
    layout = SWEEP_LAYOUT[sweep]
    logger.debug(f"Rendering {sweep.value} sweep chart ({len(table)} rows)")
    return line_chart_svg(
        table,
        x=layout["x"][0],
        metrics=layout["metrics"],
        group=layout["group"],
        title=f"{sweep.value} sweep",
        xlabel=SWEEP_AXIS_LABELS[sweep],
        theme=theme,
    )
