"""Figure rendering for report output. Headless-safe; files only.

Every PNG is written with ``metadata={"Date": None}`` so reruns are
byte-identical.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .divergence import DivergenceGrid
from .metrics import BreakpointComparison, NounCorrelationSummary, TrajectorySeries

_SAVE_KWARGS = {"dpi": 150, "metadata": {"Date": None}}


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def save_series_figure(
    series: Sequence[TrajectorySeries],
    path: str | Path,
    title: str = "",
    ylabel: str = "divergence (bits)",
    logx: bool = False,
) -> Path:
    """Plot one curve per series, with a shaded band where dispersions exist."""
    if not series:
        raise ValueError("no series to plot")
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for s in series:
        steps = np.asarray(s.steps, dtype=np.float64)
        values = np.asarray(s.values, dtype=np.float64)
        (line,) = ax.plot(steps, values, label=s.metric_name, linewidth=1.6)
        if s.dispersions is not None:
            disp = np.asarray(s.dispersions, dtype=np.float64)
            ax.fill_between(steps, values - disp, values + disp, alpha=0.2, color=line.get_color())
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _finish(fig, path)


def save_grid_heatmap(grid: DivergenceGrid, path: str | Path, title: str = "") -> Path:
    """Render a pairwise divergence grid, labels along both axes."""
    keys = [lab.key for lab in grid.labels]
    fig, ax = plt.subplots(figsize=(0.35 * len(keys) + 2.5, 0.35 * len(keys) + 2.0))
    image = ax.imshow(grid.values, cmap="viridis", vmin=0.0)
    ax.set_xticks(range(len(keys)), keys, rotation=90, fontsize=6)
    ax.set_yticks(range(len(keys)), keys, fontsize=6)
    fig.colorbar(image, ax=ax, label="divergence (bits)")
    ax.set_title(title or f"step {grid.step}")
    fig.tight_layout()
    return _finish(fig, path)


def save_noun_summary_figure(
    summaries: Sequence[NounCorrelationSummary], path: str | Path
) -> Path:
    """Per-noun bars of mean within- vs between-class trajectory correlation."""
    if not summaries:
        raise ValueError("no noun summaries to plot")
    nouns = [s.noun for s in summaries]
    x = np.arange(len(nouns), dtype=np.float64)
    width = 0.38
    fig, ax = plt.subplots(figsize=(1.3 * len(nouns) + 2.5, 4.0))
    for offset, which, label in ((-width / 2, "within", "within class"), (width / 2, "between", "between classes")):
        means = [getattr(s, f"{which}_mean") for s in summaries]
        cis = [getattr(s, f"{which}_ci") for s in summaries]
        heights = [0.0 if m is None else m for m in means]
        errors = [0.0 if c is None else (c[1] - c[0]) / 2.0 for c in cis]
        ax.bar(x + offset, heights, width, yerr=errors, capsize=3, label=label)
    ax.set_xticks(x, nouns)
    ax.set_ylabel("mean rank correlation")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_breakpoint_figure(comparison: BreakpointComparison, path: str | Path) -> Path:
    """Strip plot of per-verb onset steps for the two classes, medians marked."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    rng = np.random.default_rng(0)  # fixed jitter so output stays deterministic
    for pos, (class_id, median) in enumerate(
        ((comparison.class_a, comparison.median_a), (comparison.class_b, comparison.median_b))
    ):
        steps = [
            r.breakpoint_step
            for r in comparison.breakpoints.values()
            if comparison.verb_classes[r.verb_id] == class_id
        ]
        jitter = rng.uniform(-0.12, 0.12, size=len(steps))
        ax.scatter(np.full(len(steps), pos) + jitter, steps, alpha=0.75, s=24)
        if median is not None:
            ax.hlines(median, pos - 0.25, pos + 0.25, color="black", linewidth=2)
    ax.set_xticks([0, 1], [comparison.class_a, comparison.class_b])
    ax.set_ylabel("onset step")
    note = f"t={comparison.t_statistic:.3g}, p={comparison.p_value:.3g}" if comparison.p_value is not None else comparison.note or ""
    ax.set_title(note)
    fig.tight_layout()
    return _finish(fig, path)
