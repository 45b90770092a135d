"""Matplotlib figure rendering for the reporting paths.

Every eval/score command can emit plot files next to its delimited output.
Figures are rendered on the Agg backend so the CLI never needs a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def render_structural_figure(structural: Mapping[str, float],
                             outdir: str | Path) -> Path:
    """Bar panel of the structural metrics of one graph."""
    labels = ["AvgDeg", "Conn", "Clust", "AvgEW"]
    values = [structural["avg_degree"], structural["connectivity"],
              structural["clustering"], structural["avg_entity_words"]]
    fig, ax = plt.subplots(figsize=(5, 3))
    bars = ax.bar(labels, values, color="#4878a8")
    ax.bar_label(bars, fmt="%.3g", padding=2, fontsize=8)
    ax.set_ylabel("value")
    ax.set_title(f"graph structure (|V|={structural['node_count']}, "
                 f"|E|={structural['edge_count']})")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return _save(fig, Path(outdir) / "structural_metrics.png")


def render_composite_figure(report: Mapping[str, float],
                            outdir: str | Path) -> Path:
    """Discount funnel: Ret.Acc -> RWA (connectivity) -> EGU (leakage)."""
    labels = ["Ret.Acc", "RWA", "EGU"]
    values = [report["ret_acc"], report["rwa"], report["egu"]]
    fig, ax = plt.subplots(figsize=(5, 3))
    bars = ax.bar(labels, values, color=["#4878a8", "#6ea0c8", "#9cc3e0"])
    ax.bar_label(bars, fmt="%.3f", padding=2, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("retrieval accuracy after structural discounts")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return _save(fig, Path(outdir) / "composite_discount.png")


def render_retention_figures(report: Mapping, outdir: str | Path) -> list[Path]:
    return [
        render_structural_figure(report["structural"], outdir),
        render_composite_figure(report, outdir),
    ]


def render_schema_figures(reports: Sequence[Mapping], outdir: str | Path) -> list[Path]:
    """Coverage per scope and best-match level distribution."""
    outdir = Path(outdir)
    paths = []

    scopes = [r["scope"] for r in reports]
    width = 0.35
    fig, ax = plt.subplots(figsize=(6, 3))
    xs = range(len(scopes))
    exact = [r["coverage_exact"] for r in reports]
    narrower = [r["coverage_narrower"] for r in reports]
    ax.bar(xs, exact, width, label="Exact", color="#4878a8")
    ax.bar(xs, narrower, width, bottom=exact, label="Narrower", color="#9cc3e0")
    ax.set_xticks(list(xs), scopes)
    ax.set_ylabel("weighted coverage")
    ax.set_ylim(0, 1.05)
    ax.set_title("compatible coverage by scope (exact + narrower)")
    ax.legend(frameon=False, fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    paths.append(_save(fig, outdir / "coverage_by_scope.png"))

    last = reports[-1]
    fig, ax = plt.subplots(figsize=(6, 3))
    kinds = ("concept", "relation")
    levels = ("L1", "L2", "L3")
    for offset, kind in enumerate(kinds):
        dist = last["level_distribution"].get(kind, {})
        values = [dist.get(level, 0.0) for level in levels]
        ax.bar([x + (offset - 0.5) * 0.38 for x in range(len(levels))], values,
               0.36, label=kind,
               color="#4878a8" if kind == "concept" else "#d88a4a")
    ax.set_xticks(range(len(levels)), ("finest", "middle", "coarsest"))
    ax.set_ylabel("weighted share of best matches")
    ax.set_title(f"alignment granularity ({last['scope']})")
    ax.legend(frameon=False, fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    paths.append(_save(fig, outdir / "level_distribution.png"))
    return paths
