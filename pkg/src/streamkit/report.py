"""Report rendering: matplotlib figures to files, CSV/JSONL beside them.

Figures never open a window; the Agg backend is forced before pyplot loads so
the CLI works headless."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .latency import ComparisonTable, LatencyReport  # noqa: E402
from .masks import MaskMatrix  # noqa: E402
from .pipeline import SimilarityMap  # noqa: E402

_LANE_COLORS = {
    "arrival": "#7aa6c2",
    "reasoning": "#e0a458",
    "tail": "#c76b6b",
    "answer": "#6bba75",
    "wait": "#cccccc",
}


def save_mask_figure(mask: MaskMatrix, path: str | Path, title: str = "attention mask") -> Path:
    path = Path(path)
    grid = (mask.data == 0.0).astype(float)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(grid, cmap="Greys_r", interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("key position")
    ax.set_ylabel("query position")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_similarity_heatmap(simmap: SimilarityMap, path: str | Path,
                            title: str = "input vs reasoning similarity") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(1.2 + 0.5 * max(len(simmap.col_labels), 2),
                                    1.2 + 0.5 * max(len(simmap.row_labels), 2)))
    im = ax.imshow(simmap.matrix, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(simmap.col_labels)), simmap.col_labels, rotation=45, ha="right")
    ax.set_yticks(range(len(simmap.row_labels)), simmap.row_labels)
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_latency_timeline(report: LatencyReport, path: str | Path) -> Path:
    """One horizontal lane per activity kind, plus markers for natural input
    end and first answer emission."""
    path = Path(path)
    lanes = ["arrival", "reasoning", "tail", "answer", "wait"]
    fig, ax = plt.subplots(figsize=(9, 2.8))
    for seg in report.timeline:
        y = lanes.index(seg.lane)
        ax.barh(y, seg.t1 - seg.t0, left=seg.t0, height=0.6,
                color=_LANE_COLORS[seg.lane], edgecolor="white", linewidth=0.5)
    ax.axvline(report.input_end_natural_s, color="black", linestyle=":", linewidth=1,
               label="input end (natural)")
    ax.axvline(report.first_answer_at_s, color="red", linestyle="--", linewidth=1,
               label="first answer token")
    ax.set_yticks(range(len(lanes)), lanes)
    ax.invert_yaxis()
    ax.set_xlabel("seconds")
    ax.set_title(f"{report.paradigm.value} / {report.depth.value}: "
                 f"delay {report.first_answer_delay_s:.3f} s")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_comparison_chart(table: ComparisonTable, path: str | Path) -> Path:
    path = Path(path)
    labels = [f"{r.paradigm.value}\n{r.depth.value}" for r in table.rows]
    delays = [r.delay_s for r in table.rows]
    ttfts = [r.ttft_tokens for r in table.rows]
    x = np.arange(len(labels))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 3.5))
    ax1.bar(x, delays, color="#e0a458")
    ax1.set_xticks(x, labels, fontsize=8)
    ax1.set_ylabel("first-answer delay (s)")
    ax2.bar(x, ttfts, color="#7aa6c2")
    ax2.set_xticks(x, labels, fontsize=8)
    ax2.set_ylabel("ttft (input tokens)")
    fig.suptitle(table.label)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_csv(rows: Sequence[Sequence[object]], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(rows)
    return path


def write_jsonl(records: Iterable[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    return path


def write_json(obj: dict, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")
    return path
