"""Delimited outputs and matplotlib renderings for the inspection/report paths."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import DisambiguationReport


def write_metrics_jsonl(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def write_heatmap_tsv(matrix: np.ndarray, labels: Sequence[str], path) -> None:
    """Square similarity matrix with a header row of sentence labels."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join([""] + list(labels)) + "\n")
        for label, row in zip(labels, matrix):
            f.write("\t".join([label] + [f"{v:.6f}" for v in row]) + "\n")


def write_vectors_tsv(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        dim = len(records[0]["vector"]) if records else 0
        header = ["sentence_id", "synset_id"] + [f"v{k}" for k in range(dim)]
        f.write("\t".join(header) + "\n")
        for rec in records:
            row = [str(rec["sentence_id"]), rec["synset_id"] or ""]
            row += [f"{v:.6f}" for v in rec["vector"]]
            f.write("\t".join(row) + "\n")


def write_projection_tsv(points: np.ndarray, records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("sentence_id\tsynset_id\tx\ty\n")
        for rec, (x, y) in zip(records, points):
            f.write(f"{rec['sentence_id']}\t{rec['synset_id'] or ''}\t{x:.6f}\t{y:.6f}\n")


def render_heatmap(matrix: np.ndarray, labels: Sequence[str], path,
                   title: str = "homograph state similarity") -> None:
    fig, ax = plt.subplots(figsize=(1.2 + 0.5 * len(labels), 1.0 + 0.5 * len(labels)))
    im = ax.imshow(matrix, vmin=-1.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_projection(points: np.ndarray, records: Sequence[dict], path,
                      title: str = "homograph states (2-D projection)") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    synsets = sorted({r["synset_id"] or "unknown" for r in records})
    cmap = plt.get_cmap("tab10")
    for k, sid in enumerate(synsets):
        idx = [i for i, r in enumerate(records) if (r["synset_id"] or "unknown") == sid]
        ax.scatter(points[idx, 0], points[idx, 1], s=18, label=sid,
                   color=cmap(k % 10), alpha=0.8)
    ax.legend(fontsize=7)
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_curves(records: Sequence[dict], path) -> None:
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(steps, [r["heldout_loss"] for r in records], marker="o",
            label="held-out loss")
    train = [(s, r["train_loss"]) for s, r in zip(steps, records)
             if r["train_loss"] is not None]
    if train:
        ax.plot([t[0] for t in train], [t[1] for t in train], marker=".",
                label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(steps, [r["heldout_bleu"] for r in records], color="tab:green",
             marker="s", label="held-out BLEU")
    ax2.set_ylabel("BLEU")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sense_accuracy(report: DisambiguationReport, path) -> None:
    lemmas = sorted(report.per_homograph)
    fig, ax = plt.subplots(figsize=(1.5 + 0.6 * max(len(lemmas), 4), 3.5))
    bottoms = np.zeros(len(lemmas))
    for key, color in (("correct", "tab:green"), ("wrong_sense", "tab:red"),
                       ("missed", "tab:gray")):
        vals = np.array([getattr(report.per_homograph[l], key) for l in lemmas],
                        dtype=float)
        ax.bar(lemmas, vals, bottom=bottoms, label=key, color=color)
        bottoms += vals
    ax.set_ylabel("occurrences")
    ax.set_title(
        f"P={report.precision:.3f} R={report.recall:.3f} F1={report.f1:.3f}",
        fontsize=9,
    )
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
