"""Matplotlib figures written next to the CSV outputs (Agg backend, files only)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes independent of the wall clock
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curves(csv_path, png_path, title: str = "") -> Path:
    """One line per loss column of a ``step,...`` curve CSV."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, name in enumerate(header[1:], start=1):
        if np.any(body[:, j] != 0):
            ax.plot(body[:, 0], body[:, j], label=name, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    if ax.lines:
        ax.legend(fontsize=8)
    return _save(fig, png_path)


def embedding_scatter(task_ids, proj: np.ndarray, png_path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ids = np.asarray(task_ids)
    for tid in np.unique(ids):
        pts = proj[ids == tid]
        ax.scatter(pts[:, 0], pts[:, 1], s=10, label=f"task {tid}")
    ax.set_xlabel("pc0")
    ax.set_ylabel("pc1")
    ax.set_title("context embeddings (PCA)")
    if len(np.unique(ids)) <= 12:
        ax.legend(fontsize=7)
    return _save(fig, png_path)


def adaptation_bars(results, png_path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [str(r.task.task_id) for r in results]
    scores = [r.normalized_score for r in results]
    ax.bar(np.arange(len(labels)), scores, color="tab:blue", tick_label=labels)
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("new task id")
    ax.set_ylabel("normalized score")
    ax.set_title("adapted policy vs expert (1) and zero action (0)")
    return _save(fig, png_path)
