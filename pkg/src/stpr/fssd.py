"""Channel-sensitivity statistics and importance-weighted feature distillation.

Per class, channels of the mean-pooled spatial feature are modeled as
independent Gaussians. The Fisher information of a Gaussian mean is 1/var,
the class-text contribution of channel j is text_j * mean_j / lam, and their
product (floored at zero) is the channel importance. Importances accumulated
over all seen classes and rescaled to channel-mean 1 weight the squared
drift between the previous and current model's features on current-task
data. Nothing old is replayed; only statistics persist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import InsufficientDataError, ShapeError

VARIANCE_FLOOR = 1e-6


@dataclass
class ChannelStats:
    """Per-channel mean and (floored, unbiased) variance over one class's samples."""

    mean: np.ndarray
    var: np.ndarray
    n_samples: int


def compute_channel_stats(features: np.ndarray) -> ChannelStats:
    """Stats over rows of an (n_samples, d) feature matrix; needs n >= 2."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError(f"features must be 2-D (samples x channels), got {f.shape}")
    if f.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 samples for a variance, got {f.shape[0]}")
    mean = f.mean(axis=0)
    var = np.maximum(f.var(axis=0, ddof=1), VARIANCE_FLOOR)
    return ChannelStats(mean=mean, var=var, n_samples=f.shape[0])


def fisher_sensitivity(stats: ChannelStats) -> np.ndarray:
    """Fisher information of each channel's Gaussian mean: 1 / var."""
    return 1.0 / stats.var


def classification_contribution(stats: ChannelStats, text: np.ndarray, lam: float = 1.0) -> np.ndarray:
    """Per-channel contribution of the class text direction: text * mean / lam."""
    text = np.asarray(text, dtype=np.float64)
    if text.shape != stats.mean.shape:
        raise ShapeError(f"text width {text.shape} does not match stats width {stats.mean.shape}")
    return text * stats.mean / lam


def channel_importance(stats: ChannelStats, text: np.ndarray, lam: float = 1.0) -> np.ndarray:
    """Sensitivity times contribution, negatives floored to zero."""
    raw = fisher_sensitivity(stats) * classification_contribution(stats, text, lam) * lam
    return np.maximum(raw, 0.0)


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Row-normalize; used on per-sample features before importance scoring."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ShapeError("cannot normalize a zero feature row")
    return x / norms


class ImportanceTable:
    """Per-class importance rows plus their running accumulation.

    `accumulated` is the mean over all stored class rows rescaled so its
    channel-mean is 1; if every channel is zero after flooring it falls back
    to the uniform all-ones vector.
    """

    def __init__(self, width: int):
        self.width = int(width)
        self.rows: dict[int, np.ndarray] = {}
        self.accumulated: np.ndarray | None = None

    def classes(self) -> list[int]:
        return sorted(self.rows)


def accumulate_importance(table: ImportanceTable, new_rows: dict[int, np.ndarray]) -> ImportanceTable:
    """Add class rows, then refresh the mean-1 accumulated vector."""
    for class_id, row in new_rows.items():
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (table.width,):
            raise ShapeError(f"importance row for class {class_id} has shape {row.shape}, want ({table.width},)")
        if class_id in table.rows:
            raise ValueError(f"class {class_id} already has an importance row")
        table.rows[class_id] = row
    stack = np.stack([table.rows[c] for c in table.classes()])
    mean_row = stack.mean(axis=0)
    scale = mean_row.mean()
    if scale <= 0.0:
        table.accumulated = np.ones(table.width)
    else:
        table.accumulated = mean_row / scale
    return table


def fssd_loss(prev_feats, cur_feats, weights) -> Tensor:
    """Weighted squared feature drift:

        (1 / (n * d)) * sum_i sum_j w_j (prev[i, j] - cur[i, j])^2

    prev is treated as a constant; gradients flow only into cur's graph.
    """
    prev = prev_feats.data if isinstance(prev_feats, Tensor) else np.asarray(prev_feats, dtype=np.float64)
    cur = as_tensor(cur_feats)
    if prev.shape != cur.shape:
        raise ShapeError(f"feature shapes differ: {prev.shape} vs {cur.shape}")
    if prev.ndim != 2:
        raise ShapeError(f"features must be 2-D (samples x channels), got {prev.shape}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (prev.shape[1],):
        raise ShapeError(f"weights must be ({prev.shape[1]},), got {w.shape}")
    n, d = prev.shape
    diff = Tensor(prev) - cur
    return (diff * diff * w).sum() * (1.0 / (n * d))


def save_importance(path, table: ImportanceTable) -> None:
    doc = {
        "width": table.width,
        "per_class": {str(c): table.rows[c].tolist() for c in table.classes()},
        "accumulated": None if table.accumulated is None else table.accumulated.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_importance(path) -> ImportanceTable:
    with open(path) as fh:
        doc = json.load(fh)
    table = ImportanceTable(int(doc["width"]))
    for key, row in doc["per_class"].items():
        table.rows[int(key)] = np.asarray(row, dtype=np.float64)
    if doc["accumulated"] is not None:
        table.accumulated = np.asarray(doc["accumulated"], dtype=np.float64)
    return table
