"""Temporal-decomposition routing over the expert bank.

An expert's output decomposes as V_st = V_bar + V_tem: the spatial mean of
the frame features plus a temporal remainder. Each completed task keeps
per-class anchors of that remainder (and of the spatial mean, for the
spatial routing baseline). At inference every expert scores its own temporal
remainder against its own anchors by max cosine; raw scores weight a
residual fusion on top of the shared spatial mean, and the fused feature is
classified against all seen class texts by cosine. No task id is consumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .backbone import encode_video_spatial
from .errors import DegenerateVectorError, ShapeError
from .expert import encode_spatiotemporal


def spatial_mean(frame_feats: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the frame features along the frame axis."""
    f = np.asarray(frame_feats, dtype=np.float64)
    if f.ndim < 2:
        raise ShapeError(f"frame features must be (N_f, d), got {f.shape}")
    return f.mean(axis=-2)


def temporal_component(vst: np.ndarray, vbar: np.ndarray) -> np.ndarray:
    """The expert output minus the spatial mean; adding vbar back reconstructs vst."""
    vst = np.asarray(vst, dtype=np.float64)
    vbar = np.asarray(vbar, dtype=np.float64)
    if vst.shape != vbar.shape:
        raise ShapeError(f"shapes differ: {vst.shape} vs {vbar.shape}")
    return vst - vbar


def safe_cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, with zero-norm operands scoring 0 instead of erroring."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class AnchorEntry:
    class_id: int
    task_id: int
    temporal: np.ndarray
    spatial: np.ndarray


class AnchorPool:
    """class id -> anchor vectors, grouped by owning task for routing."""

    def __init__(self):
        self.entries: dict[int, AnchorEntry] = {}

    def add(self, entry: AnchorEntry) -> None:
        if entry.class_id in self.entries:
            raise ValueError(f"class {entry.class_id} already anchored")
        self.entries[entry.class_id] = entry

    def classes(self) -> list[int]:
        return sorted(self.entries)

    def for_task(self, task_id: int) -> list[AnchorEntry]:
        return [self.entries[c] for c in self.classes() if self.entries[c].task_id == task_id]

    def __len__(self) -> int:
        return len(self.entries)


def build_anchors(videos_by_class: dict[int, list], task_id: int, backbone, adapters, expert) -> list[AnchorEntry]:
    """Mean temporal component and mean spatial feature per class, no gradients.

    Uses the encoders as they stand at call time (end of the owning task).
    """
    entries = []
    with no_grad():
        for class_id in sorted(videos_by_class):
            temporals = []
            spatials = []
            for video in videos_by_class[class_id]:
                feats = encode_video_spatial(video, backbone, adapters).data
                vbar = spatial_mean(feats)
                vst, _ = encode_spatiotemporal(feats, expert)
                temporals.append(temporal_component(vst.data, vbar))
                spatials.append(vbar)
            entries.append(
                AnchorEntry(
                    class_id=class_id,
                    task_id=task_id,
                    temporal=np.mean(temporals, axis=0),
                    spatial=np.mean(spatials, axis=0),
                )
            )
    return entries


def route_scores_from_outputs(vbar: np.ndarray, vst_by_task: dict[int, np.ndarray], anchors: AnchorPool) -> dict[int, float]:
    """r_k = max over task k's class anchors of cos(vst_k - vbar, anchor).

    Raw scores: no softmax, no flooring; degenerate (zero-norm) components
    score 0.
    """
    scores: dict[int, float] = {}
    for task_id in sorted(vst_by_task):
        vtem = temporal_component(vst_by_task[task_id], vbar)
        best = 0.0
        task_anchors = anchors.for_task(task_id)
        if task_anchors:
            best = max(safe_cosine(vtem, a.temporal) for a in task_anchors)
        scores[task_id] = best
    return scores


def route(frame_feats: np.ndarray, bank, anchors: AnchorPool) -> dict[int, float]:
    """Score every banked expert on one video's frame features."""
    if len(bank) == 0:
        raise ValueError("routing needs a non-empty expert bank")
    f = np.asarray(frame_feats, dtype=np.float64)
    vbar = spatial_mean(f)
    with no_grad():
        vst_by_task = {e.task_id: encode_spatiotemporal(f, e)[0].data for e in bank}
    return route_scores_from_outputs(vbar, vst_by_task, anchors)


def route_uniform(task_ids) -> dict[int, float]:
    """Ablation: every expert weighted 1/K."""
    ids = sorted(task_ids)
    if not ids:
        raise ValueError("routing needs a non-empty expert bank")
    return {k: 1.0 / len(ids) for k in ids}


def route_spatial(vbar: np.ndarray, task_ids, anchors: AnchorPool) -> dict[int, float]:
    """Ablation: score tasks by the spatial mean against spatial class anchors."""
    scores: dict[int, float] = {}
    for task_id in sorted(task_ids):
        task_anchors = anchors.for_task(task_id)
        best = 0.0
        if task_anchors:
            best = max(safe_cosine(vbar, a.spatial) for a in task_anchors)
        scores[task_id] = best
    return scores


def fuse(vbar: np.ndarray, vst_by_task: dict[int, np.ndarray], scores: dict[int, float]) -> np.ndarray:
    """Residual fusion: vbar + sum_k r_k * vst_k."""
    if set(vst_by_task) != set(scores):
        raise ShapeError("expert outputs and scores cover different tasks")
    out = np.array(vbar, dtype=np.float64)
    for task_id in sorted(vst_by_task):
        out = out + scores[task_id] * np.asarray(vst_by_task[task_id], dtype=np.float64)
    return out


def classify(v: np.ndarray, texts: dict[int, np.ndarray]) -> int:
    """argmax over class texts of cosine similarity; ties break to the lowest id."""
    if not texts:
        raise ValueError("classify needs at least one class text")
    v = np.asarray(v, dtype=np.float64)
    if np.linalg.norm(v) == 0.0:
        raise DegenerateVectorError("cannot classify a zero feature vector")
    best_id = -1
    best = -np.inf
    for class_id in sorted(texts):
        s = safe_cosine(v, texts[class_id])
        if s > best:
            best = s
            best_id = class_id
    return best_id
