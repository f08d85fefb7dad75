"""Masked contrastive alignment losses and the total training objective.

For a batch of N videos with features V_i and their class texts T_j, the
similarity matrix holds cosine similarities and the mask marks same-class
pairs. The video-to-text loss averages over rows:

    -(1/N) sum_i log( sum_j M_ij exp(S_ij / tau) / (sum_j exp(S_ij / tau) + eps) )

The text-to-video loss is the column analogue, computed by delegating to the
row form on transposed inputs so the duality is exact by construction. With
tau = 1 these are the literal unscaled forms; the default tau sharpens
similarities as in standard vision-language training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, matmul
from .errors import MaskError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    epsilon: float = 1e-8
    fssd_weight: float = 1e4

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.fssd_weight < 0:
            raise ValueError(f"fssd_weight must be non-negative, got {self.fssd_weight}")


def _normalize_rows(x: Tensor) -> Tensor:
    norms = (x * x).sum(axis=-1, keepdims=True).sqrt()
    if np.any(norms.data == 0.0):
        raise ShapeError("cannot normalize a zero feature row")
    return x / norms


def similarity_matrix(video_feats, text_feats) -> Tensor:
    """S_ij = cos(V_i, T_j), differentiable through the video features."""
    v = as_tensor(video_feats)
    t = as_tensor(text_feats)
    if v.ndim != 2 or t.ndim != 2 or v.shape[1] != t.shape[1]:
        raise ShapeError(f"incompatible feature shapes {v.shape} and {t.shape}")
    return matmul(_normalize_rows(v), _normalize_rows(t).swap_last())


def label_mask(video_labels, text_labels) -> np.ndarray:
    """M_ij = 1 where the i-th video's class equals the j-th text's class."""
    vl = np.asarray(video_labels).reshape(-1, 1)
    tl = np.asarray(text_labels).reshape(1, -1)
    return (vl == tl).astype(np.float64)


def _check_pair(sim, mask) -> tuple[Tensor, np.ndarray]:
    s = as_tensor(sim)
    m = np.asarray(mask, dtype=np.float64)
    if s.ndim != 2 or s.shape != m.shape:
        raise ShapeError(f"similarity {s.shape} and mask {m.shape} must be equal 2-D shapes")
    return s, m


def v2t_loss(sim, mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Row-wise masked InfoNCE; every row needs at least one positive."""
    s, m = _check_pair(sim, mask)
    bad = np.where(m.sum(axis=1) == 0.0)[0]
    if bad.size:
        raise MaskError(f"mask row {bad[0]} has no positive entries")
    e = (s * (1.0 / cfg.temperature)).exp()
    num = (e * m).sum(axis=1)
    den = e.sum(axis=1) + cfg.epsilon
    return -((num / den).log().mean())


def t2v_loss(sim, mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Column-wise analogue, exact transpose dual of v2t_loss."""
    s, m = _check_pair(sim, mask)
    bad = np.where(m.sum(axis=0) == 0.0)[0]
    if bad.size:
        raise MaskError(f"mask column {bad[0]} has no positive entries")
    return v2t_loss(s.swap_last(), m.T, cfg)


def symmetric_contrastive(sim, mask, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean of the two directional losses."""
    return (v2t_loss(sim, mask, cfg) + t2v_loss(sim, mask, cfg)) * 0.5


def total_loss(l_st, l_s, l_fssd=None, cfg: LossConfig = LossConfig()) -> Tensor:
    """Spatiotemporal term + spatial term + weighted drift term (absent on task 1)."""
    total = as_tensor(l_st) + as_tensor(l_s)
    if l_fssd is not None:
        total = total + as_tensor(l_fssd) * cfg.fssd_weight
    return total
