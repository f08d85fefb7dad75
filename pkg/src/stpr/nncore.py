"""Numeric kernel surface: model configuration, core ops, SGD, grad checking.

All state lives in float64. Trainable tensors (autodiff.Tensor with
trainable=True) are the parameters: they expose value, gradient, and the
trainable flag, gradients accumulate until explicitly zeroed, and frozen
tensors are never written by the optimizer or by backward passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff
from .autodiff import Tensor, as_tensor, no_grad
from .errors import ConfigError, DegenerateVectorError, NumericError, ShapeError
from .rng import RngStream


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions of the full pipeline.

    d: backbone token width; d_h: adapter bottleneck width; d_vt: shared
    video/text feature width; n_patches: patch tokens per frame (the frame
    [CLS] row is extra); n_frames: frames per video.
    """

    d: int = 32
    d_h: int = 8
    d_vt: int = 16
    n_patches: int = 4
    n_frames: int = 8
    backbone_layers: int = 2
    backbone_heads: int = 2
    expert_layers: int = 3
    expert_heads: int = 2

    def __post_init__(self):
        problems = []
        for field in (
            "d",
            "d_h",
            "d_vt",
            "n_patches",
            "n_frames",
            "backbone_layers",
            "backbone_heads",
            "expert_layers",
            "expert_heads",
        ):
            v = getattr(self, field)
            if not isinstance(v, int) or v < 1:
                problems.append(f"model.{field}: must be a positive integer, got {v!r}")
        if not problems:
            if self.d_h >= self.d:
                problems.append(f"model.d_h: bottleneck ({self.d_h}) must be smaller than d ({self.d})")
            if self.d % self.backbone_heads != 0:
                problems.append(f"model.backbone_heads: d ({self.d}) not divisible by {self.backbone_heads}")
            if self.d_vt % self.expert_heads != 0:
                problems.append(f"model.expert_heads: d_vt ({self.d_vt}) not divisible by {self.expert_heads}")
        if problems:
            raise ConfigError(problems)

    @property
    def tokens_per_frame(self) -> int:
        return self.n_patches + 1


def matmul(a, b) -> Tensor:
    """Matrix product with shape diagnostics; see autodiff.matmul."""
    return autodiff.matmul(a, b)


def softmax_rows(m) -> Tensor:
    """Row-wise softmax (last axis). Rows sum to 1; stable under constant shifts."""
    return autodiff.softmax(m)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors. Raises on a zero-norm operand."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ShapeError(f"cosine of different lengths: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine of a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """In-place p <- p - lr * grad for trainable params; frozen ones untouched."""
    for p in params:
        if p.trainable and p.grad is not None:
            p.data -= lr * p.grad


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    coords_per_param: int = 6,
    rng: RngStream | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn must rebuild its graph from the params' current values on every
    call. Checks up to coords_per_param sampled coordinates per parameter and
    returns the worst relative error max(|a - n|) / max(|a|, |n|, 1e-8).
    """
    params = [p for p in params if p.trainable]
    if not params:
        raise ValueError("grad_check needs at least one trainable parameter")
    zero_grads(params)
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = [np.array(p.grad) for p in params]

    gen = (rng if rng is not None else RngStream(0).split("grad-check")).gen()
    worst = 0.0
    for p, a in zip(params, analytic):
        if not p.data.flags["C_CONTIGUOUS"]:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)  # view; perturbations hit the live parameter
        aflat = a.reshape(-1)
        k = min(coords_per_param, flat.size)
        coords = gen.choice(flat.size, size=k, replace=False)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + eps
            with no_grad():
                f_plus = float(loss_fn().data)
            flat[i] = keep - eps
            with no_grad():
                f_minus = float(loss_fn().data)
            flat[i] = keep
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("loss is not finite during finite differencing")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


__all__ = [
    "ModelConfig",
    "Tensor",
    "as_tensor",
    "no_grad",
    "matmul",
    "softmax_rows",
    "cosine",
    "sgd_step",
    "zero_grads",
    "grad_check",
]
