"""Transformer sublayers shared by the spatial backbone and temporal experts."""

from __future__ import annotations

import math

from .autodiff import Tensor, gelu, matmul, softmax, transpose


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., N, D) -> (..., heads, N, D/heads)."""
    *lead, n, dm = x.shape
    hd = dm // heads
    x = x.reshape(tuple(lead) + (n, heads, hd))
    k = len(lead)
    axes = tuple(range(k)) + (k + 1, k, k + 2)
    return transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, N, hd) -> (..., N, heads*hd)."""
    *lead, h, n, hd = x.shape
    k = len(lead)
    axes = tuple(range(k)) + (k + 1, k, k + 2)
    return transpose(x, axes).reshape(tuple(lead) + (n, h * hd))


def multi_head_attention(
    z: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    return_attn: bool = False,
):
    """Self-attention over the rows of z (..., N, D).

    Per-head queries/keys/values are column slices of the combined D x D
    projections; logits are scaled by sqrt of the per-head width.
    """
    hd = z.shape[-1] // heads
    q = split_heads(matmul(z, wq), heads)
    k = split_heads(matmul(z, wk), heads)
    v = split_heads(matmul(z, wv), heads)
    logits = matmul(q, k.swap_last()) * (1.0 / math.sqrt(hd))
    attn = softmax(logits)  # rows sum to 1
    out = matmul(merge_heads(matmul(attn, v)), wo)
    if return_attn:
        return out, attn
    return out


def feed_forward(z: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Position-wise GELU MLP: gelu(z @ w1) @ w2."""
    return matmul(gelu(matmul(z, w1)), w2)
