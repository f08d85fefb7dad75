"""Frozen spatial transformer with per-layer residual bottleneck adapters.

Each frame is a (P+1) x d token grid with its [CLS] row first. A layer
applies self-attention, the adapter, then the feedforward block, each as a
residual update and with no layer normalization:

    v'  = v  + MHSA(v)
    v'' = v' + relu(v' @ W_down) @ W_up
    out = v'' + ffn(v'')

After the final layer the frame [CLS] row is projected by W_proj to the
shared d_vt feature space. Up-projections start at zero, so a freshly
initialized adapter leaves the frozen forward pass bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, matmul, relu
from .errors import ShapeError
from .layers import feed_forward, multi_head_attention
from .nncore import ModelConfig
from .rng import RngStream

FROZEN_INIT_STD = 0.02
ADAPTER_DOWN_STD = 0.02


@dataclass
class BackboneLayer:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    w2: Tensor


class FrozenBackboneWeights:
    """All backbone weights, created frozen. Reconstructible from (seed, config)."""

    def __init__(self, token_embed: Tensor, layers: list[BackboneLayer], w_proj: Tensor, heads: int):
        self.token_embed = token_embed
        self.layers = layers
        self.w_proj = w_proj
        self.heads = heads

    @classmethod
    def random(cls, seed: int, cfg: ModelConfig) -> "FrozenBackboneWeights":
        root = RngStream(seed).split("backbone")
        d = cfg.d

        def frozen(stream: RngStream, shape) -> Tensor:
            return Tensor(stream.normal(shape, FROZEN_INIT_STD), trainable=False)

        token_embed = frozen(root.split("token-embed"), (cfg.tokens_per_frame, d))
        layers = []
        for i in range(cfg.backbone_layers):
            s = root.split("layer", i)
            layers.append(
                BackboneLayer(
                    wq=frozen(s.split("wq"), (d, d)),
                    wk=frozen(s.split("wk"), (d, d)),
                    wv=frozen(s.split("wv"), (d, d)),
                    wo=frozen(s.split("wo"), (d, d)),
                    w1=frozen(s.split("w1"), (d, 4 * d)),
                    w2=frozen(s.split("w2"), (4 * d, d)),
                )
            )
        w_proj = frozen(root.split("proj"), (d, cfg.d_vt))
        return cls(token_embed, layers, w_proj, cfg.backbone_heads)

    def tensors(self) -> list[Tensor]:
        out = [self.token_embed, self.w_proj]
        for layer in self.layers:
            out.extend([layer.wq, layer.wk, layer.wv, layer.wo, layer.w1, layer.w2])
        return out

    def param_count(self) -> int:
        return sum(t.data.size for t in self.tensors())


class AdapterParams:
    """Per-layer bottleneck pairs (W_down: d x d_h, W_up: d_h x d), no biases."""

    def __init__(self, downs: list[Tensor], ups: list[Tensor]):
        if len(downs) != len(ups):
            raise ShapeError("adapter down/up layer counts differ")
        self.downs = downs
        self.ups = ups

    @classmethod
    def init(cls, seed: int, cfg: ModelConfig) -> "AdapterParams":
        root = RngStream(seed).split("adapter")
        downs, ups = [], []
        for i in range(cfg.backbone_layers):
            downs.append(Tensor(root.split("down", i).normal((cfg.d, cfg.d_h), ADAPTER_DOWN_STD), trainable=True))
            ups.append(Tensor(np.zeros((cfg.d_h, cfg.d)), trainable=True))
        return cls(downs, ups)

    def parameters(self) -> list[Tensor]:
        out = []
        for dn, up in zip(self.downs, self.ups):
            out.extend([dn, up])
        return out

    def param_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def clone(self, trainable: bool = False) -> "AdapterParams":
        """Deep copy; pass trainable=False for a frozen snapshot."""
        downs = [Tensor(np.array(t.data), trainable=trainable) for t in self.downs]
        ups = [Tensor(np.array(t.data), trainable=trainable) for t in self.ups]
        return AdapterParams(downs, ups)


def adapter_forward(v: Tensor, w_down: Tensor, w_up: Tensor) -> Tensor:
    """Bottleneck residual branch: relu(v @ W_down) @ W_up (the branch only)."""
    return matmul(relu(matmul(v, w_down)), w_up)


def encode_tokens(tokens, backbone: FrozenBackboneWeights, adapters: AdapterParams) -> Tensor:
    """Run token grids (..., P+1, d) through all layers; project [CLS] to (..., d_vt)."""
    z = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    z = z + backbone.token_embed
    for layer, w_down, w_up in zip(backbone.layers, adapters.downs, adapters.ups):
        z = z + multi_head_attention(z, layer.wq, layer.wk, layer.wv, layer.wo, backbone.heads)
        z = z + adapter_forward(z, w_down, w_up)
        z = z + feed_forward(z, layer.w1, layer.w2)
    cls_rows = z[..., 0, :]
    if cls_rows.ndim == 1:
        cls_rows = cls_rows.reshape((1, -1))
        return matmul(cls_rows, backbone.w_proj).reshape((-1,))
    return matmul(cls_rows, backbone.w_proj)


def encode_frame(frame_tokens, backbone: FrozenBackboneWeights, adapters: AdapterParams) -> Tensor:
    """Encode one (P+1) x d frame to its d_vt feature vector."""
    arr = frame_tokens.data if isinstance(frame_tokens, Tensor) else np.asarray(frame_tokens, dtype=np.float64)
    expected = (backbone.token_embed.shape[0], backbone.token_embed.shape[1])
    if arr.shape != expected:
        raise ShapeError(f"frame tokens must be {expected}, got {arr.shape}")
    return encode_tokens(frame_tokens, backbone, adapters)


def encode_video_spatial(video, backbone: FrozenBackboneWeights, adapters: AdapterParams) -> Tensor:
    """Encode a video's N_f frames to an (N_f, d_vt) feature matrix.

    Accepts a SyntheticVideo or a raw (N_f, P+1, d) array.
    """
    frames = getattr(video, "frames", video)
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1:] != backbone.token_embed.shape:
        raise ShapeError(f"video must be (N_f, {backbone.token_embed.shape[0]}, {backbone.token_embed.shape[1]}), got {arr.shape}")
    return encode_tokens(arr, backbone, adapters)
