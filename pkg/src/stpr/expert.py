"""Per-task spatiotemporal encoders over frame feature sequences.

An expert prepends its learnable [CLS] token to the N_f frame features and
runs a small transformer (self-attention + feedforward, residual, no
positional encodings, no normalization); its output is the final [CLS] row.
Frame order information reaches the output only through attention content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat
from .errors import ShapeError
from .layers import feed_forward, multi_head_attention
from .nncore import ModelConfig
from .rng import RngStream

CLS_INIT_STD = 0.02
IDENTITY_JITTER_STD = 0.005
POOLER_TRANSFER = 3.0


@dataclass
class ExpertLayer:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    w2: Tensor


class ExpertParams:
    def __init__(self, task_id: int, cls_token: Tensor, layers: list[ExpertLayer], heads: int, frozen: bool = False):
        self.task_id = task_id
        self.cls_token = cls_token
        self.layers = layers
        self.heads = heads
        self.frozen = frozen

    @classmethod
    def init(cls, seed: int, cfg: ModelConfig, task_id: int) -> "ExpertParams":
        """Fresh expert for a task; no warm start from earlier experts.

        Value and output projections start near scaled identities and the
        second feedforward matrix starts at zero, so an untrained expert acts
        as an attention pooler: its [CLS] output is roughly its own token
        plus an amplified average of the frame features. Under near-uniform
        attention each layer adds the running row mean with gain g, so frame
        content reaches the [CLS] row with total weight
        ((1+g)^L - 1) * N_f/(N_f+1), while the token's own constant rides the
        residual skip at roughly unit weight. g is chosen to put the frame
        transfer at POOLER_TRANSFER: high enough that what the expert learns
        to extract from the frames dominates its own constant in the output,
        which keeps the temporal component (expert output - frame mean)
        responsive to the clip rather than to the expert's identity.
        """
        root = RngStream(seed).split("expert", task_id)
        dv = cfg.d_vt
        per_layer = 1.0 + POOLER_TRANSFER * (1.0 + 1.0 / cfg.n_frames)
        gain = per_layer ** (1.0 / cfg.expert_layers) - 1.0
        scale = np.sqrt(gain)

        def w(stream: RngStream, shape) -> Tensor:
            return Tensor(stream.normal(shape, 1.0 / np.sqrt(shape[0])), trainable=True)

        def pooler(stream: RngStream) -> Tensor:
            # split-by-heads then re-concat keeps a scaled identity intact
            return Tensor(scale * np.eye(dv) + stream.normal((dv, dv), IDENTITY_JITTER_STD), trainable=True)

        cls_token = Tensor(root.split("cls").normal((1, dv), CLS_INIT_STD), trainable=True)
        layers = []
        for i in range(cfg.expert_layers):
            s = root.split("layer", i)
            layers.append(
                ExpertLayer(
                    wq=w(s.split("wq"), (dv, dv)),
                    wk=w(s.split("wk"), (dv, dv)),
                    wv=pooler(s.split("wv")),
                    wo=pooler(s.split("wo")),
                    w1=w(s.split("w1"), (dv, 4 * dv)),
                    w2=Tensor(np.zeros((4 * dv, dv)), trainable=True),
                )
            )
        return cls(task_id, cls_token, layers, cfg.expert_heads)

    def parameters(self) -> list[Tensor]:
        out = [self.cls_token]
        for layer in self.layers:
            out.extend([layer.wq, layer.wk, layer.wv, layer.wo, layer.w1, layer.w2])
        return out

    def param_count(self) -> int:
        return sum(t.data.size for t in self.parameters())


def clone_and_freeze(expert: ExpertParams) -> ExpertParams:
    """Deep-copied, frozen twin; later training of the source cannot leak in."""
    cls_token = Tensor(np.array(expert.cls_token.data))
    layers = [
        ExpertLayer(*(Tensor(np.array(getattr(l, f).data)) for f in ("wq", "wk", "wv", "wo", "w1", "w2")))
        for l in expert.layers
    ]
    return ExpertParams(expert.task_id, cls_token, layers, expert.heads, frozen=True)


def encode_spatiotemporal(frame_feats, expert: ExpertParams):
    """Map frame features (..., N_f, d_vt) to ((..., d_vt), attention maps).

    Attention maps are one (..., heads, N_f+1, N_f+1) array per layer, taken
    from the forward pass values.
    """
    x = frame_feats if isinstance(frame_feats, Tensor) else Tensor(frame_feats)
    if x.ndim < 2:
        raise ShapeError(f"frame features must be at least 2-D, got {x.shape}")
    dv = expert.cls_token.shape[1]
    if x.shape[-1] != dv:
        raise ShapeError(f"frame feature width {x.shape[-1]} does not match expert width {dv}")
    lead = x.shape[:-2]
    # broadcast the [CLS] row across any leading batch axes, then prepend it
    cls_row = Tensor(np.zeros(lead + (1, dv))) + expert.cls_token
    z = concat([cls_row, x], axis=-2)
    maps = []
    for layer in expert.layers:
        attn_out, attn = multi_head_attention(
            z, layer.wq, layer.wk, layer.wv, layer.wo, expert.heads, return_attn=True
        )
        z = z + attn_out
        z = z + feed_forward(z, layer.w1, layer.w2)
        maps.append(attn.data)
    return z[..., 0, :], maps


class ExpertBank:
    """Frozen experts of completed tasks, ordered by task id."""

    def __init__(self):
        self.experts: list[ExpertParams] = []

    def add(self, expert: ExpertParams) -> None:
        if not expert.frozen:
            raise ValueError("only frozen experts enter the bank")
        if any(e.task_id == expert.task_id for e in self.experts):
            raise ValueError(f"bank already has an expert for task {expert.task_id}")
        self.experts.append(expert)
        self.experts.sort(key=lambda e: e.task_id)

    def task_ids(self) -> list[int]:
        return [e.task_id for e in self.experts]

    def __len__(self) -> int:
        return len(self.experts)

    def __iter__(self):
        return iter(self.experts)
