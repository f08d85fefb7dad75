"""Frozen backbone and adapter contracts, against an independent numpy forward."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.special import erf

from stpr.autodiff import Tensor
from stpr.backbone import (
    AdapterParams,
    FrozenBackboneWeights,
    adapter_forward,
    encode_frame,
    encode_tokens,
    encode_video_spatial,
)
from stpr.errors import ShapeError
from stpr.nncore import ModelConfig, grad_check
from stpr.rng import RngStream

TINY = ModelConfig(
    d=4, d_h=2, d_vt=3, n_patches=1, n_frames=2,
    backbone_layers=1, backbone_heads=1, expert_layers=1, expert_heads=1,
)


# independent reference forward, written against the layer equations directly


def np_gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def np_mhsa(z, wq, wk, wv, wo, heads):
    n, d = z.shape
    hd = d // heads
    outs = []
    for h in range(heads):
        cols = slice(h * hd, (h + 1) * hd)
        q = z @ wq[:, cols]
        k = z @ wk[:, cols]
        v = z @ wv[:, cols]
        attn = np_softmax(q @ k.T / np.sqrt(hd))
        outs.append(attn @ v)
    return np.concatenate(outs, axis=1) @ wo


def np_encode_frame(tokens, backbone, adapters, use_adapter=True):
    z = tokens + backbone.token_embed.data
    for layer, dn, up in zip(backbone.layers, adapters.downs, adapters.ups):
        z = z + np_mhsa(z, layer.wq.data, layer.wk.data, layer.wv.data, layer.wo.data, backbone.heads)
        if use_adapter:
            z = z + np.maximum(z @ dn.data, 0.0) @ up.data
        z = z + np_gelu(z @ layer.w1.data) @ layer.w2.data
    return z[0] @ backbone.w_proj.data


def make_parts(seed=3, cfg=TINY):
    backbone = FrozenBackboneWeights.random(seed, cfg)
    adapters = AdapterParams.init(seed, cfg)
    return backbone, adapters


def test_backbone_reconstructible_bit_exact():
    a = FrozenBackboneWeights.random(9, ModelConfig())
    b = FrozenBackboneWeights.random(9, ModelConfig())
    for ta, tb in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta.data, tb.data)
    c = FrozenBackboneWeights.random(10, ModelConfig())
    assert not np.array_equal(a.layers[0].wq.data, c.layers[0].wq.data)


def test_backbone_weights_are_frozen():
    backbone, _ = make_parts()
    for t in backbone.tensors():
        assert not t.trainable
        assert t.grad is None


def test_adapter_init_shapes_and_zero_up():
    cfg = ModelConfig()
    adapters = AdapterParams.init(0, cfg)
    assert len(adapters.downs) == cfg.backbone_layers
    for dn, up in zip(adapters.downs, adapters.ups):
        assert dn.shape == (cfg.d, cfg.d_h)
        assert up.shape == (cfg.d_h, cfg.d)
        assert np.all(up.data == 0.0)
        assert dn.trainable and up.trainable
    # down-projection values come from the seeded stream at std 0.02
    flat = np.concatenate([d.data.ravel() for d in adapters.downs])
    assert 0.01 < flat.std() < 0.03


def test_adapter_branch_hand_case():
    # relu([1, -1] @ [[1, 0], [0, 1]]) @ [[2, 0], [0, 2]] with a negative killed
    v = Tensor(np.array([[1.0, -1.0]]))
    w_down = Tensor(np.eye(2))
    w_up = Tensor(2.0 * np.eye(2))
    out = adapter_forward(v, w_down, w_up)
    assert np.array_equal(out.data, [[2.0, 0.0]])


def test_zero_adapters_match_frozen_forward_exactly():
    backbone, adapters = make_parts()
    gen = RngStream(21).split("tokens").gen()
    tokens = gen.standard_normal((TINY.tokens_per_frame, TINY.d))
    got = encode_frame(tokens, backbone, adapters).data
    want = np_encode_frame(tokens, backbone, adapters, use_adapter=False)
    assert np.array_equal(got, want)


def test_encode_frame_matches_manual_forward_with_live_adapter():
    backbone, adapters = make_parts()
    gen = RngStream(22).split("tokens").gen()
    # make the adapter branch genuinely active
    for dn, up in zip(adapters.downs, adapters.ups):
        dn.data = gen.standard_normal(dn.shape) * 0.5
        up.data = gen.standard_normal(up.shape) * 0.5
    tokens = gen.standard_normal((TINY.tokens_per_frame, TINY.d))
    got = encode_frame(tokens, backbone, adapters).data
    want = np_encode_frame(tokens, backbone, adapters, use_adapter=True)
    assert got.shape == (TINY.d_vt,)
    assert np.allclose(got, want, rtol=0, atol=1e-10)


def test_encode_frame_multi_head_multi_layer_oracle():
    cfg = ModelConfig(d=6, d_h=2, d_vt=4, n_patches=2, n_frames=2,
                      backbone_layers=2, backbone_heads=3, expert_layers=1, expert_heads=1)
    backbone = FrozenBackboneWeights.random(4, cfg)
    adapters = AdapterParams.init(4, cfg)
    gen = RngStream(23).split("tokens").gen()
    for up in adapters.ups:
        up.data = gen.standard_normal(up.shape) * 0.3
    tokens = gen.standard_normal((cfg.tokens_per_frame, cfg.d))
    got = encode_frame(tokens, backbone, adapters).data
    want = np_encode_frame(tokens, backbone, adapters)
    assert np.allclose(got, want, rtol=0, atol=1e-10)


def test_encode_frame_rejects_wrong_token_count():
    backbone, adapters = make_parts()
    with pytest.raises(ShapeError):
        encode_frame(np.zeros((TINY.tokens_per_frame + 1, TINY.d)), backbone, adapters)
    with pytest.raises(ShapeError):
        encode_frame(np.zeros((TINY.tokens_per_frame, TINY.d + 2)), backbone, adapters)


def test_encode_video_matches_per_frame_encoding():
    backbone, adapters = make_parts()
    gen = RngStream(24).split("video").gen()
    for up in adapters.ups:
        up.data = gen.standard_normal(up.shape) * 0.2
    frames = gen.standard_normal((TINY.n_frames, TINY.tokens_per_frame, TINY.d))
    batched = encode_video_spatial(frames, backbone, adapters).data
    assert batched.shape == (TINY.n_frames, TINY.d_vt)
    for i in range(TINY.n_frames):
        single = encode_frame(frames[i], backbone, adapters).data
        assert np.allclose(batched[i], single, rtol=0, atol=1e-12)


def test_encode_video_rejects_bad_shape():
    backbone, adapters = make_parts()
    with pytest.raises(ShapeError):
        encode_video_spatial(np.zeros((2, 3, TINY.d)), backbone, adapters)


def test_encoding_deterministic():
    backbone, adapters = make_parts()
    tokens = RngStream(25).split("t").gen().standard_normal((TINY.tokens_per_frame, TINY.d))
    a = encode_frame(tokens, backbone, adapters).data
    b = encode_frame(tokens, backbone, adapters).data
    assert np.array_equal(a, b)


def test_adapter_clone_is_independent():
    _, adapters = make_parts()
    snap = adapters.clone(trainable=False)
    adapters.downs[0].data += 1.0
    adapters.ups[0].data += 1.0
    assert np.all(snap.ups[0].data == 0.0)
    assert not np.array_equal(snap.downs[0].data, adapters.downs[0].data)
    for t in snap.parameters():
        assert not t.trainable


def test_adapter_gradients_flow_and_backbone_stays_clean():
    backbone, adapters = make_parts()
    gen = RngStream(26).split("g").gen()
    tokens = gen.standard_normal((TINY.n_frames, TINY.tokens_per_frame, TINY.d))
    feats = encode_tokens(tokens, backbone, adapters)
    (feats * feats).sum().backward()
    # zero-init up-projection blocks the path into W_down on the first pass
    assert np.all(adapters.downs[0].grad == 0.0)
    assert np.any(adapters.ups[0].grad != 0.0)
    for t in backbone.tensors():
        assert t.grad is None


def test_encode_gradcheck_through_adapters():
    backbone, adapters = make_parts()
    gen = RngStream(27).split("gc").gen()
    for dn, up in zip(adapters.downs, adapters.ups):
        dn.data = gen.standard_normal(dn.shape) * 0.4
        up.data = gen.standard_normal(up.shape) * 0.4
    tokens = gen.standard_normal((3, TINY.tokens_per_frame, TINY.d))

    def loss_fn():
        f = encode_tokens(tokens, backbone, adapters)
        return (f * f).sum()

    err = grad_check(loss_fn, adapters.parameters(), coords_per_param=6)
    assert err < 1e-6


def test_param_counts():
    cfg = ModelConfig()
    backbone = FrozenBackboneWeights.random(0, cfg)
    adapters = AdapterParams.init(0, cfg)
    expected_backbone = (
        cfg.tokens_per_frame * cfg.d
        + cfg.backbone_layers * (4 * cfg.d * cfg.d + 8 * cfg.d * cfg.d)
        + cfg.d * cfg.d_vt
    )
    assert backbone.param_count() == expected_backbone
    assert adapters.param_count() == cfg.backbone_layers * 2 * cfg.d * cfg.d_h
