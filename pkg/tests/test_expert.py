"""Temporal expert contracts: attention behavior, cloning, the expert bank."""

from __future__ import annotations

import numpy as np
import pytest

from stpr.autodiff import Tensor
from stpr.errors import ShapeError
from stpr.expert import ExpertBank, ExpertLayer, ExpertParams, clone_and_freeze, encode_spatiotemporal
from stpr.nncore import ModelConfig, grad_check, sgd_step
from stpr.rng import RngStream
from tests.test_backbone import np_gelu, np_softmax

SMALL = ModelConfig(d=4, d_h=2, d_vt=4, n_patches=1, n_frames=3,
                    backbone_layers=1, backbone_heads=1, expert_layers=2, expert_heads=2)


def make_expert(seed=0, cfg=SMALL, task_id=1):
    return ExpertParams.init(seed, cfg, task_id)


def manual_expert_forward(seq, expert):
    """Independent numpy replay of the expert layer equations."""
    z = seq.copy()
    for layer in expert.layers:
        n, d = z.shape
        hd = d // expert.heads
        outs = []
        for h in range(expert.heads):
            cols = slice(h * hd, (h + 1) * hd)
            q = z @ layer.wq.data[:, cols]
            k = z @ layer.wk.data[:, cols]
            v = z @ layer.wv.data[:, cols]
            outs.append(np_softmax(q @ k.T / np.sqrt(hd)) @ v)
        z = z + np.concatenate(outs, axis=1) @ layer.wo.data
        z = z + np_gelu(z @ layer.w1.data) @ layer.w2.data
    return z[0]


def test_expert_init_deterministic_and_fresh_per_task():
    a = make_expert(seed=7, task_id=1)
    b = make_expert(seed=7, task_id=1)
    c = make_expert(seed=7, task_id=2)
    for ta, tb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(ta.data, tb.data)
    assert not np.array_equal(a.cls_token.data, c.cls_token.data)


def test_cls_token_init_scale():
    flat = np.concatenate([make_expert(seed=s).cls_token.data.ravel() for s in range(40)])
    assert 0.015 < flat.std() < 0.025


def test_output_shape_and_attention_maps():
    expert = make_expert()
    gen = RngStream(31).split("frames").gen()
    frames = gen.standard_normal((SMALL.n_frames, SMALL.d_vt))
    out, maps = encode_spatiotemporal(frames, expert)
    assert out.shape == (SMALL.d_vt,)
    assert len(maps) == SMALL.expert_layers
    n = SMALL.n_frames + 1
    for m in maps:
        assert m.shape == (SMALL.expert_heads, n, n)
        assert np.allclose(m.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        assert np.all(m >= 0)


def test_matches_manual_forward():
    expert = make_expert(seed=5)
    gen = RngStream(32).split("frames").gen()
    frames = gen.standard_normal((SMALL.n_frames, SMALL.d_vt))
    got, _ = encode_spatiotemporal(frames, expert)
    seq = np.concatenate([expert.cls_token.data, frames], axis=0)
    want = manual_expert_forward(seq, expert)
    assert np.allclose(got.data, want, rtol=0, atol=1e-10)


def test_single_layer_hand_attention_oracle():
    # one layer, one head, two frames, d_vt=2: fully hand-checkable
    cfg = ModelConfig(d=4, d_h=2, d_vt=2, n_patches=1, n_frames=2,
                      backbone_layers=1, backbone_heads=1, expert_layers=1, expert_heads=1)
    expert = ExpertParams.init(0, cfg, task_id=1)
    expert.cls_token.data = np.array([[1.0, 0.0]])
    layer = expert.layers[0]
    layer.wq.data = np.eye(2)
    layer.wk.data = np.eye(2)
    layer.wv.data = np.array([[1.0, 0.0], [0.0, 2.0]])
    layer.wo.data = np.eye(2)
    layer.w1.data = np.zeros((2, 8))
    layer.w2.data = np.zeros((8, 2))
    frames = np.array([[0.0, 1.0], [1.0, 1.0]])
    # seq rows: c=[1,0], f1=[0,1], f2=[1,1]; logits for the cls row are
    # [c.c, c.f1, c.f2]/sqrt(2) = [1, 0, 1]/sqrt(2)
    logits = np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)
    weights = np.exp(logits) / np.exp(logits).sum()
    values = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 2.0]])  # rows @ wv
    want = np.array([1.0, 0.0]) + weights @ values
    got, maps = encode_spatiotemporal(frames, expert)
    assert np.allclose(got.data, want, rtol=0, atol=1e-12)
    assert np.allclose(maps[0][0, 0], weights, rtol=0, atol=1e-12)


def test_identity_values_make_attention_invisible():
    # with value/output projections identity and the FFN zeroed, equal rows
    # stay equal: each layer doubles them no matter what attention does
    cfg = ModelConfig(d=4, d_h=2, d_vt=4, n_patches=1, n_frames=3,
                      backbone_layers=1, backbone_heads=1, expert_layers=2, expert_heads=1)
    expert = ExpertParams.init(3, cfg, task_id=1)
    v = np.array([0.5, -1.0, 2.0, 0.25])
    expert.cls_token.data = v.reshape(1, -1).copy()
    for layer in expert.layers:
        layer.wv.data = np.eye(4)
        layer.wo.data = np.eye(4)
        layer.w1.data = np.zeros((4, 16))
        layer.w2.data = np.zeros((16, 4))
    frames = np.tile(v, (3, 1))
    out, _ = encode_spatiotemporal(frames, expert)
    assert np.allclose(out.data, 4.0 * v, rtol=0, atol=1e-12)


def test_frame_permutation_invariance():
    # no positional encodings: the [CLS] row sees frames as a set
    expert = make_expert(seed=9)
    gen = RngStream(33).split("perm").gen()
    frames = gen.standard_normal((SMALL.n_frames, SMALL.d_vt))
    base, _ = encode_spatiotemporal(frames, expert)
    perm = gen.permutation(SMALL.n_frames)
    shuffled, _ = encode_spatiotemporal(frames[perm], expert)
    assert np.allclose(base.data, shuffled.data, rtol=0, atol=1e-10)


def test_batched_matches_single():
    expert = make_expert(seed=11)
    gen = RngStream(34).split("batch").gen()
    batch = gen.standard_normal((5, SMALL.n_frames, SMALL.d_vt))
    out, maps = encode_spatiotemporal(batch, expert)
    assert out.shape == (5, SMALL.d_vt)
    for i in range(5):
        single, _ = encode_spatiotemporal(batch[i], expert)
        assert np.allclose(out.data[i], single.data, rtol=0, atol=1e-12)
    assert maps[0].shape == (5, SMALL.expert_heads, SMALL.n_frames + 1, SMALL.n_frames + 1)


def test_rejects_wrong_width():
    expert = make_expert()
    with pytest.raises(ShapeError):
        encode_spatiotemporal(np.zeros((3, SMALL.d_vt + 1)), expert)
    with pytest.raises(ShapeError):
        encode_spatiotemporal(np.zeros(SMALL.d_vt), expert)


def test_gradcheck_through_expert():
    expert = make_expert(seed=13)
    gen = RngStream(35).split("gc").gen()
    frames = gen.standard_normal((4, SMALL.n_frames, SMALL.d_vt))

    def loss_fn():
        out, _ = encode_spatiotemporal(frames, expert)
        return (out * out).sum()

    err = grad_check(loss_fn, expert.parameters(), coords_per_param=4)
    assert err < 1e-6


def test_clone_and_freeze_independence():
    expert = make_expert(seed=15)
    frozen = clone_and_freeze(expert)
    assert frozen.frozen and frozen.task_id == expert.task_id
    for t in frozen.parameters():
        assert not t.trainable

    # train the source a step; the frozen twin must be bit-identical to before
    before = [np.array(t.data) for t in frozen.parameters()]
    gen = RngStream(36).split("train").gen()
    frames = gen.standard_normal((4, SMALL.n_frames, SMALL.d_vt))
    out, _ = encode_spatiotemporal(frames, expert)
    (out * out).sum().backward()
    sgd_step(expert.parameters(), lr=0.5)
    for t, b in zip(frozen.parameters(), before):
        assert np.array_equal(t.data, b)
    assert not np.array_equal(expert.cls_token.data, frozen.cls_token.data)


def test_bank_ordering_and_guards():
    bank = ExpertBank()
    with pytest.raises(ValueError):
        bank.add(make_expert(task_id=1))  # not frozen
    e2 = clone_and_freeze(make_expert(task_id=2))
    e1 = clone_and_freeze(make_expert(task_id=1))
    bank.add(e2)
    bank.add(e1)
    assert bank.task_ids() == [1, 2]
    with pytest.raises(ValueError):
        bank.add(clone_and_freeze(make_expert(task_id=2)))
    assert len(bank) == 2


def test_param_count_closed_form():
    cfg = ModelConfig()
    expert = ExpertParams.init(0, cfg, task_id=1)
    expected = cfg.d_vt + cfg.expert_layers * 12 * cfg.d_vt * cfg.d_vt
    assert expert.param_count() == expected
