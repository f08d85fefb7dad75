"""Fast self-contained health checks over the package's numerical core.

Each check raises on failure; the runner reports one line per check and the
first failure names the check, so a broken install is diagnosable from the
exit message alone. The whole battery is built to finish in well under 30
seconds.
"""

from __future__ import annotations

import time

import numpy as np

from .autodiff import Tensor
from .backbone import AdapterParams, FrozenBackboneWeights, encode_tokens
from .expert import ExpertParams, encode_spatiotemporal
from .fssd import compute_channel_stats, fisher_sensitivity, fssd_loss
from .losses import (
    LossConfig,
    label_mask,
    similarity_matrix,
    symmetric_contrastive,
    t2v_loss,
    total_loss,
    v2t_loss,
)
from .nncore import ModelConfig, grad_check
from .rng import RngStream
from .tdmoe import spatial_mean, temporal_component


def check_decomposition() -> None:
    """V_tem + V_bar reconstructs V_st, and a linear-attention stub's
    temporal component equals sum_i (a_i - 1/N)(V_i - V_bar)."""
    gen = RngStream(53).split("selftest", "decomp").gen()
    for _ in range(10):
        vst = gen.standard_normal(16)
        vbar = gen.standard_normal(16)
        back = temporal_component(vst, vbar) + vbar
        if not np.allclose(back, vst, rtol=0, atol=1e-12):
            raise AssertionError(f"reconstruction off by {np.abs(back - vst).max():.3e}")
    for _ in range(10):
        n, d = 6, 5
        v = gen.standard_normal((n, d))
        logits = gen.standard_normal(n)
        a = np.exp(logits) / np.exp(logits).sum()
        got = temporal_component(a @ v, spatial_mean(v))
        want = (a - 1.0 / n) @ (v - spatial_mean(v))
        err = np.abs(got - want).max()
        if err > 1e-10:
            raise AssertionError(f"stub identity off by {err:.3e}")


def check_fisher() -> None:
    """Monte-Carlo Fisher of a Gaussian mean matches the closed form 1/var
    within 5% at 1e5 draws for variances 0.25, 1, 4."""
    gen = RngStream(42).split("selftest", "fisher").gen()
    n = 100_000
    for var in (0.25, 1.0, 4.0):
        mu = 1.7
        x = gen.normal(mu, np.sqrt(var), size=n)
        empirical = np.mean(((x - mu) / var) ** 2)
        stats = compute_channel_stats(np.array([[mu - 1e-3], [mu + 1e-3]]))
        stats.var[:] = var
        closed = fisher_sensitivity(stats)[0]
        rel = abs(empirical - closed) / closed
        if rel >= 0.05:
            raise AssertionError(f"var={var}: MC {empirical:.5f} vs closed {closed:.5f} ({rel:.2%} off)")


def check_gradients() -> None:
    """Analytic gradients of the full training objective — both contrastive
    terms plus the weighted drift penalty, through backbone, adapters, and a
    fresh expert (its [CLS] token included) — match finite differences to
    1e-4 on a reduced model."""
    cfg = ModelConfig(d=12, d_h=4, d_vt=8, n_patches=2, n_frames=3,
                      backbone_layers=1, backbone_heads=2, expert_layers=1, expert_heads=2)
    gen = RngStream(68).split("selftest", "grad").gen()
    backbone = FrozenBackboneWeights.random(3, cfg)
    adapters = AdapterParams.init(3, cfg)
    expert = ExpertParams.init(3, cfg, task_id=1)
    # nudge the zero-initialized up-projections/feedforwards off their saddle
    for p in adapters.parameters() + expert.parameters():
        if not p.data.any():
            p.data += gen.normal(0.0, 0.05, size=p.data.shape)

    frames = gen.standard_normal((4, cfg.n_frames, cfg.tokens_per_frame, cfg.d))
    labels = np.array([0, 1, 0, 1])
    texts = gen.standard_normal((4, cfg.d_vt))
    prev = gen.standard_normal((4, cfg.d_vt))
    weights = np.abs(gen.standard_normal(cfg.d_vt)) + 0.1
    mask = label_mask(labels, labels)
    lcfg = LossConfig(fssd_weight=10.0)

    def loss_fn():
        feats = encode_tokens(frames, backbone, adapters)
        vbar = feats.mean(axis=-2)
        l_s = symmetric_contrastive(similarity_matrix(vbar, texts), mask, lcfg)
        vst, _ = encode_spatiotemporal(feats, expert)
        l_st = symmetric_contrastive(similarity_matrix(vst, texts), mask, lcfg)
        return total_loss(l_st, l_s, fssd_loss(prev, vbar, weights), lcfg)

    params = adapters.parameters() + expert.parameters()
    err = grad_check(loss_fn, params, coords_per_param=3, rng=RngStream(9).split("selftest", "coords"))
    if err >= 1e-4:
        raise AssertionError(f"worst relative gradient error {err:.3e} >= 1e-4")


def check_softmax_contracts() -> None:
    """Contrastive losses honor their algebra: text-to-video is the exact
    transpose dual of video-to-text, both are equivariant under matched row
    permutations, and the single-pair value matches the closed form."""
    gen = RngStream(67).split("selftest", "contracts").gen()
    cfg = LossConfig()
    v = gen.standard_normal((5, 7))
    t = gen.standard_normal((5, 7))
    labels = gen.integers(0, 3, size=5)
    sim = similarity_matrix(Tensor(v), t)
    mask = label_mask(labels, labels)
    a = t2v_loss(sim, mask, cfg).data
    b = v2t_loss(similarity_matrix(Tensor(t), v), mask.T, cfg).data
    if not np.array_equal(a, b):
        raise AssertionError(f"transpose duality broken: {a!r} vs {b!r}")

    perm = gen.permutation(5)
    base = v2t_loss(sim, mask, cfg).data
    shuffled = v2t_loss(similarity_matrix(Tensor(v[perm]), t[perm]), label_mask(labels[perm], labels[perm]), cfg).data
    if abs(base - shuffled) > 1e-12:
        raise AssertionError(f"permutation equivariance off by {abs(base - shuffled):.3e}")

    one_v = gen.standard_normal((1, 4))
    one_t = gen.standard_normal((1, 4))
    s = similarity_matrix(Tensor(one_v), one_t)
    got = float(v2t_loss(s, np.ones((1, 1)), cfg).data)
    e = np.exp(float(s.data[0, 0]) / cfg.temperature)
    want = -np.log(e / (e + cfg.epsilon))
    if abs(got - want) > 1e-10:
        raise AssertionError(f"single-pair closed form off by {abs(got - want):.3e}")


CHECKS = (
    ("decomposition", check_decomposition),
    ("fisher", check_fisher),
    ("gradients", check_gradients),
    ("softmax-contracts", check_softmax_contracts),
)


def run_selftest(out=print) -> list[str]:
    """Run every check; returns the names of the failing ones."""
    failures = []
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            fn()
        except Exception as exc:  # report and keep going: name every failure
            failures.append(name)
            out(f"FAIL {name}: {exc}")
        else:
            out(f"ok   {name} ({time.perf_counter() - start:.2f}s)")
    return failures
