"""Synthetic stream: determinism, structure, separation, and solvability oracles."""

from __future__ import annotations

import numpy as np
import pytest

from stpr.datagen import StreamConfig, generate_stream, generate_text_embeddings
from stpr.errors import ConfigError, GenerationError
from stpr.nncore import ModelConfig, cosine
from stpr.rng import RngStream

SMALL_MODEL = ModelConfig(d=12, d_h=2, d_vt=6, n_patches=2, n_frames=4,
                          backbone_layers=1, backbone_heads=1, expert_layers=1, expert_heads=1)
SMALL_STREAM = StreamConfig(tasks=3, classes_per_task=2, train_per_class=4, eval_per_class=2)


def small_stream(seed=7):
    return generate_stream(seed, SMALL_STREAM, SMALL_MODEL)


def test_stream_deterministic_bit_exact():
    a = small_stream()
    b = small_stream()
    assert np.array_equal(a.tasks[0].train[0].frames, b.tasks[0].train[0].frames)
    assert np.array_equal(a.tasks[2].eval[-1].frames, b.tasks[2].eval[-1].frames)
    for c in a.texts:
        assert np.array_equal(a.texts[c], b.texts[c])
        assert np.array_equal(a.prototypes[c].residuals, b.prototypes[c].residuals)


def test_stream_seed_changes_content():
    a = small_stream(seed=7)
    b = small_stream(seed=8)
    assert not np.array_equal(a.tasks[0].train[0].frames, b.tasks[0].train[0].frames)


def test_tasks_are_disjoint_and_sized():
    stream = small_stream()
    seen: set[int] = set()
    for task in stream.tasks:
        assert len(task.class_ids) == SMALL_STREAM.classes_per_task
        assert not (seen & set(task.class_ids))
        seen.update(task.class_ids)
        assert len(task.train) == SMALL_STREAM.classes_per_task * SMALL_STREAM.train_per_class
        assert len(task.eval) == SMALL_STREAM.classes_per_task * SMALL_STREAM.eval_per_class
        for vid in task.train + task.eval:
            assert vid.label in task.class_ids
            assert vid.frames.shape == (SMALL_MODEL.n_frames, SMALL_MODEL.tokens_per_frame, SMALL_MODEL.d)
    assert seen == set(range(SMALL_STREAM.n_classes))
    assert stream.classes_up_to(2) == [0, 1, 2, 3]


def test_text_embeddings_unit_norm_and_separated():
    stream = small_stream()
    ids = sorted(stream.texts)
    for c in ids:
        assert np.linalg.norm(stream.texts[c]) == pytest.approx(1.0, abs=1e-12)
    for i in ids:
        for j in ids:
            if i < j:
                # separation is two-sided: no class text near another's antipode
                cos = cosine(stream.texts[i], stream.texts[j])
                assert abs(cos) <= SMALL_STREAM.max_text_cos + 1e-12


def test_signatures_zero_sum_exact():
    stream = small_stream()
    for proto in stream.prototypes.values():
        total = proto.residuals.sum(axis=0)
        assert np.all(total == 0.0)


def test_signatures_pairwise_separated():
    stream = small_stream()
    ids = sorted(stream.prototypes)
    for i in ids:
        for j in ids:
            if i < j:
                a = stream.prototypes[i].residuals.ravel()
                b = stream.prototypes[j].residuals.ravel()
                assert abs(cosine(a, b)) <= SMALL_STREAM.max_signature_cos + 1e-12


def test_prototype_cls_row_carries_text():
    stream = small_stream()
    for c, proto in stream.prototypes.items():
        want = SMALL_STREAM.text_gain * stream.texts[c]
        assert np.array_equal(proto.static[0, : SMALL_MODEL.d_vt], want)


def _bare(stream, c: int) -> np.ndarray:
    """A class's static prototype with the planted text row zeroed out."""
    static = stream.prototypes[c].static.copy()
    static[0, : SMALL_MODEL.d_vt] = 0.0
    return static


def test_default_statics_share_one_backdrop():
    # with scene spread and class offsets at their zero defaults, every class
    # of every task shows the identical backdrop once the text row is removed:
    # appearance alone distinguishes nothing
    stream = small_stream()
    reference = _bare(stream, stream.tasks[0].class_ids[0])
    for task in stream.tasks:
        for c in task.class_ids:
            assert np.array_equal(_bare(stream, c), reference)


def test_scene_spread_separates_tasks_not_classes():
    # with a nonzero scene spread, both classes of a task still reuse one
    # scene (statics agree off the text row) while different tasks differ
    cfg = StreamConfig(tasks=SMALL_STREAM.tasks, classes_per_task=SMALL_STREAM.classes_per_task,
                       train_per_class=SMALL_STREAM.train_per_class,
                       eval_per_class=SMALL_STREAM.eval_per_class,
                       scene_spread=0.05, class_static_scale=0.0)
    stream = generate_stream(5, cfg, SMALL_MODEL)

    for task in stream.tasks:
        first, second = task.class_ids
        assert np.array_equal(_bare(stream, first), _bare(stream, second))
    for other in stream.tasks[1:]:
        assert not np.array_equal(_bare(stream, stream.tasks[0].class_ids[0]),
                                  _bare(stream, other.class_ids[0]))


def test_class_offsets_distinguish_scene_mates():
    # with a nonzero class offset, same-task statics differ off the text row
    offset = 0.05
    cfg = StreamConfig(tasks=SMALL_STREAM.tasks, classes_per_task=SMALL_STREAM.classes_per_task,
                       train_per_class=SMALL_STREAM.train_per_class,
                       eval_per_class=SMALL_STREAM.eval_per_class,
                       class_static_scale=offset)
    stream = generate_stream(7, cfg, SMALL_MODEL)
    first, second = stream.tasks[0].class_ids
    a = stream.prototypes[first].static[1:]
    b = stream.prototypes[second].static[1:]
    assert not np.array_equal(a, b)
    assert np.abs(a - b).max() < 10 * offset


def test_zero_noise_samples_identical():
    cfg = StreamConfig(tasks=2, classes_per_task=2, train_per_class=3, eval_per_class=2, noise_std=0.0)
    stream = generate_stream(3, cfg, SMALL_MODEL)
    task = stream.tasks[0]
    by_label: dict[int, list[np.ndarray]] = {}
    for vid in task.train:
        by_label.setdefault(vid.label, []).append(vid.frames)
    for frames_list in by_label.values():
        for f in frames_list[1:]:
            assert np.array_equal(frames_list[0], f)


def test_sample_structure_noise_free():
    cfg = StreamConfig(tasks=1, classes_per_task=1, train_per_class=2, eval_per_class=2, noise_std=0.0)
    stream = generate_stream(11, cfg, SMALL_MODEL)
    proto = stream.prototypes[0]
    vid = stream.tasks[0].train[0]
    want = proto.static[None] + cfg.temporal_amplitude * proto.residuals
    assert np.array_equal(vid.frames, want)


def test_noise_scale_matches_config():
    cfg = StreamConfig(tasks=1, classes_per_task=1, train_per_class=200, eval_per_class=2, noise_std=0.05)
    stream = generate_stream(13, cfg, SMALL_MODEL)
    proto = stream.prototypes[0]
    clean = proto.static[None] + cfg.temporal_amplitude * proto.residuals
    noises = np.stack([v.frames - clean for v in stream.tasks[0].train])
    assert abs(noises.std() - 0.05) < 0.002
    assert abs(noises.mean()) < 0.002


def test_nearest_text_oracle_is_perfect():
    # read the planted [CLS] channels of each noise-free prototype; nearest
    # text embedding must recover the class
    stream = small_stream()
    ids = sorted(stream.texts)
    for c in ids:
        readout = stream.prototypes[c].static[0, : SMALL_MODEL.d_vt]
        sims = [cosine(readout, stream.texts[j]) for j in ids]
        assert ids[int(np.argmax(sims))] == c


def test_nearest_signature_oracle_is_perfect():
    # center a noise-free video over frames to recover its temporal residuals;
    # nearest class signature must recover the class
    cfg = StreamConfig(tasks=3, classes_per_task=2, train_per_class=2, eval_per_class=2, noise_std=0.0)
    stream = generate_stream(17, cfg, SMALL_MODEL)
    ids = sorted(stream.prototypes)
    for task in stream.tasks:
        for vid in task.train:
            recovered = (vid.frames - vid.frames.mean(axis=0, keepdims=True)).ravel()
            sims = [cosine(recovered, stream.prototypes[j].residuals.ravel()) for j in ids]
            assert ids[int(np.argmax(sims))] == vid.label


def test_impossible_text_constraint_raises():
    rng = RngStream(0).split("impossible")
    with pytest.raises(GenerationError):
        generate_text_embeddings(rng, list(range(12)), d_vt=2, max_cos=0.05, max_retries=50)


def test_stream_config_validation():
    with pytest.raises(ConfigError):
        StreamConfig(tasks=0)
    with pytest.raises(ConfigError):
        StreamConfig(noise_std=-0.1)
    with pytest.raises(ConfigError):
        StreamConfig(max_text_cos=0.0)
    with pytest.raises(ConfigError):
        StreamConfig(train_per_class=1)
    with pytest.raises(ConfigError):
        StreamConfig(class_static_scale=-1.0)


def test_default_stream_constants():
    cfg = StreamConfig()
    assert cfg.tasks == 5
    assert cfg.classes_per_task == 2
    assert cfg.train_per_class == 24
    assert cfg.eval_per_class == 8
    assert cfg.noise_std == 0.05
    assert cfg.n_classes == 10


def test_text_width_cannot_exceed_token_width():
    with pytest.raises(ConfigError):
        generate_stream(1, SMALL_STREAM, ModelConfig(d=4, d_h=2, d_vt=6, n_patches=1, n_frames=2,
                                                     backbone_layers=1, backbone_heads=1,
                                                     expert_layers=1, expert_heads=1))
