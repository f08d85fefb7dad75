"""Seeded synthetic video task stream.

Every class owns a static token prototype and a temporal signature: per-frame
residual grids that sum to zero across frames (exactly, by construction), so
temporal structure never shifts the class's static appearance. Static content
is one scene per task — a shared backdrop plus an optional per-task deviation
(`scene_spread`, zero by default) — reused by all of that task's classes up to
an optional per-class offset (`class_static_scale`, zero by default),
mirroring footage where every action plays out against near-identical scenery:
frame averages are a deliberately poor cue for both the class and the task.
The class text embedding is
planted twice: overwritten at low gain into the [CLS] row of the prototype
(a clean but weak static cue that keeps the stream solvable by appearance
alone) and pulsed across frames on a zero-sum schedule (a strong cue
invisible to any frame average), so class identity lives mainly in the
dynamics. Signatures are kept pairwise dissimilar so temporal routing has
signal, and text embeddings are kept pairwise separated in both directions
by rejection sampling. Sampling adds isotropic token noise. Everything
derives from labeled RNG streams: the same seed and config reproduce the
stream bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GenerationError
from .nncore import ModelConfig
from .rng import RngStream


@dataclass(frozen=True)
class StreamConfig:
    tasks: int = 5
    classes_per_task: int = 2
    train_per_class: int = 24
    eval_per_class: int = 8
    noise_std: float = 0.05
    scene_jitter: float = 0.0
    temporal_amplitude: float = 1.5
    static_scale: float = 0.1
    scene_spread: float = 0.0
    class_static_scale: float = 0.0
    text_gain: float = 0.02
    temporal_text_gain: float = 20.0
    max_text_cos: float = 0.25
    max_signature_cos: float = 0.3
    max_retries: int = 20000

    def __post_init__(self):
        problems = []
        for f in ("tasks", "classes_per_task", "train_per_class", "eval_per_class", "max_retries"):
            v = getattr(self, f)
            if not isinstance(v, int) or v < 1:
                problems.append(f"stream.{f}: must be a positive integer, got {v!r}")
        if not isinstance(self.train_per_class, bool) and isinstance(self.train_per_class, int):
            if self.train_per_class < 2:
                problems.append("stream.train_per_class: need at least 2 samples per class for statistics")
        for f in ("noise_std", "scene_jitter", "temporal_amplitude", "static_scale",
                  "scene_spread", "class_static_scale", "text_gain", "temporal_text_gain"):
            v = getattr(self, f)
            if not isinstance(v, (int, float)) or v < 0:
                problems.append(f"stream.{f}: must be a non-negative number, got {v!r}")
        for f in ("max_text_cos", "max_signature_cos"):
            v = getattr(self, f)
            if not isinstance(v, (int, float)) or not (0 < v <= 1):
                problems.append(f"stream.{f}: must be in (0, 1], got {v!r}")
        if problems:
            raise ConfigError(problems)

    @property
    def n_classes(self) -> int:
        return self.tasks * self.classes_per_task


@dataclass
class ClassPrototype:
    class_id: int
    static: np.ndarray  # (P+1, d)
    residuals: np.ndarray  # (N_f, P+1, d), zero-sum along the frame axis


@dataclass
class SyntheticVideo:
    frames: np.ndarray  # (N_f, P+1, d)
    label: int


@dataclass
class Task:
    task_id: int  # 1-based
    class_ids: list[int]
    train: list[SyntheticVideo]
    eval: list[SyntheticVideo]


@dataclass
class TaskStream:
    seed: int
    stream_cfg: StreamConfig
    model_cfg: ModelConfig
    tasks: list[Task]
    prototypes: dict[int, ClassPrototype] = field(repr=False, default_factory=dict)
    texts: dict[int, np.ndarray] = field(repr=False, default_factory=dict)

    def classes_up_to(self, task_index: int) -> list[int]:
        """All class ids of tasks 1..task_index, ascending."""
        out: list[int] = []
        for task in self.tasks[:task_index]:
            out.extend(task.class_ids)
        return sorted(out)


def generate_text_embeddings(
    rng: RngStream, class_ids, d_vt: int, max_cos: float = 0.5, max_retries: int = 1000
) -> dict[int, np.ndarray]:
    """Unit-norm class texts, pairwise |cosine| <= max_cos by rejection.

    The magnitude bound keeps every pair of texts comfortably apart in both
    directions, so no class sits on another's antipode and small feature
    drift cannot flip a prediction wholesale.
    """
    texts: dict[int, np.ndarray] = {}
    for class_id in class_ids:
        gen = rng.split("text", class_id).gen()
        for attempt in range(max_retries + 1):
            row = gen.standard_normal(d_vt)
            row /= np.linalg.norm(row)
            if all(abs(float(np.dot(row, t))) <= max_cos for t in texts.values()):
                texts[class_id] = row
                break
        else:
            raise GenerationError(
                f"no text embedding for class {class_id} within {max_retries} retries (max_cos={max_cos})"
            )
    return texts


def _signature(
    rng: RngStream, mcfg: ModelConfig, text: np.ndarray, temporal_text_gain: float
) -> np.ndarray:
    """Random direction grids swept by a sine/cosine period pair, plus the
    class text pulsed into the [CLS] row on its own zero-sum schedule.

    The pulsed text vanishes from every frame average, so only an encoder
    that reads frame-to-frame variation can recover it."""
    gen = rng.gen()
    shape = (mcfg.tokens_per_frame, mcfg.d)
    u = gen.standard_normal(shape)
    u /= np.linalg.norm(u)
    w = gen.standard_normal(shape)
    w /= np.linalg.norm(w)
    freq = int(gen.integers(1, max(2, mcfg.n_frames // 2)))
    phase = float(gen.uniform(0.0, 1.0))
    i = np.arange(mcfg.n_frames)
    a = np.sin(2.0 * np.pi * (freq * i / mcfg.n_frames + phase))
    b = np.cos(2.0 * np.pi * (freq * i / mcfg.n_frames + phase))
    res = a[:, None, None] * u[None] + b[:, None, None] * w[None]
    pulse_freq = int(gen.integers(1, max(2, mcfg.n_frames // 2)))
    pulse_phase = float(gen.uniform(0.0, 1.0))
    pulse = np.sin(2.0 * np.pi * (pulse_freq * i / mcfg.n_frames + pulse_phase))
    res[:, 0, : mcfg.d_vt] += temporal_text_gain * pulse[:, None] * text[None, :]
    res -= res.mean(axis=0, keepdims=True)
    # force the frame sum to exact zero: the last residual is minus the rest
    res[-1] = -res[:-1].sum(axis=0)
    return res


def _flat_cos(a: np.ndarray, b: np.ndarray) -> float:
    fa, fb = a.ravel(), b.ravel()
    return float(np.dot(fa, fb) / (np.linalg.norm(fa) * np.linalg.norm(fb)))


def generate_prototypes(
    rng: RngStream, texts: dict[int, np.ndarray], scfg: StreamConfig, mcfg: ModelConfig
) -> dict[int, ClassPrototype]:
    # all scenes are small deviations from one shared backdrop, and the
    # classes of one task share a scene: appearance separates neither classes
    # within a task nor (strongly) the tasks, so class identity must be
    # carried by the dynamics
    ordered = sorted(texts)
    backdrop = rng.split("backdrop").normal((mcfg.tokens_per_frame, mcfg.d), scfg.static_scale)
    scenes: dict[int, np.ndarray] = {}
    protos: dict[int, ClassPrototype] = {}
    for position, class_id in enumerate(ordered):
        scene_id = position // scfg.classes_per_task
        if scene_id not in scenes:
            scenes[scene_id] = backdrop + rng.split("scene", scene_id).normal(
                (mcfg.tokens_per_frame, mcfg.d), scfg.scene_spread
            )
        static = scenes[scene_id] + rng.split("static", class_id).normal(
            (mcfg.tokens_per_frame, mcfg.d), scfg.class_static_scale
        )
        # plant the class text in the leading [CLS] channels: a clean static
        # cue, deliberately low-gain so appearance stays a weak discriminator
        static[0, : mcfg.d_vt] = scfg.text_gain * texts[class_id]
        for attempt in range(scfg.max_retries + 1):
            res = _signature(rng.split("signature", class_id, attempt), mcfg,
                             texts[class_id], scfg.temporal_text_gain)
            if all(abs(_flat_cos(res, p.residuals)) <= scfg.max_signature_cos for p in protos.values()):
                break
        else:
            raise GenerationError(
                f"no temporal signature for class {class_id} within {scfg.max_retries} retries"
            )
        protos[class_id] = ClassPrototype(class_id=class_id, static=static, residuals=res)
    return protos


def _sample(rng: RngStream, proto: ClassPrototype, scfg: StreamConfig) -> SyntheticVideo:
    frames = proto.static[None] + scfg.temporal_amplitude * proto.residuals
    if scfg.scene_jitter > 0:
        # frame-constant appearance wobble: shifts every frame of one clip the
        # same way, so it perturbs static pooling but never the dynamics
        frames = frames + rng.split("jitter").normal(frames.shape[1:], scfg.scene_jitter)[None]
    if scfg.noise_std > 0:
        frames = frames + rng.split("tokens").normal(frames.shape, scfg.noise_std)
    return SyntheticVideo(frames=frames, label=proto.class_id)


def generate_stream(seed: int, scfg: StreamConfig | None = None, mcfg: ModelConfig | None = None) -> TaskStream:
    """Build the full task stream: disjoint classes, fixed texts, seeded samples."""
    scfg = scfg if scfg is not None else StreamConfig()
    mcfg = mcfg if mcfg is not None else ModelConfig()
    if mcfg.d_vt > mcfg.d:
        raise ConfigError(["model.d_vt: text width cannot exceed token width d for this stream"])
    root = RngStream(seed).split("stream")
    class_ids = list(range(scfg.n_classes))
    texts = generate_text_embeddings(root, class_ids, mcfg.d_vt, scfg.max_text_cos, scfg.max_retries)
    protos = generate_prototypes(root, texts, scfg, mcfg)
    tasks = []
    for b in range(1, scfg.tasks + 1):
        ids = class_ids[(b - 1) * scfg.classes_per_task : b * scfg.classes_per_task]
        train: list[SyntheticVideo] = []
        eval_: list[SyntheticVideo] = []
        for class_id in ids:
            for i in range(scfg.train_per_class):
                train.append(_sample(root.split("sample", class_id, "train", i), protos[class_id], scfg))
            for i in range(scfg.eval_per_class):
                eval_.append(_sample(root.split("sample", class_id, "eval", i), protos[class_id], scfg))
        tasks.append(Task(task_id=b, class_ids=ids, train=train, eval=eval_))
    return TaskStream(seed=seed, stream_cfg=scfg, model_cfg=mcfg, tasks=tasks, prototypes=protos, texts=texts)
