"""Continual-learning driver.

Runs a task stream end to end: per-task mini-batch training of the shared
adapter stack and the task's expert, drift regularization against the frozen
previous-task adapter state, task-end snapshotting (expert freeze, anchors,
channel importance, adapter copy), full-stream evaluation after every task,
and the Acc / BWF metrics. Ablation presets toggle the adapter, the expert
mixture, and the distillation strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .backbone import AdapterParams, FrozenBackboneWeights, encode_tokens
from .datagen import StreamConfig, Task, TaskStream, generate_stream
from .errors import ConfigError, DivergenceError, ShapeError
from .expert import ExpertBank, ExpertParams, clone_and_freeze, encode_spatiotemporal
from .fssd import (
    ImportanceTable,
    accumulate_importance,
    channel_importance,
    compute_channel_stats,
    fssd_loss,
    l2_normalize_rows,
)
from .losses import LossConfig, label_mask, similarity_matrix, symmetric_contrastive, total_loss
from .nncore import ModelConfig, sgd_step, zero_grads
from .rng import RngStream
from .tdmoe import (
    AnchorPool,
    build_anchors,
    classify,
    fuse,
    route_scores_from_outputs,
    route_spatial,
    route_uniform,
)

ROUTING_STRATEGIES = ("td", "avg", "spatial", "oracle")
DISTILL_STRATEGIES = ("none", "uniform", "fssd")

# Ablation presets: which trainable pieces exist and how drift is penalized.
PRESETS = {
    "idx1": {"use_adapter": False, "use_moe": False, "distill": "none"},
    "idx2": {"use_adapter": True, "use_moe": False, "distill": "fssd"},
    "idx3": {"use_adapter": False, "use_moe": True, "distill": "none"},
    "idx4": {"use_adapter": True, "use_moe": True, "distill": "none"},
    "idx5": {"use_adapter": True, "use_moe": True, "distill": "fssd"},
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs_first: int = 40
    epochs_later: int = 20
    batch_size: int = 16
    fssd_weight: float = 1e4
    temperature: float = 0.3
    epsilon: float = 1e-8
    routing: str = "td"
    distill: str = "fssd"
    use_adapter: bool = True
    use_moe: bool = True
    seed: int = 7

    def __post_init__(self):
        problems = []
        if not self.learning_rate > 0:
            problems.append(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("epochs_first", "epochs_later", "batch_size"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                problems.append(f"{name} must be a positive integer, got {v!r}")
        if self.fssd_weight < 0:
            problems.append(f"fssd_weight must be non-negative, got {self.fssd_weight}")
        if not self.temperature > 0:
            problems.append(f"temperature must be positive, got {self.temperature}")
        if not self.epsilon > 0:
            problems.append(f"epsilon must be positive, got {self.epsilon}")
        # "oracle" scores the true task's expert 1 and the rest 0; it is a
        # diagnostic upper bound, deliberately not reachable from the CLI
        if self.routing not in ROUTING_STRATEGIES:
            problems.append(f"routing must be one of {ROUTING_STRATEGIES}, got {self.routing!r}")
        if self.distill not in DISTILL_STRATEGIES:
            problems.append(f"distill must be one of {DISTILL_STRATEGIES}, got {self.distill!r}")
        if not (isinstance(self.seed, int) and self.seed >= 0):
            problems.append(f"seed must be a non-negative integer, got {self.seed!r}")
        if problems:
            raise ConfigError(problems)

    def loss_config(self) -> LossConfig:
        return LossConfig(temperature=self.temperature, epsilon=self.epsilon, fssd_weight=self.fssd_weight)


def make_train_config(preset: str | None = None, **overrides) -> TrainConfig:
    """TrainConfig from an optional preset plus field overrides (overrides win)."""
    fields: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"unknown preset {preset!r}; choose from {sorted(PRESETS)}"])
        fields.update(PRESETS[preset])
    fields.update(overrides)
    return TrainConfig(**fields)


@dataclass
class ModelState:
    """Everything a run accumulates: weights, frozen snapshots, side tables."""

    model_cfg: ModelConfig
    train_cfg: TrainConfig
    backbone: FrozenBackboneWeights
    adapters: AdapterParams
    bank: ExpertBank = field(default_factory=ExpertBank)
    anchors: AnchorPool = field(default_factory=AnchorPool)
    importance: ImportanceTable | None = None
    prev_adapters: AdapterParams | None = None
    completed_tasks: int = 0
    curves: dict[int, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.importance is None:
            self.importance = ImportanceTable(self.model_cfg.d_vt)


def init_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> ModelState:
    backbone = FrozenBackboneWeights.random(train_cfg.seed, model_cfg)
    adapters = AdapterParams.init(train_cfg.seed, model_cfg)
    if not train_cfg.use_adapter:
        # up-projections start at zero, so a frozen adapter stack contributes
        # exactly nothing: the backbone path stays bit-identical to frozen-only
        adapters = adapters.clone(trainable=False)
    return ModelState(model_cfg=model_cfg, train_cfg=train_cfg, backbone=backbone, adapters=adapters)


def _spatial_means(frames: np.ndarray, state: ModelState, adapters: AdapterParams) -> Tensor:
    """Per-video mean frame feature, (B, d_vt), differentiable."""
    return encode_tokens(frames, state.backbone, adapters).mean(axis=-2)


def train_task(state: ModelState, stream: TaskStream, task: Task) -> ModelState:
    """Train task b's objective, then snapshot: freeze the expert into the
    bank, store class anchors and importance rows, and copy the adapter
    stack as the next task's drift reference."""
    b = task.task_id
    if b != state.completed_tasks + 1:
        raise ValueError(f"tasks must be trained in order; expected {state.completed_tasks + 1}, got {b}")
    tcfg = state.train_cfg
    lcfg = tcfg.loss_config()

    params: list[Tensor] = []
    if tcfg.use_adapter:
        params += state.adapters.parameters()
    expert = None
    if tcfg.use_moe:
        expert = ExpertParams.init(tcfg.seed, state.model_cfg, task_id=b)
        params += expert.parameters()

    videos = task.train
    labels = np.array([v.label for v in videos])
    frames_all = np.stack([v.frames for v in videos])
    text_rows = np.stack([stream.texts[int(c)] for c in labels])

    # Drift penalty is active from task 2 on; its reference features come
    # from the frozen end-of-previous-task adapter state and never change
    # within the task, so compute them once.
    distill_active = tcfg.distill != "none" and b > 1
    weights = None
    prev_vbar_all = None
    if distill_active:
        if tcfg.distill == "fssd":
            weights = np.array(state.importance.accumulated)
        else:
            weights = np.ones(state.model_cfg.d_vt)
        with no_grad():
            prev_vbar_all = _spatial_means(frames_all, state, state.prev_adapters).data

    curve: list[float] = []
    n_epochs = (tcfg.epochs_first if b == 1 else tcfg.epochs_later) if params else 0
    shuffle_rng = RngStream(tcfg.seed).split("harness", "shuffle", b)
    for epoch in range(1, n_epochs + 1):
        order = shuffle_rng.split(epoch).gen().permutation(len(videos))
        batch_losses = []
        for start in range(0, len(videos), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            zero_grads(params)
            feats = encode_tokens(frames_all[idx], state.backbone, state.adapters)
            vbar = feats.mean(axis=-2)
            mask = label_mask(labels[idx], labels[idx])
            l_s = symmetric_contrastive(similarity_matrix(vbar, text_rows[idx]), mask, lcfg)
            l_st = 0.0
            if expert is not None:
                vst, _ = encode_spatiotemporal(feats, expert)
                l_st = symmetric_contrastive(similarity_matrix(vst, text_rows[idx]), mask, lcfg)
            l_fssd = fssd_loss(prev_vbar_all[idx], vbar, weights) if distill_active else None
            loss = total_loss(l_st, l_s, l_fssd, lcfg)
            value = float(loss.data)
            if not np.isfinite(value):
                last_good = curve[-1] if curve else None
                raise DivergenceError(b, epoch, f"last finite epoch-mean loss: {last_good}")
            loss.backward()
            sgd_step(params, tcfg.learning_rate)
            batch_losses.append(value)
        curve.append(float(np.mean(batch_losses)))
    state.curves[b] = curve

    if expert is not None:
        by_class: dict[int, list] = {}
        for v in videos:
            by_class.setdefault(v.label, []).append(v)
        for entry in build_anchors(by_class, b, state.backbone, state.adapters, expert):
            state.anchors.add(entry)
        state.bank.add(clone_and_freeze(expert))

    # importance rows for task b's classes, scored on unit-normalized features
    rows: dict[int, np.ndarray] = {}
    with no_grad():
        for c in task.class_ids:
            class_frames = np.stack([v.frames for v in videos if v.label == c])
            feats = _spatial_means(class_frames, state, state.adapters).data
            stats = compute_channel_stats(l2_normalize_rows(feats))
            rows[c] = channel_importance(stats, stream.texts[c])
    accumulate_importance(state.importance, rows)

    state.prev_adapters = state.adapters.clone(trainable=False)
    state.completed_tasks = b
    return state


@dataclass
class EvalRow:
    """One evaluation sweep: per-task accuracies plus routing bookkeeping."""

    accuracies: list[float]
    routing_hits: int
    routing_total: int

    def hit_rate(self) -> float | None:
        if self.routing_total == 0:
            return None
        return self.routing_hits / self.routing_total


def _routing_scores(state: ModelState, vbar, vst_by_task, true_task: int, strategy: str):
    if strategy == "td":
        return route_scores_from_outputs(vbar, vst_by_task, state.anchors)
    if strategy == "avg":
        return route_uniform(list(vst_by_task))
    if strategy == "spatial":
        return route_spatial(vbar, list(vst_by_task), state.anchors)
    if strategy == "oracle":
        return {k: (1.0 if k == true_task else 0.0) for k in vst_by_task}
    raise ConfigError([f"routing must be one of {ROUTING_STRATEGIES}, got {strategy!r}"])


def evaluate_all(state: ModelState, stream: TaskStream, upto: int | None = None, routing: str | None = None) -> EvalRow:
    """Accuracy on every task's eval set up to `upto`, classifying against all
    classes seen by then. A routing hit means the eval sample's own task
    received the highest score (ties to the lowest task id)."""
    if upto is None:
        upto = state.completed_tasks
    if not 1 <= upto <= len(stream.tasks):
        raise ValueError(f"upto must be in [1, {len(stream.tasks)}], got {upto}")
    strategy = routing if routing is not None else state.train_cfg.routing
    seen_texts = {c: stream.texts[c] for c in stream.classes_up_to(upto)}
    accuracies: list[float] = []
    hits = 0
    total_routed = 0
    for task in stream.tasks[:upto]:
        frames = np.stack([v.frames for v in task.eval])
        with no_grad():
            feats = encode_tokens(frames, state.backbone, state.adapters).data
            vbars = feats.mean(axis=-2)
            vst_by_task = {}
            if state.train_cfg.use_moe and len(state.bank):
                for e in state.bank:
                    vst_by_task[e.task_id] = encode_spatiotemporal(Tensor(feats), e)[0].data
        correct = 0
        for i, video in enumerate(task.eval):
            if vst_by_task:
                outputs = {k: v[i] for k, v in vst_by_task.items()}
                scores = _routing_scores(state, vbars[i], outputs, task.task_id, strategy)
                best = max(scores.values())
                picked = min(k for k in sorted(scores) if scores[k] == best)
                hits += int(picked == task.task_id)
                total_routed += 1
                fused = fuse(vbars[i], outputs, scores)
            else:
                fused = vbars[i]
            correct += int(classify(fused, seen_texts) == video.label)
        accuracies.append(correct / len(task.eval))
    return EvalRow(accuracies=accuracies, routing_hits=hits, routing_total=total_routed)


class AccuracyMatrix:
    """Lower-triangular A[i][j]: accuracy on task j's eval set after training
    task i. Indices are 1-based to match the metric definitions."""

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValueError(f"need at least one task, got {n_tasks}")
        self.n_tasks = n_tasks
        self.values = np.full((n_tasks, n_tasks), np.nan)

    def set_row(self, i: int, accuracies) -> None:
        accs = [float(a) for a in accuracies]
        if not 1 <= i <= self.n_tasks:
            raise ValueError(f"row {i} out of range 1..{self.n_tasks}")
        if len(accs) != i:
            raise ShapeError(f"row {i} needs {i} entries, got {len(accs)}")
        for a in accs:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy {a} outside [0, 1]")
        self.values[i - 1, : len(accs)] = accs

    def entry(self, i: int, j: int) -> float:
        if not 1 <= j <= i <= self.n_tasks:
            raise ValueError(f"entry ({i}, {j}) is outside the lower triangle")
        v = self.values[i - 1, j - 1]
        if np.isnan(v):
            raise ValueError(f"entry ({i}, {j}) has not been filled")
        return float(v)

    def row(self, i: int) -> list[float]:
        return [self.entry(i, j) for j in range(1, i + 1)]


def compute_acc(matrix: AccuracyMatrix, stream: TaskStream) -> float:
    """Final accuracy over all seen classes: last row, sample-weighted."""
    b = matrix.n_tasks
    counts = np.array([len(task.eval) for task in stream.tasks[:b]], dtype=np.float64)
    row = np.array(matrix.row(b))
    return float((row * counts).sum() / counts.sum())


def compute_bwf(matrix: AccuracyMatrix) -> float:
    """Mean drop from each task's just-trained accuracy to its final accuracy."""
    b = matrix.n_tasks
    if b == 1:
        return 0.0
    drops = [matrix.entry(j, j) - matrix.entry(b, j) for j in range(1, b)]
    return float(np.mean(drops))


@dataclass
class MetricsReport:
    acc: float
    bwf: float
    matrix: AccuracyMatrix
    curves: dict[int, list[float]]
    param_counts: dict[str, int]
    routing_hit_rate: float | None
    train_cfg: TrainConfig
    n_tasks: int

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "bwf": self.bwf,
            "final_accuracies": self.matrix.row(self.n_tasks),
            "accuracy_matrix": [self.matrix.row(i) for i in range(1, self.n_tasks + 1)],
            "per_task_curves": {str(b): curve for b, curve in sorted(self.curves.items())},
            "param_counts": dict(self.param_counts),
            "routing_hit_rate": self.routing_hit_rate,
            "routing": self.train_cfg.routing,
            "distill": self.train_cfg.distill,
            "use_adapter": self.train_cfg.use_adapter,
            "use_moe": self.train_cfg.use_moe,
            "seed": self.train_cfg.seed,
            "n_tasks": self.n_tasks,
        }


def param_counts(state: ModelState) -> dict[str, int]:
    per_expert = state.bank.experts[0].param_count() if len(state.bank) else 0
    return {
        "backbone_frozen": state.backbone.param_count(),
        "adapter_trainable": state.adapters.param_count() if state.train_cfg.use_adapter else 0,
        "per_expert": per_expert,
        "n_experts": len(state.bank),
        "experts_total": per_expert * len(state.bank),
    }


def train_sequence(stream: TaskStream, train_cfg: TrainConfig) -> tuple[ModelState, AccuracyMatrix, EvalRow]:
    """Train every task in order, evaluating after each; returns the final
    state, the filled accuracy matrix, and the last evaluation row."""
    state = init_state(stream.model_cfg, train_cfg)
    matrix = AccuracyMatrix(len(stream.tasks))
    last_row: EvalRow | None = None
    for task in stream.tasks:
        train_task(state, stream, task)
        last_row = evaluate_all(state, stream)
        matrix.set_row(task.task_id, last_row.accuracies)
    return state, matrix, last_row


def run_sequence(stream: TaskStream, train_cfg: TrainConfig) -> MetricsReport:
    state, matrix, last_row = train_sequence(stream, train_cfg)
    return MetricsReport(
        acc=compute_acc(matrix, stream),
        bwf=compute_bwf(matrix),
        matrix=matrix,
        curves=dict(state.curves),
        param_counts=param_counts(state),
        routing_hit_rate=last_row.hit_rate(),
        train_cfg=train_cfg,
        n_tasks=len(stream.tasks),
    )


def run_preset(
    name: str,
    seed: int = 7,
    stream_cfg: StreamConfig | None = None,
    model_cfg: ModelConfig | None = None,
    **overrides,
) -> MetricsReport:
    """Run one ablation preset on a freshly generated stream."""
    tcfg = make_train_config(name, seed=seed, **overrides)
    stream = generate_stream(seed, stream_cfg, model_cfg)
    return run_sequence(stream, tcfg)
