"""Two-stage training: representation learning, then classifier re-training.

Stage 1 draws instance-balanced batches and updates every parameter. Stage 2
freezes the backbone and re-trains the classifier on batches from a
re-balancing sampler, still under the configured loss (noise stays on).
Cloud sizes always come from the original training profile.

Iterations are counted globally: stage 1 covers ``[0, I0)`` and stage 2
``[I0, I0 + I1)``; the learning-rate schedule uses the global counter. Each
stage has its own random stream derived from the seed, and stage 2 starts
from a fresh momentum buffer.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import TrainerState, load_checkpoint, save_checkpoint
from .datagen import ClassProfile, Dataset
from .errors import ConfigurationError, InvalidArgumentError, NumericalError
from .losses import (
    GaussianCloudConfig,
    LossSpec,
    adjusted_logits,
    adjusted_logits_backward,
    cosine_scores,
    cosine_scores_backward,
    grad_wrt_logits,
    softmax_ce,
)
from .model import Model, backward, forward, init_model, sgd_step
from .numerics import Rng
from .sampling import SamplerSpec, draw_batch, sampling_probabilities
from .schedules import cloud_schedule

log = logging.getLogger(__name__)

# spawn keys for the streams derived from a run seed
STREAM_DATA, STREAM_INIT, STREAM_STAGE1, STREAM_STAGE2 = 1, 2, 3, 4


@dataclass
class TrainConfig:
    stage1_iters: int = 3000
    stage2_iters: int = 500
    batch_size: int = 64
    lr: float = 0.1
    milestones: tuple = (2500,)
    gamma: float = 0.2
    warmup: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    loss: str = "gcl-e"
    scale: float = 30.0
    schedule: str = "log"
    sampler: str = "cbs"
    shared_epsilon: bool = True
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ConfigurationError("iteration counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        if not self.lr > 0:
            raise ConfigurationError("learning rate must be positive")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigurationError("milestones must be strictly increasing")
        total = self.stage1_iters + self.stage2_iters
        if self.milestones and self.milestones[-1] >= total and total > 0:
            raise ConfigurationError(f"milestones must be < {total}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.warmup < 0:
            raise ConfigurationError("warmup must be non-negative")

    @property
    def total_iters(self) -> int:
        return self.stage1_iters + self.stage2_iters

    def loss_spec(self, profile: ClassProfile) -> LossSpec:
        spec = LossSpec.parse(self.loss, scale=self.scale,
                              cloud=GaussianCloudConfig(shared=self.shared_epsilon))
        if spec.is_gcl:
            spec = LossSpec(spec.family, spec.margin, spec.scale, spec.cloud,
                            cloud_schedule(profile, self.schedule))
        return spec

    def sampler_spec(self) -> SamplerSpec:
        return SamplerSpec.parse(self.sampler)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Linear warmup to the base rate, then decay by ``gamma`` at each milestone."""
    if iteration < 0:
        raise InvalidArgumentError("iteration must be non-negative")
    if config.warmup and iteration < config.warmup:
        return config.lr * iteration / config.warmup
    passed = sum(1 for m in config.milestones if iteration >= m)
    return config.lr * config.gamma ** passed


@dataclass
class StepResult:
    loss: float
    grads: dict
    logits: object
    features: np.ndarray


def loss_and_grads(model: Model, spec: LossSpec, inputs, labels, profile: ClassProfile,
                   rng: Rng | None = None, epsilon=None) -> StepResult:
    """Forward, loss and full backward pass for one batch in training mode."""
    features, cache = forward(model, inputs)
    W = model.classifier
    if spec.uses_cosine:
        scores = cosine_scores(features, W)
    else:
        scores = features @ W
    perturbed = adjusted_logits(spec, scores, labels, profile, rng, training=True, epsilon=epsilon)
    loss, probs = softmax_ce(perturbed, labels)
    g_logits = grad_wrt_logits(probs, labels)
    g_scores = adjusted_logits_backward(spec, perturbed, g_logits)
    if spec.uses_cosine:
        g_f, g_w = cosine_scores_backward(features, W, g_scores)
    else:
        g_f, g_w = g_scores @ W.T, features.T @ g_scores
    grads = backward(model, cache, g_f, g_w)
    return StepResult(loss, grads, perturbed, features)


def eval_logits(model: Model, spec: LossSpec, inputs) -> np.ndarray:
    features, _ = forward(model, inputs)
    if spec.uses_cosine:
        return spec.scale * cosine_scores(features, model.classifier)
    return features @ model.classifier


@dataclass
class Trainer:
    """Mutable state of one training run; checkpointable at any iteration."""

    config: TrainConfig
    data: Dataset
    model: Model
    iteration: int = 0
    velocity: dict | None = None
    rngs: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.data.num_classes != self.model.num_classes:
            raise ConfigurationError(
                f"data has {self.data.num_classes} classes, model has {self.model.num_classes}")
        self.spec = self.config.loss_spec(self.data.profile)
        root = Rng(self.config.seed)
        self.rngs.setdefault(1, root.spawn(STREAM_STAGE1))
        self.rngs.setdefault(2, root.spawn(STREAM_STAGE2))
        if self.velocity is None:
            self.velocity = self.model.zeros_like()
        self._probs = {
            1: sampling_probabilities(self.data.profile, SamplerSpec("ibs"), self.data.labels),
            2: sampling_probabilities(self.data.profile, self.config.sampler_spec(), self.data.labels),
        }

    @property
    def stage(self) -> int:
        return 1 if self.iteration < self.config.stage1_iters else 2

    @property
    def done(self) -> bool:
        return self.iteration >= self.config.total_iters

    def step(self) -> float:
        cfg = self.config
        stage = self.stage
        if stage == 2 and self.iteration == cfg.stage1_iters:
            self.velocity = self.model.zeros_like()
        rng = self.rngs[stage]
        lr = lr_at(cfg, self.iteration)
        idx = draw_batch(self._probs[stage], cfg.batch_size, rng)
        labels = self.data.labels[idx]
        result = loss_and_grads(self.model, self.spec, self.data.inputs[idx], labels,
                                self.data.profile, rng)
        if not np.isfinite(result.loss):
            raise NumericalError(
                f"non-finite loss at iteration {self.iteration} (lr={lr:g})",
                iteration=self.iteration, lr=lr)
        if lr > 0:
            sgd_step(self.model, result.grads, lr, cfg.momentum, self.velocity,
                     freeze_backbone=(stage == 2), weight_decay=cfg.weight_decay)
        self.loss_trace.append(result.loss)
        self.iteration += 1
        return result.loss

    def run(self, stop: int | None = None) -> Trainer:
        stop = self.config.total_iters if stop is None else min(stop, self.config.total_iters)
        while self.iteration < stop:
            loss = self.step()
            if self.iteration % 500 == 0:
                log.info("iter %d stage %d loss %.4f", self.iteration, self.stage, loss)
        return self

    def state(self, meta: dict | None = None) -> TrainerState:
        return TrainerState(
            iteration=self.iteration,
            velocity=self.velocity,
            rng_states={k: r.get_state() for k, r in self.rngs.items()},
            loss_trace=list(self.loss_trace),
            config=self.config.to_dict(),
            seed=self.config.seed,
            meta=dict(meta or {}),
        )

    def save(self, path, meta: dict | None = None) -> Path:
        return save_checkpoint(path, self.model, self.state(meta))

    @classmethod
    def resume(cls, path, data: Dataset, config: TrainConfig | None = None) -> Trainer:
        """Continue a run from a checkpoint; the config defaults to the stored one."""
        model, state = load_checkpoint(path)
        if config is None:
            config = TrainConfig(**state.config)
        return cls(config, data, model, iteration=state.iteration, velocity=state.velocity,
                   rngs={k: Rng.from_state(s) for k, s in state.rng_states.items()},
                   loss_trace=list(state.loss_trace))


def train_stage1(config: TrainConfig, data: Dataset, model: Model):
    """Run stage 1 in place; returns ``(model, loss_trace)``."""
    trainer = Trainer(config, data, model).run(stop=config.stage1_iters)
    return trainer.model, trainer.loss_trace


def retrain_classifier(config: TrainConfig, data: Dataset, model: Model) -> Model:
    """Run stage 2 (classifier only) on a stage-1 model, in place."""
    trainer = Trainer(config, data, model, iteration=config.stage1_iters)
    trainer.run()
    return trainer.model


def build_model(config: TrainConfig, input_dim: int, hidden, feature_dim: int, num_classes: int) -> Model:
    return init_model(input_dim, hidden, feature_dim, num_classes, Rng(config.seed).spawn(STREAM_INIT))


# -- evaluation ---------------------------------------------------------------

DEFAULT_THRESHOLDS = (100, 20)


def assign_groups(train_profile: ClassProfile, thresholds=DEFAULT_THRESHOLDS):
    """Split classes into head / middle / tail by training count.

    head: n > head_min; middle: mid_min < n <= head_min; tail: n <= mid_min.
    If no class exceeds ``head_min`` the classes are split into thirds by
    count instead. Returns ``(groups, rule)``.
    """
    head_min, mid_min = thresholds
    n = np.asarray(train_profile.counts)
    if np.any(n > head_min):
        groups = {
            "head": np.flatnonzero(n > head_min).tolist(),
            "middle": np.flatnonzero((n > mid_min) & (n <= head_min)).tolist(),
            "tail": np.flatnonzero(n <= mid_min).tolist(),
        }
        return groups, f"absolute:{head_min}/{mid_min}"
    order = np.argsort(-n, kind="stable")
    thirds = np.array_split(order, 3)
    groups = {name: sorted(part.tolist()) for name, part in zip(("head", "middle", "tail"), thirds)}
    return groups, "quantile:thirds"


@dataclass
class MetricsReport:
    overall: float
    per_class: np.ndarray
    class_support: np.ndarray
    train_counts: tuple
    groups: dict
    group_accuracy: dict
    group_rule: str
    confusion: np.ndarray
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def to_text(self) -> str:
        lines = [f"seed={self.seed}", f"overall_accuracy={self.overall:.6f}", f"group_rule={self.group_rule}"]
        for name in ("head", "middle", "tail"):
            acc = self.group_accuracy[name]
            classes = ",".join(str(c) for c in self.groups[name])
            lines.append(f"{name}_accuracy={acc:.6f}")
            lines.append(f"{name}_classes={classes}")
        for key, value in self.config.items():
            lines.append(f"config.{key}={value}")
        lines.append("")
        lines.append("class\ttrain_count\ttest_count\taccuracy")
        for c, acc in enumerate(self.per_class):
            lines.append(f"{c}\t{self.train_counts[c]}\t{int(self.class_support[c])}\t{acc:.6f}")
        return "\n".join(lines) + "\n"

    def rows(self):
        """Per-class rows for plotting: class, group, train_count, test_count, accuracy."""
        group_of = {c: g for g, members in self.groups.items() for c in members}
        return [
            {"class": c, "group": group_of[c], "train_count": self.train_counts[c],
             "test_count": int(self.class_support[c]), "accuracy": float(acc)}
            for c, acc in enumerate(self.per_class)
        ]

    def summary(self) -> dict:
        return {"overall": self.overall, **{f"{g}": a for g, a in self.group_accuracy.items()}}


def evaluate(model: Model, data: Dataset, spec: LossSpec, train_profile: ClassProfile,
             group_thresholds=DEFAULT_THRESHOLDS, config: dict | None = None,
             seed: int | None = None) -> MetricsReport:
    """Top-1 accuracy from noise-free, margin-free logits."""
    if len(data) == 0:
        raise InvalidArgumentError("cannot evaluate an empty dataset")
    logits = eval_logits(model, spec, data.inputs)
    return report_from_predictions(np.argmax(logits, axis=1), data.labels, train_profile,
                                   group_thresholds, config, seed)


def report_from_predictions(pred, labels, train_profile: ClassProfile,
                            group_thresholds=DEFAULT_THRESHOLDS, config=None, seed=None) -> MetricsReport:
    C = train_profile.num_classes
    labels = np.asarray(labels)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    support = confusion.sum(axis=1)
    correct = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, correct / np.maximum(support, 1), np.nan)
    overall = float(correct.sum() / support.sum())
    groups, rule = assign_groups(train_profile, group_thresholds)
    group_acc = {
        g: float(np.nanmean(per_class[members])) if members else float("nan")
        for g, members in groups.items()
    }
    return MetricsReport(overall, per_class, support, train_profile.counts, groups, group_acc,
                         rule, confusion, dict(config or {}), seed)


def write_metrics(report: MetricsReport, out_dir) -> None:
    out_dir = Path(out_dir)
    atomic_write_text(out_dir / "metrics.txt", report.to_text())
    rows = report.rows()
    atomic_write_csv(out_dir / "metrics_per_class.csv", list(rows[0]), rows)
    summary = {"seed": report.seed, "loss": report.config.get("loss", ""),
               "sampler": report.config.get("sampler", ""),
               "stage2_iters": report.config.get("stage2_iters", ""), **report.summary()}
    atomic_write_csv(out_dir / "metrics.csv", list(summary), [summary])


def export_embeddings(model: Model, data: Dataset, path) -> Path:
    """Write ``label,f0..f{D-1}`` rows of backbone features in dataset order."""
    path = Path(path)
    header = ["label"] + [f"f{i}" for i in range(model.feature_dim)]
    if len(data):
        features, _ = forward(model, data.inputs)
    else:
        features = np.zeros((0, model.feature_dim))
    rows = ([int(y)] + [repr(float(v)) for v in f] for y, f in zip(data.labels, features))
    atomic_write_csv(path, header, rows, dict_rows=False)
    return path


def write_loss_trace(trace, path) -> None:
    rows = ({"iteration": i, "loss": repr(float(v))} for i, v in enumerate(trace))
    atomic_write_csv(Path(path), ["iteration", "loss"], rows)


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def atomic_write_csv(path: Path, header, rows, dict_rows=True) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        if dict_rows:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
        else:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    tmp.replace(path)
