"""Mini-batch training with Adam, BCE and best-validation snapshot selection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .evaluator import EvalReport, evaluate
from .feature_store import N_CLASSES, stack_frames
from .model import FrameModel, ModelConfig
from .nn import Adam, NumericalError, bce_with_logits

log = logging.getLogger(__name__)

FULL_MODALITIES = ["image", "audio", "action", "subtitle", "video_theme"]


class TrainError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 1536
    epochs: int = 30
    n_classes: int = N_CLASSES
    seed: int = 0
    modalities: list = field(default_factory=lambda: list(FULL_MODALITIES))
    fused_dim: int = 1024
    hidden: int = 1024
    n_experts: int = 3
    fusion: str = "maf"
    modal_dropout_p: float = 0.25

    def validate(self):
        if self.batch_size < 2:
            raise TrainError("batch_size must be >= 2 (batch norm)")
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        if not self.modalities:
            raise TrainError("no modalities selected")
        return self

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# Desk-scale settings for the small synthetic preset. The full-scale defaults
# above (fused 1024, hidden 1024, batch 1536, lr 1e-4) take only a handful of
# steps per epoch on a few thousand frames.
SMALL_TRAIN = dict(learning_rate=3e-3, batch_size=256, epochs=30, fused_dim=64, hidden=64)


def train_config(preset: str | None = None, **overrides) -> TrainConfig:
    base = dict(SMALL_TRAIN) if preset == "small" else {}
    if preset not in (None, "small", "full", "default"):
        raise TrainError(f"unknown train preset {preset!r}")
    base.update(overrides)
    return TrainConfig(**base).validate()


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_correlation: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_correlation(self):
        return self.val_correlation[self.best_epoch] if self.best_epoch >= 0 else float("nan")

    def to_json(self):
        return {
            "train_loss": self.train_loss,
            "val_correlation": self.val_correlation,
            "best_epoch": self.best_epoch,
            "best_correlation": self.best_correlation,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def fit(model, inputs, targets, config: TrainConfig, validate: Callable[[object], float]):
    """Shared loop: shuffled mini-batches, BCE on sigmoid logits, Adam, snapshots.

    ``model`` provides ``logits(inputs, rng)``, ``backward_logits(do)`` and the
    Module parameter API. ``validate(model)`` returns the metric maximised by
    snapshot selection (ties keep the earliest epoch).
    """
    n = targets.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(2,)))
    opt = Adam(learning_rate=config.learning_rate)
    params = model.parameters()
    grads = model.gradients()
    report = TrainReport()
    best_state = None
    for epoch in range(config.epochs):
        model.train()
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            if idx.size < 2:
                continue
            model.zero_grad()
            o = model.logits([x[idx] for x in inputs], rng)
            loss, _, do = bce_with_logits(o, targets[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step offset {start}")
            model.backward_logits(do)
            opt.step(params, grads)
            losses.append(loss)
        model.eval()
        score = float(validate(model))
        report.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        report.val_correlation.append(score)
        if best_state is None or score > report.val_correlation[report.best_epoch]:
            report.best_epoch = epoch
            best_state = model.state_dict()
        log.info("epoch %d loss %.6f val %.5f", epoch, report.train_loss[-1], score)
    model.load_state_dict(best_state)
    model.eval()
    return model, report, opt


def split_records(records, split):
    return [r for r in records if r.split == split]


def predict_records(model: FrameModel, records, modalities=None) -> dict:
    modalities = modalities or model.config.modalities
    xs, _, off = stack_frames(records, modalities)
    p = model.predict(xs)
    return {r.video_id: p[off[i]:off[i + 1]] for i, r in enumerate(records)}


def evaluate_records(model: FrameModel, records) -> EvalReport:
    preds = predict_records(model, records)
    return evaluate(preds, {r.video_id: r.labels.values for r in records})


def train(records, config: TrainConfig):
    """Train the frame-level model; returns (model, report, optimizer)."""
    config.validate()
    train_recs = split_records(records, "train")
    val_recs = split_records(records, "validation")
    if not train_recs:
        raise TrainError("dataset has no train split")
    if not val_recs:
        raise TrainError("dataset has no validation split")
    xs, y, _ = stack_frames(train_recs, config.modalities)
    val_xs, _, val_off = stack_frames(val_recs, config.modalities)
    val_labels = {r.video_id: r.labels.values for r in val_recs}

    mcfg = ModelConfig(
        modalities=list(config.modalities), dims=[x.shape[1] for x in xs],
        fused_dim=config.fused_dim, hidden=config.hidden, n_experts=config.n_experts,
        fusion=config.fusion, modal_dropout_p=config.modal_dropout_p,
        n_classes=config.n_classes)
    model = FrameModel(mcfg, seed=config.seed)

    def validate(m):
        p = m.predict(val_xs)
        preds = {r.video_id: p[val_off[i]:val_off[i + 1]] for i, r in enumerate(val_recs)}
        return evaluate(preds, val_labels).overall

    return fit(model, xs, y, config, validate)
