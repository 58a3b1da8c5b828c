"""Mini-batch training with Adam, validation early stopping, seeded runs.

A batch is a set of dialogs; the batch loss is the mean over its utterances
of the per-utterance cross-entropy, with active tasks summed. All
randomness (parameter init, batch order, dropout) flows from the single
seed, so a run is a pure function of (corpus, configs, seed).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dialog, EmbeddingTable
from .metrics import ConfusionMatrix, Metrics, compute_metrics, confusion
from .model import ModelConfig, ParameterSet, forward_dialog, init_parameters
from .optim import AdamState, adam_step, clip_gradients
from .tensor import NumericError, Tape, Tensor, add, backward, bce_loss, scale

CSV_METRIC_COLUMNS = ("precision", "recall", "f1", "accuracy")


@dataclass
class TrainConfig:
    """Optimization knobs; lr=0 is legal (a no-op run for testing)."""

    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.lr < 0.0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, "
                                 f"got {getattr(self, name)}")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds "
                             f"max_epochs {self.max_epochs}")
        if self.grad_clip <= 0.0:
            raise ValueError(f"grad_clip must be positive, got {self.grad_clip}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_metrics: dict[str, Metrics]
    wall_seconds: float


@dataclass
class TrainHistory:
    """Per-epoch records; epochs are contiguous from 1.

    Wall time stays in memory only: exported rows and CSVs must be
    byte-identical across reruns of the same seed.
    """

    tasks: tuple[str, ...]
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord) -> None:
        expected = len(self.records) + 1
        if record.epoch != expected:
            raise ValueError(f"epochs must be contiguous: got {record.epoch}, "
                             f"expected {expected}")
        self.records.append(record)

    def rows(self) -> list[dict]:
        out = []
        for record in self.records:
            row: dict = {"epoch": record.epoch,
                         "train_loss": record.train_loss}
            for task in self.tasks:
                m = record.val_metrics[task]
                for name in CSV_METRIC_COLUMNS:
                    row[f"val_{task}_{name}"] = getattr(m, name)
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        columns = ["epoch", "train_loss"] + [
            f"val_{task}_{name}"
            for task in self.tasks for name in CSV_METRIC_COLUMNS
        ]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)


def macro_f1(metrics: dict[str, Metrics]) -> float:
    return sum(m.f1 for m in metrics.values()) / len(metrics)


def evaluate_split(config: ModelConfig, params: ParameterSet,
                   dialogs: list[Dialog],
                   embeddings: EmbeddingTable | None = None,
                   threshold: float = 0.5,
                   ) -> tuple[dict[str, ConfusionMatrix], dict[str, Metrics]]:
    """Threshold per-utterance probabilities and score every active task."""
    if len(dialogs) == 0:
        raise ValueError("evaluate_split needs at least one dialog")
    preds: dict[str, list[int]] = {task: [] for task in config.tasks}
    golds: dict[str, list[int]] = {task: [] for task in config.tasks}
    for dialog in dialogs:
        prediction = forward_dialog(config, params, dialog, embeddings,
                                    training=False)
        for task in config.tasks:
            for utt, prob in zip(dialog.utterances,
                                 prediction.probabilities[task]):
                preds[task].append(
                    1 if float(prob.data[0]) >= threshold else 0)
                golds[task].append(getattr(utt, task))
    matrices = {task: confusion(preds[task], golds[task])
                for task in config.tasks}
    return matrices, {task: compute_metrics(matrix)
                      for task, matrix in matrices.items()}


def _snapshot(params: ParameterSet) -> ParameterSet:
    copy = ParameterSet()
    for name, tensor in params.items():
        copy.register(name, Tensor(tensor.data.copy(), requires_grad=True))
    return copy


def _batch_loss(config: ModelConfig, params: ParameterSet,
                batch: list[Dialog], embeddings, training: bool,
                rng) -> Tensor:
    total = None
    count = 0
    for dialog in batch:
        prediction = forward_dialog(config, params, dialog, embeddings,
                                    training=training, rng=rng)
        for task in config.tasks:
            for utt, prob in zip(dialog.utterances,
                                 prediction.probabilities[task]):
                term = bce_loss(prob, getattr(utt, task))
                total = term if total is None else add(total, term)
        count += len(dialog.utterances)
    return scale(total, 1.0 / count)


def train(model_config: ModelConfig, train_dialogs: list[Dialog],
          val_dialogs: list[Dialog], train_config: TrainConfig,
          embeddings: EmbeddingTable | None = None,
          initial_params: ParameterSet | None = None,
          ) -> tuple[ParameterSet, TrainHistory]:
    """Optimize on the train split; keep the best validation-F1 parameters.

    The monitored score is the validation F1 of the positive class, macro
    averaged when both tasks are active. Training stops early once the
    score fails to improve for ``patience`` consecutive epochs. Returns the
    best parameter snapshot and the full epoch history.
    """
    if len(train_dialogs) == 0 or len(val_dialogs) == 0:
        raise ValueError("train needs non-empty train and validation splits")
    if model_config.uses_text and embeddings is None:
        raise ValueError("text modality requires an embedding table")

    rng = np.random.default_rng(train_config.seed)
    params = (initial_params if initial_params is not None
              else init_parameters(model_config, rng))
    named = params.as_dict()
    adam = AdamState(lr=train_config.lr)
    history = TrainHistory(tasks=model_config.tasks)
    # epoch 1 always improves on -inf, so the first epoch sets the snapshot
    best_params: ParameterSet | None = None
    best_score = float("-inf")
    stale = 0

    for epoch in range(1, train_config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_dialogs))
        loss_sum = 0.0
        utterances = 0
        for start in range(0, len(order), train_config.batch_size):
            batch = [train_dialogs[k]
                     for k in order[start:start + train_config.batch_size]]
            try:
                with Tape():
                    loss = _batch_loss(model_config, params, batch,
                                       embeddings, training=True, rng=rng)
                    value = float(loss.data)
                    if not np.isfinite(value):
                        raise NumericError("loss is not finite")
                    backward(loss)
                clip_gradients(named, train_config.grad_clip)
                adam_step(adam, named)
            except NumericError as exc:
                ordinal = start // train_config.batch_size + 1
                ids = ", ".join(d.dialog_id for d in batch)
                raise NumericError(
                    f"non-finite loss in epoch {epoch}, batch {ordinal} "
                    f"(dialogs {ids}): {exc}") from None
            batch_utts = sum(len(d.utterances) for d in batch)
            loss_sum += value * batch_utts
            utterances += batch_utts

        _, val_metrics = evaluate_split(model_config, params, val_dialogs,
                                        embeddings)
        history.append(EpochRecord(
            epoch=epoch, train_loss=loss_sum / utterances,
            val_metrics=val_metrics,
            wall_seconds=time.perf_counter() - started))
        score = macro_f1(val_metrics)
        if score > best_score:
            best_score = score
            best_params = _snapshot(params)
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                break
    return best_params, history
