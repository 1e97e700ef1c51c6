"""Training loop: Adam optimization with fixed steps per epoch, learning-rate
decay, per-epoch history capture, and repeated-experiment averaging.

The loop runs eagerly; at benchmark scale the cost is dominated by the
convolutions themselves and eager execution keeps gradient bookkeeping and
determinism straightforward.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .augment import AugmentationConfig, augment_stream, preprocessed_batches
from .dataset import DatasetSplits, LabeledDataset
from .errors import ConfigurationError, TrainingDivergedError
from .model_zoo import ArchitectureSpec, ModelHandle, build_model
from .preprocess import PreprocessConfig

log = logging.getLogger(__name__)

LR_POLICIES = ("plateau", "fixed_step")

_determinism_enabled = False


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 300
    train_steps_per_epoch: int = 159
    val_steps_per_epoch: int = 109
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    lr_initial: float = 1e-5
    lr_floor: float = 1e-6
    lr_decay_policy: str = "plateau"
    plateau_patience: int = 10
    decay_factor: float = 0.1
    fixed_decay_epoch: int = 150
    l2_coefficient: float = 1e-4
    repetitions: int = 3
    seed: int = 1234
    deterministic: bool = True

    def __post_init__(self):
        if self.lr_floor > self.lr_initial:
            raise ConfigurationError("lr_floor must not exceed lr_initial")
        if min(self.batch_size, self.train_steps_per_epoch, self.val_steps_per_epoch) < 1:
            raise ConfigurationError("batch size and steps per epoch must be positive")
        if self.epochs < 0 or self.repetitions < 1:
            raise ConfigurationError("epochs must be >= 0 and repetitions >= 1")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not 0 < beta < 1:
                raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.lr_decay_policy not in LR_POLICIES:
            raise ConfigurationError(f"unknown lr decay policy {self.lr_decay_policy!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


HISTORY_COLUMNS = (
    "epoch",
    "train_loss",
    "train_accuracy",
    "val_loss",
    "val_accuracy",
    "learning_rate",
)


@dataclass(frozen=True)
class TrainingHistory:
    records: tuple[EpochRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def final(self) -> EpochRecord:
        if not self.records:
            raise ValueError("history is empty")
        return self.records[-1]

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for r in self.records:
                writer.writerow(
                    [
                        r.epoch,
                        f"{r.train_loss:.8g}",
                        f"{r.train_accuracy:.8g}",
                        f"{r.val_loss:.8g}",
                        f"{r.val_accuracy:.8g}",
                        f"{r.learning_rate:.8g}",
                    ]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainingHistory":
        records = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    EpochRecord(
                        epoch=int(row["epoch"]),
                        train_loss=float(row["train_loss"]),
                        train_accuracy=float(row["train_accuracy"]),
                        val_loss=float(row["val_loss"]),
                        val_accuracy=float(row["val_accuracy"]),
                        learning_rate=float(row["learning_rate"]),
                    )
                )
        return cls(records=tuple(records))


@dataclass
class LrState:
    learning_rate: float
    best_val_loss: float = math.inf
    epochs_without_improvement: int = 0
    epoch: int = 0


def decay_learning_rate(
    state: LrState,
    policy: str,
    factor: float = 0.1,
    patience: int = 10,
    fixed_epoch: int = 150,
    floor: float = 1e-6,
) -> float:
    """New learning rate under the given policy, clamped at the floor.

    plateau: decay once the validation loss has failed to improve for
    ``patience`` consecutive epochs. fixed_step: decay when the current epoch
    equals ``fixed_epoch``.
    """
    if policy not in LR_POLICIES:
        raise ConfigurationError(f"unknown lr decay policy {policy!r}")
    if policy == "plateau":
        triggered = state.epochs_without_improvement >= patience
    else:
        triggered = state.epoch == fixed_epoch
    if not triggered:
        return state.learning_rate
    return max(state.learning_rate * factor, floor)


class LrSchedule:
    """Tracks plateau/step state across epochs and yields the next rate."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.state = LrState(learning_rate=cfg.lr_initial)

    def on_epoch_end(self, epoch: int, val_loss: float) -> float:
        state = self.state
        state.epoch = epoch
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.epochs_without_improvement = 0
        else:
            state.epochs_without_improvement += 1
        new_lr = decay_learning_rate(
            state,
            self.cfg.lr_decay_policy,
            factor=self.cfg.decay_factor,
            patience=self.cfg.plateau_patience,
            fixed_epoch=self.cfg.fixed_decay_epoch,
            floor=self.cfg.lr_floor,
        )
        if new_lr != state.learning_rate:
            state.epochs_without_improvement = 0
            state.learning_rate = new_lr
        return state.learning_rate


def set_determinism(seed: int, deterministic: bool = True) -> None:
    """Seed python/numpy/TF generators; optionally pin op determinism."""
    global _determinism_enabled
    import tensorflow as tf

    tf.keras.utils.set_random_seed(seed)
    if deterministic and not _determinism_enabled:
        tf.config.experimental.enable_op_determinism()
        _determinism_enabled = True


def _batch_metrics(tf, model, images, labels):
    predictions = tf.squeeze(model(images, training=False), axis=-1)
    loss = tf.reduce_mean(tf.keras.losses.binary_crossentropy(labels, predictions))
    if model.losses:
        loss = loss + tf.add_n(model.losses)
    accuracy = tf.reduce_mean(
        tf.cast(tf.equal(tf.cast(predictions >= 0.5, labels.dtype), labels), tf.float32)
    )
    return float(loss), float(accuracy)


def evaluate_model(
    handle: ModelHandle,
    ds: LabeledDataset,
    preprocess_cfg: PreprocessConfig,
    batch_size: int,
    steps: int | None = None,
    rescale: float = 1.0,
) -> tuple[float, float]:
    """Mean loss/accuracy over deterministic unaugmented batches.

    Restarts from the canonical order every call, so evaluating the same
    model twice gives identical numbers.
    """
    import tensorflow as tf

    losses, accuracies = [], []
    for images, labels in preprocessed_batches(
        ds, batch_size, preprocess_cfg, steps=steps, rescale=rescale
    ):
        loss, acc = _batch_metrics(tf, handle.model, images, labels)
        losses.append(loss)
        accuracies.append(acc)
    return float(np.mean(losses)), float(np.mean(accuracies))


def train(
    handle: ModelHandle,
    splits: DatasetSplits,
    cfg: TrainConfig,
    preprocess_cfg: PreprocessConfig | None = None,
    augment_cfg: AugmentationConfig | None = None,
    on_epoch_end: Callable[[EpochRecord], None] | None = None,
) -> tuple[TrainingHistory, ModelHandle]:
    """Run the full training regime and return the per-epoch history.

    Each epoch draws ``train_steps_per_epoch`` augmented batches, then
    evaluates ``val_steps_per_epoch`` unaugmented validation batches. The
    recorded learning rate is the one in effect during the epoch; decay
    applies from the following epoch. A non-finite loss aborts with epoch,
    step, and rate in the error.
    """
    import tensorflow as tf

    pre = preprocess_cfg or PreprocessConfig()
    aug = augment_cfg or AugmentationConfig()
    expected = handle.model.input_shape[1]
    if expected is not None and expected != pre.target_size:
        raise ConfigurationError(
            f"model expects input size {expected}, preprocessing produces {pre.target_size}"
        )
    if len(splits.train) == 0 or len(splits.validation) == 0:
        raise ConfigurationError("both train and validation splits must be non-empty")
    if cfg.epochs == 0:
        return TrainingHistory(), handle

    optimizer = tf.keras.optimizers.Adam(
        learning_rate=cfg.lr_initial, beta_1=cfg.adam_beta1, beta_2=cfg.adam_beta2
    )
    schedule = LrSchedule(cfg)
    stream = augment_stream(
        splits.train, aug, cfg.batch_size, np.random.default_rng(cfg.seed), pre
    )
    model = handle.model
    records: list[EpochRecord] = []

    for epoch in range(1, cfg.epochs + 1):
        lr_in_effect = schedule.state.learning_rate
        optimizer.learning_rate.assign(lr_in_effect)
        epoch_losses, epoch_accs = [], []
        for step in range(1, cfg.train_steps_per_epoch + 1):
            images, labels = next(stream)
            with tf.GradientTape() as tape:
                predictions = tf.squeeze(model(images, training=True), axis=-1)
                data_loss = tf.reduce_mean(
                    tf.keras.losses.binary_crossentropy(labels, predictions)
                )
                loss = data_loss + tf.add_n(model.losses) if model.losses else data_loss
            loss_value = float(loss)
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(epoch, step, lr_in_effect)
            gradients = tape.gradient(loss, model.trainable_variables)
            optimizer.apply_gradients(zip(gradients, model.trainable_variables))
            epoch_losses.append(loss_value)
            epoch_accs.append(
                float(
                    np.mean((np.asarray(predictions) >= 0.5).astype(np.float32) == labels)
                )
            )

        val_loss, val_accuracy = evaluate_model(
            handle,
            splits.validation,
            pre,
            cfg.batch_size,
            steps=cfg.val_steps_per_epoch,
            rescale=aug.rescale,
        )
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            train_accuracy=float(np.mean(epoch_accs)),
            val_loss=val_loss,
            val_accuracy=val_accuracy,
            learning_rate=lr_in_effect,
        )
        records.append(record)
        if on_epoch_end is not None:
            on_epoch_end(record)
        schedule.on_epoch_end(epoch, val_loss)
        log.info(
            "%s epoch %d/%d loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f lr=%.2g",
            handle.spec.name,
            epoch,
            cfg.epochs,
            record.train_loss,
            record.train_accuracy,
            val_loss,
            val_accuracy,
            lr_in_effect,
        )

    return TrainingHistory(records=tuple(records)), handle


@dataclass(frozen=True)
class RunResult:
    architecture: str
    histories: tuple[TrainingHistory, ...]
    final_metrics: dict[str, float]
    run_dirs: tuple[Path, ...]


FINAL_METRIC_KEYS = ("train_loss", "train_accuracy", "val_loss", "val_accuracy")


def run_experiment(
    spec: ArchitectureSpec,
    splits: DatasetSplits,
    cfg: TrainConfig,
    preprocess_cfg: PreprocessConfig | None = None,
    augment_cfg: AugmentationConfig | None = None,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Train ``cfg.repetitions`` independent repetitions with derived seeds
    (seed, seed+1, ...) and average their final metrics arithmetically.

    Each repetition persists its history incrementally plus a best- and a
    last-epoch checkpoint under ``out_dir/<architecture>/rep<k>/``.
    """
    pre = preprocess_cfg or PreprocessConfig()
    histories: list[TrainingHistory] = []
    run_dirs: list[Path] = []

    for rep in range(cfg.repetitions):
        rep_seed = cfg.seed + rep
        rep_cfg = replace(cfg, seed=rep_seed)
        set_determinism(rep_seed, cfg.deterministic)
        handle = build_model(spec, channels=pre.channels_out)

        rep_dir = None
        history_path = None
        best_path = None
        best_val_acc = -math.inf
        if out_dir is not None:
            rep_dir = Path(out_dir) / spec.name / f"rep{rep}"
            rep_dir.mkdir(parents=True, exist_ok=True)
            history_path = rep_dir / "history.csv"
            best_path = rep_dir / "best.weights.h5"
            run_dirs.append(rep_dir)

        partial: list[EpochRecord] = []

        def persist(record: EpochRecord) -> None:
            nonlocal best_val_acc
            partial.append(record)
            if history_path is not None:
                TrainingHistory(records=tuple(partial)).to_csv(history_path)
            if best_path is not None and record.val_accuracy > best_val_acc:
                best_val_acc = record.val_accuracy
                handle.save_weights(best_path)

        started = time.time()
        try:
            history, handle = train(
                handle, splits, rep_cfg, pre, augment_cfg, on_epoch_end=persist
            )
        except Exception:
            log.exception("repetition %d of %s failed", rep, spec.name)
            raise
        histories.append(history)

        if rep_dir is not None:
            handle.save_weights(rep_dir / "last.weights.h5")
            manifest = {
                "architecture": spec.name,
                "repetition": rep,
                "seed": rep_seed,
                "spec": spec.to_dict(),
                "train_config": rep_cfg.to_dict(),
                "epochs_completed": len(history),
                "wall_time_seconds": round(time.time() - started, 3),
                "final": asdict(history.final()) if len(history) else None,
            }
            with open(rep_dir / "manifest.json", "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)

    final_metrics = average_final_metrics(histories)
    return RunResult(
        architecture=spec.name,
        histories=tuple(histories),
        final_metrics=final_metrics,
        run_dirs=tuple(run_dirs),
    )


def average_final_metrics(histories: Iterable[TrainingHistory]) -> dict[str, float]:
    finals = [h.final() for h in histories if len(h)]
    if not finals:
        return {}
    return {
        key: float(np.mean([getattr(f, key) for f in finals])) for key in FINAL_METRIC_KEYS
    }
