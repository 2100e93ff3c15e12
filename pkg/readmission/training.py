"""Maximum-likelihood training of a readmission model."""

from __future__ import annotations

import logging
import logging.config
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Mapping, Sequence

import numpy as np
import pandas as pd

from .compute import Adam, ConfigurationError, NumericError, RngStream, weighted_bce
from .ehr import Cohort, Split, StayRecord, Stream
from .embeddings import EmbeddingTable
from .metrics import (
    N_RESAMPLES,
    MetricReport,
    MetricUndefinedError,
    average_precision,
    evaluate_predictions,
    predictions_frame,
)
from .sequence_models import ArchitectureSpec, ModelDims, OdePolicy, ReadmissionModel, build_model, collate

logger = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int | None = None):
        where = f"epoch {epoch}" if batch is None else f"epoch {epoch}, batch {batch}"
        super().__init__(f"{message} ({where})")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 80
    dropout_p: float = 0.5
    class_weight: float | str = "auto"
    eval_batch_size: int = 512

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {self.lr}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigurationError("batch sizes must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"dropout probability must lie in [0, 1), got {self.dropout_p}")
        if self.class_weight != "auto" and float(self.class_weight) <= 0:
            raise ConfigurationError("class_weight must be 'auto' or a positive number")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "TrainConfig":
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown training settings: {sorted(unknown)}")
        return cls(**dict(mapping))


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_ap: float


@dataclass
class TrainResult:
    model: ReadmissionModel
    logs: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    class_weight: float = 1.0
    seconds: float = 0.0


def class_weight(labels) -> float:
    """N_neg / N_pos over the training stays."""
    labels = np.asarray(labels)
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives == 0 or negatives == 0:
        raise ConfigurationError(
            f"training split needs both classes, got {negatives} negative and {positives} positive stays"
        )
    return negatives / positives


def validation_ap(model: ReadmissionModel, records: Sequence[StayRecord], batch_size: int = 512) -> float:
    if not records:
        return float("nan")
    scores = model.predict(records, batch_size)
    try:
        return average_precision(scores, [r.label for r in records])
    except MetricUndefinedError:
        return float("nan")


def epoch_batches(n: int, batch_size: int, rng: RngStream) -> Iterator[np.ndarray]:
    """Index arrays of one epoch: a fresh permutation of range(n) cut into batches."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def fit(
    model: ReadmissionModel,
    train_records: Sequence[StayRecord],
    val_records: Sequence[StayRecord],
    config: TrainConfig,
    seed: int,
) -> TrainResult:
    """Run exactly ``config.epochs`` epochs and keep the best-validation-AP parameters."""
    started = time.perf_counter()
    if not train_records:
        raise ConfigurationError("empty training split")
    w_pos = (
        class_weight([r.label for r in train_records])
        if config.class_weight == "auto"
        else float(config.class_weight)
    )
    model.dropout_p = config.dropout_p
    rng = RngStream(seed)
    dropout_rng = rng.spawn(1)
    optimiser = Adam(model.params, lr=config.lr)

    logs: List[EpochLog] = []
    best_ap, best_epoch, best_state = float("nan"), 0, model.snapshot()
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for number, indices in enumerate(epoch_batches(len(train_records), config.batch_size, rng), start=1):
            batch = collate([train_records[i] for i in indices], model.dims)
            optimiser.zero_grad()
            loss = weighted_bce(model.forward(batch, True, dropout_rng), batch.labels, w_pos).mean()
            if not np.isfinite(loss.data):
                raise TrainingAborted("non-finite training loss", epoch, number)
            loss.backward()
            optimiser.step()
            total += float(loss.data) * len(batch)

        val_ap = validation_ap(model, val_records, config.eval_batch_size)
        logs.append(EpochLog(epoch, total / len(train_records), val_ap))
        logger.info(
            "%s epoch %d/%d: train loss %.4f, val AP %.4f",
            model.spec.value, epoch, config.epochs, logs[-1].train_loss, val_ap,
        )
        # an undefined AP only wins while no epoch has produced a defined one
        if not np.isfinite(best_ap) or val_ap > best_ap:
            best_ap, best_epoch, best_state = val_ap, epoch, model.snapshot()

    model.restore(best_state)
    return TrainResult(
        model=model,
        logs=logs,
        best_epoch=best_epoch,
        class_weight=w_pos,
        seconds=time.perf_counter() - started,
    )


def train(
    spec: ArchitectureSpec,
    cohort: Cohort,
    split: Split,
    config: TrainConfig,
    seed: int,
    mce_tables: Mapping[Stream, EmbeddingTable] | None = None,
    policy: OdePolicy | None = None,
) -> TrainResult:
    model = build_model(spec, ModelDims.from_cohort(cohort), seed, mce_tables, policy, config.dropout_p)
    logger.info("training %r on %d stays", model, len(split.train))
    return fit(model, cohort.subset(split.train), cohort.subset(split.val), config, seed)


@dataclass
class ArchitectureOutcome:
    """One benchmark row: test-split metrics of a trained architecture, or the abort."""

    spec: ArchitectureSpec
    logs: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    seconds: float = 0.0
    n_parameters: int = 0
    predictions: pd.DataFrame | None = None
    report: MetricReport | None = None
    error: str = ""

    @property
    def succeeded(self) -> bool:
        return not self.error


def train_and_evaluate(
    spec: ArchitectureSpec,
    cohort: Cohort,
    split: Split,
    config: TrainConfig,
    seed: int,
    n_resamples: int = N_RESAMPLES,
    mce_tables: Mapping[Stream, EmbeddingTable] | None = None,
    policy: OdePolicy | None = None,
    checkpoint_dir: Path | None = None,
    record_aborts: bool = True,
) -> ArchitectureOutcome:
    """Train ``spec`` on the split's training stays and bootstrap its test metrics.

    Runs inside benchmark worker slots, so it only reads the cohort and touches
    no database state. With ``record_aborts`` a failed row is returned carrying
    the error text instead of raising.
    """
    spec = ArchitectureSpec(spec)
    logger.info("%s: started", spec.value)
    try:
        result = train(spec, cohort, split, config, seed, mce_tables if spec.uses_mce else None, policy)
        if checkpoint_dir is not None:
            result.model.save(checkpoint_dir)
        test_records = cohort.subset(split.test)
        preds = predictions_frame(
            [r.stay_id for r in test_records],
            [r.patient_id for r in test_records],
            result.model.predict(test_records, config.eval_batch_size),
            [r.label for r in test_records],
        )
        report = evaluate_predictions(preds, n_resamples, seed)
    except (TrainingAborted, NumericError, MetricUndefinedError, ConfigurationError) as exc:
        if not record_aborts:
            raise
        logger.error("%s: aborted: %s", spec.value, exc)
        return ArchitectureOutcome(spec=spec, error=f"{type(exc).__name__}: {exc}")

    logger.info(
        "%s: finished in %.1fs, test AP %.3f, AUROC %.3f",
        spec.value, result.seconds, report.ap.point, report.auroc.point,
    )
    return ArchitectureOutcome(
        spec=spec,
        logs=result.logs,
        best_epoch=result.best_epoch,
        seconds=result.seconds,
        n_parameters=result.model.n_parameters,
        predictions=preds,
        report=report,
    )


def benchmark_row(*args, log_config: Mapping[str, object] | None = None, **kwargs) -> ArchitectureOutcome:
    """``train_and_evaluate`` as run by a benchmark worker.

    Worker processes start without the project's logging set up, so
    ``log_config`` is applied first when the package logger has no handlers.
    """
    if log_config and not logging.getLogger(__package__).handlers:
        logging.config.dictConfig(log_config)
    return train_and_evaluate(*args, **kwargs)
