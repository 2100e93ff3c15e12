"""
Evaluation metrics and patient-level bootstrap confidence intervals.

All metric functions take ``(scores, labels)`` arrays. AP and AUROC come from
scikit-learn; the F1 and Youden operating points sweep thresholds placed at
midpoints between consecutive distinct scores plus +/- infinity, a stay being
predicted positive when its score exceeds the threshold.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import average_precision_score, roc_auc_score

logger = logging.getLogger(__name__)

N_RESAMPLES = 100
PREDICTION_COLUMNS = ("stay_id", "patient_id", "score", "label")

Metric = Callable[[np.ndarray, np.ndarray], float]


class MetricUndefinedError(ValueError):
    """Raised when a metric is undefined for the given labels (e.g. a single class)."""


def _validate(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{len(scores)} scores for {len(labels)} labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def average_precision(scores, labels) -> float:
    scores, labels = _validate(scores, labels)
    if labels.sum() == 0:
        raise MetricUndefinedError("average precision needs at least one positive")
    return float(average_precision_score(labels, scores))


def auroc(scores, labels) -> float:
    scores, labels = _validate(scores, labels)
    if labels.min(initial=1) == labels.max(initial=0):
        raise MetricUndefinedError("AUROC needs both classes")
    return float(roc_auc_score(labels, scores))


class ThresholdSweep(NamedTuple):
    thresholds: np.ndarray  # descending, +inf first and -inf last
    tp: np.ndarray
    fp: np.ndarray
    positives: int
    negatives: int


def threshold_sweep(scores, labels) -> ThresholdSweep:
    scores, labels = _validate(scores, labels)
    distinct, inverse = np.unique(-scores, return_inverse=True)
    distinct = -distinct  # descending
    tp = np.concatenate([[0], np.cumsum(np.bincount(inverse, weights=labels, minlength=len(distinct)))])
    fp = np.concatenate([[0], np.cumsum(np.bincount(inverse, weights=1 - labels, minlength=len(distinct)))])
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.concatenate([[np.inf], midpoints, [-np.inf]]) if len(distinct) else np.array([np.inf])
    return ThresholdSweep(thresholds, tp.astype(np.int64), fp.astype(np.int64), int(labels.sum()), int(len(labels) - labels.sum()))


def _last_argmax(values: np.ndarray) -> int:
    return int(np.flatnonzero(values == values.max())[-1])


def f1_max(scores, labels) -> Tuple[float, float]:
    """Best F1 over the sweep and its threshold (the lowest one on ties)."""
    sweep = threshold_sweep(scores, labels)
    if sweep.positives == 0:
        raise MetricUndefinedError("F1 needs at least one positive")
    f1 = 2.0 * sweep.tp / (sweep.tp + sweep.fp + sweep.positives)
    best = _last_argmax(np.round(f1, 12))
    return float(f1[best]), float(sweep.thresholds[best])


def youden_operating_point(scores, labels) -> Tuple[float, float, float]:
    """(sensitivity, specificity, threshold) maximising Youden's J."""
    sweep = threshold_sweep(scores, labels)
    if sweep.positives == 0 or sweep.negatives == 0:
        raise MetricUndefinedError("Youden's J needs both classes")
    # J scaled by P*N is an integer, so ties are exact; later entries have higher sensitivity
    scaled_j = sweep.tp * sweep.negatives - sweep.fp * sweep.positives
    best = _last_argmax(scaled_j)
    sensitivity = sweep.tp[best] / sweep.positives
    specificity = (sweep.negatives - sweep.fp[best]) / sweep.negatives
    return float(sensitivity), float(specificity), float(sweep.thresholds[best])


def f1_score_max(scores, labels) -> float:
    return f1_max(scores, labels)[0]


def youden_sensitivity(scores, labels) -> float:
    return youden_operating_point(scores, labels)[0]


def youden_specificity(scores, labels) -> float:
    return youden_operating_point(scores, labels)[1]


METRICS: Dict[str, Metric] = {
    "ap": average_precision,
    "auroc": auroc,
    "f1": f1_score_max,
    "sensitivity": youden_sensitivity,
    "specificity": youden_specificity,
}


# -- bootstrap ----------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    point: float
    lo: float
    hi: float

    def format(self, digits: int = 3) -> str:
        return f"{self.point:.{digits}f} [{self.lo:.{digits}f}, {self.hi:.{digits}f}]"


def predictions_frame(stay_ids, patient_ids, scores, labels) -> pd.DataFrame:
    scores, labels = _validate(scores, labels)
    return pd.DataFrame(
        {"stay_id": list(stay_ids), "patient_id": list(patient_ids), "score": scores, "label": labels},
        columns=list(PREDICTION_COLUMNS),
    )


def patient_resamples(patient_ids: Sequence[str], n_resamples: int, seed: int) -> List[np.ndarray]:
    """Row indices of each resample; a patient's stays are drawn together."""
    patients, inverse = np.unique(np.asarray(patient_ids, dtype=str), return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    rows = np.split(order, np.cumsum(np.bincount(inverse, minlength=len(patients)))[:-1])
    resamples = []
    for child in np.random.SeedSequence(seed).spawn(n_resamples):
        chosen = np.random.default_rng(child).integers(0, len(patients), len(patients))
        resamples.append(np.concatenate([rows[p] for p in chosen]) if len(chosen) else np.zeros(0, dtype=np.int64))
    return resamples


def bootstrap_ci(
    metric: Metric,
    preds: pd.DataFrame,
    n_resamples: int = N_RESAMPLES,
    seed: int = 0,
    resamples: Sequence[np.ndarray] | None = None,
) -> Interval:
    """Point estimate on all rows plus 2.5/97.5 percentiles over patient resamples."""
    scores = preds["score"].to_numpy(dtype=np.float64)
    labels = preds["label"].to_numpy()
    point = metric(scores, labels)
    if resamples is None:
        resamples = patient_resamples(preds["patient_id"], n_resamples, seed)

    values, skipped = [], 0
    for rows in resamples:
        try:
            values.append(metric(scores[rows], labels[rows]))
        except MetricUndefinedError:
            skipped += 1
    if skipped:
        logger.warning(
            "%s undefined on %d of %d resamples; skipped",
            getattr(metric, "__name__", "metric"), skipped, len(resamples),
        )
    if not values:
        raise MetricUndefinedError("metric undefined on every bootstrap resample")
    lo, hi = np.percentile(values, [2.5, 97.5])
    return Interval(float(point), float(lo), float(hi))


@dataclass(frozen=True)
class MetricReport:
    ap: Interval
    auroc: Interval
    f1: Interval
    sensitivity: Interval
    specificity: Interval

    def as_dict(self) -> Dict[str, Dict[str, float]]:
        return asdict(self)

    def rows(self, architecture: str) -> List[Dict[str, object]]:
        return [
            {"architecture": architecture, "metric": name, **asdict(getattr(self, name))}
            for name in METRICS
        ]


def evaluate_predictions(preds: pd.DataFrame, n_resamples: int = N_RESAMPLES, seed: int = 0) -> MetricReport:
    """All five metrics, each bootstrapped over the same patient resamples."""
    resamples = patient_resamples(preds["patient_id"], n_resamples, seed)
    return MetricReport(
        **{name: bootstrap_ci(metric, preds, n_resamples, seed, resamples) for name, metric in METRICS.items()}
    )
