"""
ICU stay records and everything needed to build them.

A cohort is read from two CSV files (``stays.csv`` with the 23 static columns
and ``events.csv`` with timestamped codes) or simulated with a planted,
recoverable risk signal. Ingestion bins raw vital-sign measurements into
OASIS-style codes, drops consecutive repeats of the same vital code, relabels
codes seen in fewer than ``min_code_stays`` stays as ``other`` and sorts each
stream oldest first.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from .compute import ConfigurationError

logger = logging.getLogger(__name__)

OTHER = "other"
MIN_CODE_STAYS = 100
VITAL_PREFIX = "vital:"

CONTINUOUS_FEATURES = ("icu_los_days", "pre_icu_los_days", "age_years", "n_recent_admissions")
BINARY_FEATURES = ("gender_male", "elective_surgery")
# Reference levels (all columns zero): emergency room admit, Medicare, married, white.
INDICATOR_GROUPS: Dict[str, Tuple[str, ...]] = {
    "admission_location": (
        "admission_location_clinic_referral",
        "admission_location_other_unknown",
        "admission_location_physician_referral",
        "admission_location_transfer_hospital",
        "admission_location_transfer_snf",
    ),
    "insurance": (
        "insurance_government",
        "insurance_medicaid",
        "insurance_private",
        "insurance_self_pay",
    ),
    "marital_status": (
        "marital_status_other_unknown",
        "marital_status_single",
        "marital_status_widowed_divorced",
    ),
    "ethnicity": (
        "ethnicity_asian",
        "ethnicity_black",
        "ethnicity_hispanic",
        "ethnicity_other_unknown",
        "ethnicity_unable_to_obtain",
    ),
}
# Where rare indicator levels are folded; None folds into the reference level.
FOLD_TARGETS: Dict[str, str | None] = {
    "admission_location": "admission_location_other_unknown",
    "insurance": None,
    "marital_status": "marital_status_other_unknown",
    "ethnicity": "ethnicity_other_unknown",
}
STATIC_FEATURES: Tuple[str, ...] = (
    CONTINUOUS_FEATURES
    + BINARY_FEATURES
    + tuple(column for columns in INDICATOR_GROUPS.values() for column in columns)
)
N_STATIC = len(STATIC_FEATURES)

STATIC_LABELS: Dict[str, str] = {
    "icu_los_days": "ICU Length of Stay (days)",
    "pre_icu_los_days": "Pre-ICU Length of Stay (days)",
    "age_years": "Age (years)",
    "n_recent_admissions": "Number of Recent Admissions",
    "gender_male": "Gender: Male",
    "elective_surgery": "Elective Surgery",
    "admission_location_clinic_referral": "Admission Location: Clinic Referral/Premature Delivery",
    "admission_location_other_unknown": "Admission Location: Other/Unknown",
    "admission_location_physician_referral": "Admission Location: Physician Referral/Normal Delivery",
    "admission_location_transfer_hospital": "Admission Location: Transfer from Hospital/Extramural",
    "admission_location_transfer_snf": "Admission Location: Transfer from Skilled Nursing Facility",
    "insurance_government": "Insurance: Government",
    "insurance_medicaid": "Insurance: Medicaid",
    "insurance_private": "Insurance: Private",
    "insurance_self_pay": "Insurance: Self Pay",
    "marital_status_other_unknown": "Marital Status: Other/Unknown",
    "marital_status_single": "Marital Status: Single",
    "marital_status_widowed_divorced": "Marital Status: Widowed/Divorced/Separated",
    "ethnicity_asian": "Ethnicity: Asian",
    "ethnicity_black": "Ethnicity: Black/African American",
    "ethnicity_hispanic": "Ethnicity: Hispanic/Latino",
    "ethnicity_other_unknown": "Ethnicity: Other/Unknown",
    "ethnicity_unable_to_obtain": "Ethnicity: Unable to Obtain",
}

STAY_COLUMNS = ("stay_id", "patient_id", "label") + STATIC_FEATURES
EVENT_COLUMNS = ("stay_id", "stream", "code", "elapsed")


class CohortFormatError(ValueError):
    """Raised when an input file violates the stays/events schema."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class Stream(str, Enum):
    DP = "dp"  # diagnoses and procedures, elapsed in days
    MV = "mv"  # medications and vital signs, elapsed in hours


class CodeEvent(NamedTuple):
    code_id: int
    stream: Stream
    elapsed: float


@dataclass(frozen=True)
class EventSequence:
    """One stream of a stay, oldest event first."""

    stream: Stream
    codes: np.ndarray
    elapsed: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64).reshape(-1)
        elapsed = np.asarray(self.elapsed, dtype=np.float64).reshape(-1)
        if codes.shape != elapsed.shape:
            raise ConfigurationError("codes and elapsed times differ in length")
        if np.any(elapsed < 0):
            raise ConfigurationError("elapsed times must be non-negative")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "elapsed", elapsed)

    @classmethod
    def empty(cls, stream: Stream) -> "EventSequence":
        return cls(stream, np.zeros(0, dtype=np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.codes)

    def events(self) -> List[CodeEvent]:
        return [CodeEvent(int(c), self.stream, float(t)) for c, t in zip(self.codes, self.elapsed)]


def canonical_order(codes: np.ndarray, elapsed: np.ndarray) -> np.ndarray:
    """Oldest first (decreasing elapsed), ties by ascending code id."""
    return np.lexsort((np.asarray(codes), -np.asarray(elapsed, dtype=np.float64)))


@dataclass(frozen=True)
class StayRecord:
    stay_id: str
    patient_id: str
    statics: np.ndarray
    dp: EventSequence
    mv: EventSequence
    label: int

    def __post_init__(self):
        statics = np.asarray(self.statics, dtype=np.float64)
        if statics.shape != (N_STATIC,):
            raise ConfigurationError(f"expected {N_STATIC} static features, got {statics.shape}")
        object.__setattr__(self, "statics", statics)

    def stream(self, stream: Stream) -> EventSequence:
        return self.dp if Stream(stream) is Stream.DP else self.mv


# -- vital signs ------------------------------------------------------------


@dataclass(frozen=True)
class VitalScale:
    """Right-open bins: a value equal to a breakpoint falls in the upper bin."""

    kind: str
    breakpoints: Tuple[float, ...]
    labels: Tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.breakpoints) + 1:
            raise ConfigurationError(f"{self.kind}: need one more label than breakpoints")
        if any(b >= a for a, b in zip(self.breakpoints[1:], self.breakpoints[:-1])):
            raise ConfigurationError(f"{self.kind}: breakpoints must increase")

    def bin(self, value: float) -> int:
        return int(np.searchsorted(self.breakpoints, value, side="right"))


OASIS_SCALES: Tuple[VitalScale, ...] = (
    VitalScale("gcs", (8, 14, 15), ("3-7", "8-13", "14", "15")),
    VitalScale("heart_rate", (33, 89, 107, 126), ("<33", "33-88", "89-106", "107-125", ">125")),
    VitalScale(
        "mean_arterial_pressure",
        (20.65, 51, 61.33, 143.45),
        ("<20.65", "20.65-50.99", "51-61.32", "61.33-143.44", ">143.44"),
    ),
    VitalScale("respiratory_rate", (6, 13, 23, 31, 45), ("<6", "6-12", "13-22", "23-30", "31-44", ">44")),
    VitalScale(
        "temperature",
        (33.22, 35.94, 36.40, 36.89, 39.89),
        ("<33.22", "33.22-35.93", "35.94-36.39", "36.40-36.88", "36.89-39.88", ">39.88"),
    ),
    VitalScale(
        "urine_output",
        (671, 1427, 2544, 6897),
        ("<671", "671-1426", "1427-2543", "2544-6896", ">6896"),
    ),
    # a ventilation event carries no measurement
    VitalScale("ventilation", (), ("ventilated",)),
)


@dataclass(frozen=True)
class VitalBinner:
    scales: Tuple[VitalScale, ...] = OASIS_SCALES
    _offsets: Dict[str, int] = field(init=False, repr=False, compare=False)
    _codes: Tuple[str, ...] = field(init=False, repr=False, compare=False)
    _kinds: Tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        offsets, codes, kinds = {}, [], []
        for kind_index, scale in enumerate(self.scales):
            offsets[scale.kind] = len(codes)
            codes.extend(f"{VITAL_PREFIX}{scale.kind}:{label}" for label in scale.labels)
            kinds.extend([kind_index] * len(scale.labels))
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_codes", tuple(codes))
        object.__setattr__(self, "_kinds", tuple(kinds))

    def __len__(self) -> int:
        return len(self._codes)

    @property
    def codes(self) -> Tuple[str, ...]:
        return self._codes

    @property
    def kinds(self) -> Tuple[str, ...]:
        return tuple(scale.kind for scale in self.scales)

    def kind_of(self, code_index: int) -> int:
        return self._kinds[code_index]

    def _scale(self, kind: str) -> VitalScale:
        if kind not in self._offsets:
            raise CohortFormatError(f"unknown vital sign kind {kind!r}")
        return self.scales[self._kinds[self._offsets[kind]]]

    def bin_vital(self, kind: str, value: float) -> int:
        """Index (into ``codes``) of the bin containing ``value``."""
        scale = self._scale(kind)
        if not np.isfinite(value):
            raise CohortFormatError(f"non-finite {kind} measurement")
        return self._offsets[kind] + scale.bin(float(value))

    def index_of(self, code: str) -> int | None:
        try:
            return self._codes.index(code)
        except ValueError:
            return None

    def normalise(self, raw: str) -> str:
        """Map ``vital:<kind>=<value>`` to its bin code; pass binned codes through."""
        body = raw[len(VITAL_PREFIX):]
        if "=" in body:
            kind, _, value = body.partition("=")
            try:
                measurement = float(value)
            except ValueError as exc:
                raise CohortFormatError(f"unparseable vital measurement {raw!r}") from exc
            return self._codes[self.bin_vital(kind, measurement)]
        if raw not in self._codes:
            self._scale(body.partition(":")[0])
            raise CohortFormatError(f"unknown vital sign code {raw!r}")
        return raw


# -- vocabularies -----------------------------------------------------------


@dataclass(frozen=True)
class StreamVocabulary:
    """Dense code ids for one stream; id 0 is reserved for ``other``."""

    codes: Tuple[str, ...]
    counts: Tuple[int, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.codes or self.codes[0] != OTHER:
            raise ConfigurationError("vocabulary must reserve id 0 for 'other'")
        object.__setattr__(self, "_index", {code: i for i, code in enumerate(self.codes)})

    @classmethod
    def from_counts(cls, stay_counts: Mapping[str, int]) -> "StreamVocabulary":
        kept = sorted((c for c in stay_counts if c != OTHER), key=lambda c: (-stay_counts[c], c))
        codes = (OTHER,) + tuple(kept)
        return cls(codes, tuple(int(stay_counts.get(c, 0)) for c in codes))

    def __len__(self) -> int:
        return len(self.codes)

    def id_of(self, code: str) -> int:
        return self._index.get(code, 0)

    def code_of(self, code_id: int) -> str:
        return self.codes[code_id]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.codes).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Vocabularies:
    dp: StreamVocabulary
    mv: StreamVocabulary

    def for_stream(self, stream: Stream) -> StreamVocabulary:
        return self.dp if Stream(stream) is Stream.DP else self.mv


@dataclass(frozen=True)
class Cohort:
    records: Tuple[StayRecord, ...]
    vocab: Vocabularies
    binner: VitalBinner = field(default_factory=VitalBinner)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def patient_ids(self) -> np.ndarray:
        return np.array([r.patient_id for r in self.records], dtype=object)

    def subset(self, indices: Iterable[int]) -> List[StayRecord]:
        return [self.records[i] for i in indices]

    def record(self, stay_id: str) -> StayRecord:
        for record in self.records:
            if record.stay_id == stay_id:
                return record
        raise KeyError(stay_id)

    def to_frames(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        stays = pd.DataFrame(
            {
                "stay_id": [r.stay_id for r in self.records],
                "patient_id": [r.patient_id for r in self.records],
                "label": [r.label for r in self.records],
                **{
                    name: [float(r.statics[j]) for r in self.records]
                    for j, name in enumerate(STATIC_FEATURES)
                },
            },
            columns=list(STAY_COLUMNS),
        )
        rows: Dict[str, list] = {column: [] for column in EVENT_COLUMNS}
        for record in self.records:
            for stream in Stream:
                sequence = record.stream(stream)
                vocabulary = self.vocab.for_stream(stream)
                rows["stay_id"].extend([record.stay_id] * len(sequence))
                rows["stream"].extend([stream.value] * len(sequence))
                rows["code"].extend(vocabulary.code_of(int(c)) for c in sequence.codes)
                rows["elapsed"].extend(float(t) for t in sequence.elapsed)
        return stays, pd.DataFrame(rows, columns=list(EVENT_COLUMNS))


# -- ingestion --------------------------------------------------------------


def _read_csv(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=list(columns))
    except pd.errors.ParserError as exc:
        raise CohortFormatError(f"{path}: {exc}") from exc


def _first_bad_line(frame: pd.DataFrame, bad: pd.Series) -> int:
    return int(frame.loc[bad, "_line"].iloc[0])


def _numeric_column(frame: pd.DataFrame, column: str) -> pd.Series:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() | ~np.isfinite(values.astype(float))
    if bad.any():
        line = _first_bad_line(frame, bad)
        raise CohortFormatError(f"column {column!r} is not a finite number", line)
    return values.astype(float)


def parse_stays(frame: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in STAY_COLUMNS if c not in frame.columns]
    if missing:
        raise CohortFormatError(f"stays file lacks columns {missing}", 1)
    frame = frame.reset_index(drop=True).copy()
    frame["_line"] = np.arange(len(frame)) + 2
    frame["stay_id"] = frame["stay_id"].astype(str)
    frame["patient_id"] = frame["patient_id"].astype(str)
    if frame["stay_id"].duplicated().any():
        raise CohortFormatError("duplicate stay_id", _first_bad_line(frame, frame["stay_id"].duplicated()))
    labels = _numeric_column(frame, "label")
    if not labels.isin([0.0, 1.0]).all():
        raise CohortFormatError("label must be 0 or 1", _first_bad_line(frame, ~labels.isin([0.0, 1.0])))
    frame["label"] = labels.astype(np.int64)
    for column in STATIC_FEATURES:
        frame[column] = _numeric_column(frame, column)
    for column in CONTINUOUS_FEATURES:
        if (frame[column] < 0).any():
            raise CohortFormatError(f"{column} must be non-negative", _first_bad_line(frame, frame[column] < 0))
    for column in BINARY_FEATURES + tuple(c for cols in INDICATOR_GROUPS.values() for c in cols):
        bad = ~frame[column].isin([0.0, 1.0])
        if bad.any():
            raise CohortFormatError(f"{column} must be 0 or 1", _first_bad_line(frame, bad))
    for group, columns in INDICATOR_GROUPS.items():
        bad = frame[list(columns)].sum(axis=1) > 1
        if bad.any():
            raise CohortFormatError(f"more than one {group} level set", _first_bad_line(frame, bad))
    return frame


def parse_events(frame: pd.DataFrame, stay_ids: Iterable[str], binner: VitalBinner) -> pd.DataFrame:
    missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
    if missing:
        raise CohortFormatError(f"events file lacks columns {missing}", 1)
    frame = frame.reset_index(drop=True).copy()
    frame["_line"] = np.arange(len(frame)) + 2
    frame["stay_id"] = frame["stay_id"].astype(str)
    frame["stream"] = frame["stream"].astype(str).str.strip().str.lower()
    frame["code"] = frame["code"].astype(str).str.strip()

    bad_stream = ~frame["stream"].isin([s.value for s in Stream])
    if bad_stream.any():
        line = _first_bad_line(frame, bad_stream)
        raise CohortFormatError(f"unknown stream tag {frame.loc[bad_stream, 'stream'].iloc[0]!r}", line)
    if (frame["code"] == "").any():
        raise CohortFormatError("empty code", _first_bad_line(frame, frame["code"] == ""))
    unknown = ~frame["stay_id"].isin(set(stay_ids))
    if unknown.any():
        raise CohortFormatError("event refers to an unknown stay_id", _first_bad_line(frame, unknown))
    frame["elapsed"] = _numeric_column(frame, "elapsed")
    if (frame["elapsed"] < 0).any():
        raise CohortFormatError("elapsed must be non-negative", _first_bad_line(frame, frame["elapsed"] < 0))

    vital = (frame["stream"] == Stream.MV.value) & frame["code"].str.startswith(VITAL_PREFIX)
    binned = []
    for line, code in zip(frame.loc[vital, "_line"], frame.loc[vital, "code"]):
        try:
            binned.append(binner.normalise(code))
        except CohortFormatError as exc:
            raise CohortFormatError(str(exc), int(line)) from exc
    frame.loc[vital, "code"] = binned
    return frame


def _is_vital(events: pd.DataFrame) -> pd.Series:
    return (events["stream"] == Stream.MV.value) & events["code"].str.startswith(VITAL_PREFIX)


def dedup_vitals(events: pd.DataFrame) -> pd.DataFrame:
    """Within each vital kind keep only the latest of consecutive identical codes."""
    if events.empty:
        return events
    events = events.sort_values(
        ["stay_id", "stream", "elapsed", "code"], ascending=[True, True, False, True], kind="mergesort"
    )
    vital = _is_vital(events)
    vitals = events.loc[vital, ["stay_id", "code"]].copy()
    vitals["kind"] = vitals["code"].str.split(":").str[1]
    following = vitals.groupby(["stay_id", "kind"], sort=False)["code"].shift(-1)
    repeated = vitals.index[vitals["code"].eq(following)]
    if len(repeated):
        logger.debug("dropping %d repeated vital sign codes", len(repeated))
    return events.drop(index=repeated)


def stay_counts(events: pd.DataFrame) -> pd.Series:
    """Number of distinct stays per (stream, code)."""
    if events.empty:
        return pd.Series(dtype=np.int64)
    return events.drop_duplicates(["stay_id", "stream", "code"]).groupby(["stream", "code"]).size()


def relabel_rare(events: pd.DataFrame, min_stays: int = MIN_CODE_STAYS) -> pd.DataFrame:
    """Replace codes present in fewer than ``min_stays`` stays with ``other``."""
    events = events.copy()
    if events.empty:
        return events
    counts = stay_counts(events)
    rare = counts.index[counts < min_stays]
    keys = pd.MultiIndex.from_frame(events[["stream", "code"]])
    is_rare = np.asarray(keys.isin(rare)) & (events["code"] != OTHER).to_numpy()
    if is_rare.any():
        logger.info(
            "relabelled %d codes (%d events) seen in fewer than %d stays as %r",
            len([k for k in rare if k[1] != OTHER]),
            int(is_rare.sum()),
            min_stays,
            OTHER,
        )
    events.loc[is_rare, "code"] = OTHER
    return events


def fold_rare_statics(statics: np.ndarray, min_stays: int = MIN_CODE_STAYS) -> np.ndarray:
    """Fold indicator levels seen in fewer than ``min_stays`` stays into other/unknown."""
    statics = np.array(statics, dtype=np.float64, copy=True)
    if len(statics) == 0:
        return statics
    for group, columns in INDICATOR_GROUPS.items():
        target = FOLD_TARGETS[group]
        for column in columns:
            if column == target:
                continue
            j = STATIC_FEATURES.index(column)
            rows = statics[:, j] == 1.0
            if 0 < rows.sum() < min_stays:
                statics[rows, j] = 0.0
                if target is not None:
                    statics[rows, STATIC_FEATURES.index(target)] = 1.0
                logger.info("folded rare level %s (%d stays) into %s", column, int(rows.sum()), target or "reference")
    return statics


def build_cohort(
    stays: pd.DataFrame,
    events: pd.DataFrame,
    binner: VitalBinner | None = None,
    min_code_stays: int = MIN_CODE_STAYS,
    max_events: int | None = None,
) -> Cohort:
    """Apply the ingestion rules to raw frames and assemble stay records."""
    binner = binner or VitalBinner()
    stays = parse_stays(stays)
    events = parse_events(events, stays["stay_id"], binner)
    events = relabel_rare(dedup_vitals(events), min_code_stays)

    counts = stay_counts(events)
    vocab = Vocabularies(
        dp=StreamVocabulary.from_counts(counts.get(Stream.DP.value, pd.Series(dtype=np.int64)).to_dict()),
        mv=StreamVocabulary.from_counts(counts.get(Stream.MV.value, pd.Series(dtype=np.int64)).to_dict()),
    )
    logger.info("vocabulary sizes: dp=%d mv=%d", len(vocab.dp), len(vocab.mv))

    sequences: Dict[Tuple[str, str], EventSequence] = {}
    if not events.empty:
        code_ids = np.where(
            events["stream"] == Stream.DP.value,
            events["code"].map(vocab.dp.id_of),
            events["code"].map(vocab.mv.id_of),
        )
        events = events.assign(code_id=code_ids.astype(np.int64))
        events = events.sort_values(
            ["stay_id", "stream", "elapsed", "code_id"], ascending=[True, True, False, True], kind="mergesort"
        )
        if max_events is not None:
            newest = events.groupby(["stay_id", "stream"]).cumcount(ascending=False) < max_events
            events = events[newest]
        for (stay_id, stream), group in events.groupby(["stay_id", "stream"], sort=False):
            sequences[(stay_id, stream)] = EventSequence(
                Stream(stream), group["code_id"].to_numpy(), group["elapsed"].to_numpy()
            )

    statics = fold_rare_statics(stays[list(STATIC_FEATURES)].to_numpy(dtype=np.float64), min_code_stays)
    records = tuple(
        StayRecord(
            stay_id=stay_id,
            patient_id=patient_id,
            statics=statics[i],
            dp=sequences.get((stay_id, Stream.DP.value), EventSequence.empty(Stream.DP)),
            mv=sequences.get((stay_id, Stream.MV.value), EventSequence.empty(Stream.MV)),
            label=int(label),
        )
        for i, (stay_id, patient_id, label) in enumerate(
            zip(stays["stay_id"], stays["patient_id"], stays["label"])
        )
    )
    return Cohort(records=records, vocab=vocab, binner=binner)


def load_cohort(
    stays_path: Path,
    events_path: Path,
    binner: VitalBinner | None = None,
    min_code_stays: int = MIN_CODE_STAYS,
    max_events: int | None = None,
) -> Cohort:
    stays = _read_csv(stays_path, STAY_COLUMNS)
    events = _read_csv(events_path, EVENT_COLUMNS)
    cohort = build_cohort(stays, events, binner, min_code_stays, max_events)
    logger.info("loaded %d stays from %s", len(cohort), stays_path)
    return cohort


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return path


def dump_cohort(cohort: Cohort, stays_path: Path, events_path: Path) -> None:
    stays, events = cohort.to_frames()
    write_frame(stays, stays_path)
    write_frame(events, events_path)


# -- splitting --------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def digest(self, cohort: Cohort) -> str:
        hasher = hashlib.sha256()
        for name in ("train", "val", "test"):
            ids = sorted(cohort.records[i].stay_id for i in getattr(self, name))
            hasher.update(f"{name}:{','.join(ids)};".encode("utf-8"))
        return hasher.hexdigest()[:16]


def split_patients(
    patient_ids: Sequence[str],
    test_fraction: float = 0.1,
    val_fraction: float = 0.1,
    seed: int = 0,
) -> Split:
    """Assign whole patients to train/validation/test."""
    if not (0.0 <= test_fraction < 1.0 and 0.0 <= val_fraction < 1.0 and test_fraction + val_fraction < 1.0):
        raise ConfigurationError(
            f"split fractions must leave a training share: test={test_fraction}, val={val_fraction}"
        )
    patient_ids = np.asarray(patient_ids, dtype=object)
    if len(patient_ids) == 0:
        raise ConfigurationError("cannot split an empty cohort")
    patients = np.array(sorted(set(patient_ids)), dtype=object)
    order = np.random.default_rng(seed).permutation(len(patients))
    n_test = int(round(test_fraction * len(patients)))
    n_val = int(round(val_fraction * len(patients)))
    test_patients = set(patients[order[:n_test]])
    val_patients = set(patients[order[n_test : n_test + n_val]])

    part = np.array(
        [2 if pid in test_patients else 1 if pid in val_patients else 0 for pid in patient_ids]
    )
    return Split(
        train=np.flatnonzero(part == 0),
        val=np.flatnonzero(part == 1),
        test=np.flatnonzero(part == 2),
    )


def split_by_patient(
    cohort: Cohort, test_fraction: float = 0.1, val_fraction: float = 0.1, seed: int = 0
) -> Split:
    return split_patients(cohort.patient_ids, test_fraction, val_fraction, seed)


# -- synthetic cohorts ------------------------------------------------------

ADMISSION_P = (0.50, 0.12, 0.02, 0.20, 0.13, 0.03)  # reference first
INSURANCE_P = (0.55, 0.03, 0.10, 0.30, 0.02)
MARITAL_P = (0.45, 0.05, 0.30, 0.20)
ETHNICITY_P = (0.70, 0.03, 0.10, 0.04, 0.08, 0.05)

VITAL_SAMPLERS = {
    "gcs": lambda rng, n: rng.choice([15.0, 14.0, 11.0, 6.0], p=[0.6, 0.2, 0.15, 0.05], size=n),
    "heart_rate": lambda rng, n: rng.normal(86.0, 18.0, n),
    "mean_arterial_pressure": lambda rng, n: rng.normal(78.0, 15.0, n),
    "respiratory_rate": lambda rng, n: np.clip(rng.normal(19.0, 6.0, n), 0.0, None),
    "temperature": lambda rng, n: rng.normal(36.9, 0.8, n),
    "urine_output": lambda rng, n: np.clip(rng.normal(1800.0, 900.0, n), 0.0, None),
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 1000
    dp_vocab: int = 150
    mv_vocab: int = 50
    n_planted: int = 10
    effect: float = 2.0
    intercept: float = -2.5
    decay_days: float = 30.0
    static_effects: Mapping[str, float] = field(default_factory=lambda: {"elective_surgery": -1.0})
    extra_stays_mean: float = 0.3
    dp_events_mean: float = 12.0
    mv_events_mean: float = 8.0
    vitals_per_kind: int = 2
    dp_elapsed_mean_days: float = 60.0
    ventilation_rate: float = 0.3
    min_code_stays: int = MIN_CODE_STAYS
    max_events: int | None = None

    def __post_init__(self):
        if self.n_patients < 0:
            raise ConfigurationError("n_patients must be non-negative")
        if self.dp_vocab < 1 or self.mv_vocab < 1:
            raise ConfigurationError("vocabulary sizes must be at least 1")
        if not 0 <= self.n_planted <= self.dp_vocab:
            raise ConfigurationError("n_planted must lie in [0, dp_vocab]")
        if self.decay_days <= 0 or self.dp_elapsed_mean_days <= 0:
            raise ConfigurationError("time scales must be positive")
        if self.dp_events_mean < 1 or self.mv_events_mean < 0 or self.vitals_per_kind < 0:
            raise ConfigurationError("event counts must be non-negative (at least one dp event)")
        unknown = set(self.static_effects) - set(STATIC_FEATURES)
        if unknown:
            raise ConfigurationError(f"unknown static features in static_effects: {sorted(unknown)}")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "SyntheticConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(mapping) - known
        if unknown:
            raise ConfigurationError(f"unknown synthetic settings: {sorted(unknown)}")
        return cls(**dict(mapping))

    def static_effect_vector(self) -> np.ndarray:
        effects = np.zeros(N_STATIC)
        for name, value in self.static_effects.items():
            effects[STATIC_FEATURES.index(name)] = float(value)
        return effects


def planted_signal(planted_elapsed: Sequence[float], decay_days: float) -> float:
    """Strongest time-decayed contribution among planted codes in a stay."""
    elapsed = np.asarray(planted_elapsed, dtype=np.float64)
    return float(np.exp(-elapsed / decay_days).max()) if elapsed.size else 0.0


def stay_risk(cfg: SyntheticConfig, planted_elapsed: Sequence[float], statics: np.ndarray) -> float:
    logit = cfg.intercept + cfg.effect * planted_signal(planted_elapsed, cfg.decay_days)
    return float(expit(logit + cfg.static_effect_vector() @ np.asarray(statics, dtype=np.float64)))


class SyntheticFrames(NamedTuple):
    stays: pd.DataFrame
    events: pd.DataFrame
    planted: pd.DataFrame


class SyntheticCohort(NamedTuple):
    cohort: Cohort
    planted: pd.DataFrame
    frames: SyntheticFrames


def _one_hot(statics: np.ndarray, group: str, level: int) -> None:
    if level > 0:
        statics[STATIC_FEATURES.index(INDICATOR_GROUPS[group][level - 1])] = 1.0


def simulate_frames(cfg: SyntheticConfig, seed: int) -> SyntheticFrames:
    """Raw stays/events frames (vitals as raw measurements) plus ground truth."""
    rng = np.random.default_rng(seed)
    dp_codes = np.array([f"dp:{i:04d}" for i in range(cfg.dp_vocab)], dtype=object)
    mv_codes = np.array([f"med:{i:03d}" for i in range(cfg.mv_vocab)], dtype=object)
    planted = np.sort(rng.choice(cfg.dp_vocab, size=cfg.n_planted, replace=False))
    effects = cfg.static_effect_vector()

    stay_rows: List[list] = []
    events: Dict[str, list] = {column: [] for column in EVENT_COLUMNS}

    def add_events(stay_id: str, stream: Stream, codes: Iterable[str], elapsed: Iterable[float]) -> None:
        for code, t in zip(codes, elapsed):
            events["stay_id"].append(stay_id)
            events["stream"].append(stream.value)
            events["code"].append(code)
            events["elapsed"].append(round(float(t), 3))

    n_stays = 0
    for p in range(cfg.n_patients):
        patient_id = f"P{p:06d}"
        male = float(rng.random() < 0.55)
        age = float(np.clip(rng.normal(63.0, 17.0), 18.0, 95.0))
        ethnicity = rng.choice(len(ETHNICITY_P), p=ETHNICITY_P)
        marital = rng.choice(len(MARITAL_P), p=MARITAL_P)
        insurance = rng.choice(len(INSURANCE_P), p=INSURANCE_P)

        for s in range(1 + rng.poisson(cfg.extra_stays_mean)):
            stay_id = f"S{n_stays:07d}"
            n_stays += 1
            statics = np.zeros(N_STATIC)
            icu_los = round(float(rng.gamma(2.0, 1.5)), 3)
            statics[STATIC_FEATURES.index("icu_los_days")] = icu_los
            statics[STATIC_FEATURES.index("pre_icu_los_days")] = round(float(rng.exponential(1.5)), 3)
            statics[STATIC_FEATURES.index("age_years")] = round(age + 0.25 * s, 2)
            statics[STATIC_FEATURES.index("n_recent_admissions")] = float(s)
            statics[STATIC_FEATURES.index("gender_male")] = male
            statics[STATIC_FEATURES.index("elective_surgery")] = float(rng.random() < 0.15)
            _one_hot(statics, "admission_location", rng.choice(len(ADMISSION_P), p=ADMISSION_P))
            _one_hot(statics, "insurance", insurance)
            _one_hot(statics, "marital_status", marital)
            _one_hot(statics, "ethnicity", ethnicity)

            n_dp = 1 + rng.poisson(cfg.dp_events_mean - 1.0)
            dp_index = rng.integers(0, cfg.dp_vocab, n_dp)
            dp_elapsed = np.round(rng.exponential(cfg.dp_elapsed_mean_days, n_dp), 3)
            add_events(stay_id, Stream.DP, dp_codes[dp_index], dp_elapsed)

            hours = icu_los * 24.0
            n_med = rng.poisson(cfg.mv_events_mean)
            add_events(stay_id, Stream.MV, mv_codes[rng.integers(0, cfg.mv_vocab, n_med)], rng.uniform(0, hours, n_med))
            for kind, sampler in VITAL_SAMPLERS.items():
                values = sampler(rng, cfg.vitals_per_kind)
                add_events(
                    stay_id,
                    Stream.MV,
                    (f"{VITAL_PREFIX}{kind}={v:.2f}" for v in values),
                    rng.uniform(0, hours, cfg.vitals_per_kind),
                )
            if rng.random() < cfg.ventilation_rate:
                add_events(stay_id, Stream.MV, [f"{VITAL_PREFIX}ventilation=1"], rng.uniform(0, hours, 1))

            hits = np.isin(dp_index, planted)
            logit = (
                cfg.intercept
                + cfg.effect * planted_signal(dp_elapsed[hits], cfg.decay_days)
                + effects @ statics
            )
            label = int(rng.random() < expit(logit))
            stay_rows.append([stay_id, patient_id, label, *statics.tolist()])

    stays = pd.DataFrame(stay_rows, columns=list(STAY_COLUMNS))
    planted_rows = [(dp_codes[i], cfg.effect) for i in planted] + [
        (f"static:{name}", float(value)) for name, value in sorted(cfg.static_effects.items())
    ]
    return SyntheticFrames(
        stays=stays,
        events=pd.DataFrame(events, columns=list(EVENT_COLUMNS)),
        planted=pd.DataFrame(planted_rows, columns=["code", "effect"]),
    )


def generate_synthetic(cfg: SyntheticConfig, seed: int, binner: VitalBinner | None = None) -> SyntheticCohort:
    frames = simulate_frames(cfg, seed)
    cohort = build_cohort(frames.stays, frames.events, binner, cfg.min_code_stays, cfg.max_events)
    logger.info(
        "simulated %d stays for %d patients, prevalence %.3f",
        len(cohort),
        cfg.n_patients,
        float(cohort.labels.mean()) if len(cohort) else float("nan"),
    )
    return SyntheticCohort(cohort=cohort, planted=frames.planted, frames=frames)


# -- baseline characteristics -----------------------------------------------


def cohort_summary(cohort: Cohort) -> pd.DataFrame:
    """Baseline characteristics of a cohort, one row per characteristic."""
    rows: List[Tuple[str, str]] = []
    labels = cohort.labels
    rows.append(("ICU stays", str(len(cohort))))
    rows.append(("Patients", str(len(set(cohort.patient_ids)))))
    rows.append(("Readmitted within 30 days", f"{int(labels.sum())} ({100 * labels.mean():.1f}%)" if len(labels) else "0"))
    statics = np.array([r.statics for r in cohort.records]).reshape(-1, N_STATIC)
    for j, name in enumerate(STATIC_FEATURES):
        column = statics[:, j]
        if name in CONTINUOUS_FEATURES:
            value = f"{column.mean():.2f} ({column.std():.2f})" if len(column) else "n/a"
        else:
            value = f"{int(column.sum())} ({100 * column.mean():.1f}%)" if len(column) else "0"
        rows.append((STATIC_LABELS[name], value))
    for stream in Stream:
        lengths = [len(r.stream(stream)) for r in cohort.records]
        rows.append((f"Max {stream.value} sequence length", str(max(lengths, default=0))))
        rows.append((f"{stream.value} vocabulary size", str(len(cohort.vocab.for_stream(stream)))))
    return pd.DataFrame(rows, columns=["characteristic", "value"])
