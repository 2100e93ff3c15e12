"""
The architecture zoo.

Every variant maps a stay to a readmission risk the same way: each code stream
is embedded, optionally run through a bidirectional GRU, pooled (attention or
final state) and reduced to one score; the two stream scores join the 23
static features in a final logistic layer. The variants differ in how elapsed
time enters: evolved embeddings, appended time, decayed or evolved hidden
state, or pre-trained time-aware embeddings.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from . import archive
from .compute import (
    DTYPE,
    ConfigurationError,
    RngStream,
    Value,
    concat,
    dropout,
    masked_softmax,
    parameter,
    stack,
)
from .ehr import N_STATIC, Cohort, EventSequence, StayRecord, Stream
from .embeddings import EmbeddingTable, concat_time, embed_dim, euler_steps, evolve_ode, init_ode_field, ode_field

logger = logging.getLogger(__name__)


class ArchitectureSpec(str, Enum):
    ODE_RNN_ATTN = "OdeRnnAttn"
    ODE_RNN = "OdeRnn"
    RNN_ODE_DECAY_ATTN = "RnnOdeDecayAttn"
    RNN_ODE_DECAY = "RnnOdeDecay"
    RNN_EXP_DECAY_ATTN = "RnnExpDecayAttn"
    RNN_EXP_DECAY = "RnnExpDecay"
    RNN_CONCAT_ATTN = "RnnConcatAttn"
    RNN_CONCAT = "RnnConcat"
    ODE_ATTN = "OdeAttn"
    ATTN_CONCAT_TIME = "AttnConcatTime"
    MCE_RNN_ATTN = "MceRnnAttn"
    MCE_RNN = "MceRnn"
    MCE_ATTN = "MceAttn"
    LOGISTIC_BASELINE = "LogisticBaseline"

    @classmethod
    def parse(cls, name: str) -> "ArchitectureSpec":
        try:
            return cls(name)
        except ValueError:
            known = ", ".join(spec.value for spec in cls)
            raise ConfigurationError(f"unknown architecture {name!r}; choose from {known}") from None

    @property
    def uses_mce(self) -> bool:
        return self.value.startswith("Mce")


class TimeMode(str, Enum):
    NONE = "none"
    CONCAT_DELTA = "concat_delta"
    EXP_DECAY = "exp_decay"
    ODE_DECAY = "ode_decay"


class EmbeddingKind(str, Enum):
    TABLE = "table"
    ODE = "ode"
    MCE = "mce"
    CONCAT_TIME = "concat_time"


@dataclass(frozen=True)
class Layout:
    embedding: EmbeddingKind
    rnn: TimeMode | None  # None: no recurrent layer
    attention: bool


LAYOUTS: Dict[ArchitectureSpec, Layout] = {
    ArchitectureSpec.ODE_RNN_ATTN: Layout(EmbeddingKind.ODE, TimeMode.NONE, True),
    ArchitectureSpec.ODE_RNN: Layout(EmbeddingKind.ODE, TimeMode.NONE, False),
    ArchitectureSpec.RNN_ODE_DECAY_ATTN: Layout(EmbeddingKind.TABLE, TimeMode.ODE_DECAY, True),
    ArchitectureSpec.RNN_ODE_DECAY: Layout(EmbeddingKind.TABLE, TimeMode.ODE_DECAY, False),
    ArchitectureSpec.RNN_EXP_DECAY_ATTN: Layout(EmbeddingKind.TABLE, TimeMode.EXP_DECAY, True),
    ArchitectureSpec.RNN_EXP_DECAY: Layout(EmbeddingKind.TABLE, TimeMode.EXP_DECAY, False),
    ArchitectureSpec.RNN_CONCAT_ATTN: Layout(EmbeddingKind.TABLE, TimeMode.CONCAT_DELTA, True),
    ArchitectureSpec.RNN_CONCAT: Layout(EmbeddingKind.TABLE, TimeMode.CONCAT_DELTA, False),
    ArchitectureSpec.ODE_ATTN: Layout(EmbeddingKind.ODE, None, True),
    ArchitectureSpec.ATTN_CONCAT_TIME: Layout(EmbeddingKind.CONCAT_TIME, None, True),
    ArchitectureSpec.MCE_RNN_ATTN: Layout(EmbeddingKind.MCE, TimeMode.NONE, True),
    ArchitectureSpec.MCE_RNN: Layout(EmbeddingKind.MCE, TimeMode.NONE, False),
    ArchitectureSpec.MCE_ATTN: Layout(EmbeddingKind.MCE, None, True),
}


@dataclass(frozen=True)
class OdePolicy:
    """Euler step policy; elapsed times are days for dp and hours for mv."""

    h_max_dp: float = 1.0
    h_max_mv: float = 1.0
    max_steps: int | None = None

    def h_max(self, stream: Stream) -> float:
        return self.h_max_dp if Stream(stream) is Stream.DP else self.h_max_mv

    def steps(self, stream: Stream, elapsed) -> np.ndarray:
        return euler_steps(elapsed, self.h_max(stream), self.max_steps)


@dataclass(frozen=True)
class ModelDims:
    dp_vocab: int
    mv_vocab: int
    dp_dim: int
    mv_dim: int
    # mv vocabulary id of each binned vital code (-1 when relabelled away)
    vital_columns: Tuple[int, ...] = ()
    # vital kind index of each binned vital code
    vital_kinds: Tuple[int, ...] = ()
    dp_hash: str = ""
    mv_hash: str = ""

    @classmethod
    def from_cohort(cls, cohort: Cohort) -> "ModelDims":
        mv_codes = cohort.vocab.mv.codes
        return cls(
            dp_vocab=len(cohort.vocab.dp),
            mv_vocab=len(cohort.vocab.mv),
            dp_dim=embed_dim(len(cohort.vocab.dp)),
            mv_dim=embed_dim(len(cohort.vocab.mv)),
            vital_columns=tuple(
                mv_codes.index(code) if code in mv_codes else -1 for code in cohort.binner.codes
            ),
            vital_kinds=tuple(cohort.binner.kind_of(i) for i in range(len(cohort.binner))),
            dp_hash=cohort.vocab.dp.digest(),
            mv_hash=cohort.vocab.mv.digest(),
        )

    @classmethod
    def from_manifest(cls, manifest: Mapping) -> "ModelDims":
        values = dict(manifest)
        values["vital_columns"] = tuple(values.get("vital_columns", ()))
        values["vital_kinds"] = tuple(values.get("vital_kinds", ()))
        return cls(**values)

    def vocab(self, stream: Stream) -> int:
        return self.dp_vocab if Stream(stream) is Stream.DP else self.mv_vocab

    def dim(self, stream: Stream) -> int:
        return self.dp_dim if Stream(stream) is Stream.DP else self.mv_dim


# -- batching -----------------------------------------------------------------


@dataclass(frozen=True)
class StreamBatch:
    """Left-aligned, zero-padded events of one stream, oldest first."""

    codes: np.ndarray
    elapsed: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    rev_index: np.ndarray  # per-row reversal of the valid prefix
    dt_fwd: np.ndarray  # gap to the previous event, oldest to newest
    dt_bwd: np.ndarray  # gap to the previous event of the reversed row

    @classmethod
    def from_sequences(cls, sequences: Sequence[EventSequence]) -> "StreamBatch":
        n = len(sequences)
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        width = int(lengths.max()) if n else 0
        codes = np.zeros((n, width), dtype=np.int64)
        elapsed = np.zeros((n, width), dtype=DTYPE)
        for i, sequence in enumerate(sequences):
            codes[i, : len(sequence)] = sequence.codes
            elapsed[i, : len(sequence)] = sequence.elapsed
        positions = np.arange(width)[None, :]
        mask = positions < lengths[:, None]
        rev_index = np.where(mask, lengths[:, None] - 1 - positions, positions)
        reversed_elapsed = np.take_along_axis(elapsed, rev_index, axis=1)
        return cls(
            codes=codes,
            elapsed=elapsed,
            mask=mask,
            lengths=lengths,
            rev_index=rev_index,
            dt_fwd=_gaps(elapsed, mask),
            dt_bwd=_gaps(reversed_elapsed, mask),
        )


def _gaps(elapsed: np.ndarray, mask: np.ndarray) -> np.ndarray:
    gaps = np.zeros_like(elapsed)
    if elapsed.shape[1] > 1:
        gaps[:, 1:] = np.abs(elapsed[:, 1:] - elapsed[:, :-1]) * mask[:, 1:]
    return gaps


@dataclass(frozen=True)
class Batch:
    stay_ids: Tuple[str, ...]
    statics: np.ndarray
    labels: np.ndarray
    dp: StreamBatch
    mv: StreamBatch
    vitals: np.ndarray  # latest binned vital per kind, one-hot

    def __len__(self) -> int:
        return len(self.stay_ids)

    def stream(self, stream: Stream) -> StreamBatch:
        return self.dp if Stream(stream) is Stream.DP else self.mv


def latest_vitals(record: StayRecord, dims: ModelDims) -> np.ndarray:
    columns = {mv_id: j for j, mv_id in enumerate(dims.vital_columns) if mv_id > 0}
    features = np.zeros(len(dims.vital_columns))
    seen = set()
    for code in record.mv.codes[::-1]:
        j = columns.get(int(code))
        if j is not None and dims.vital_kinds[j] not in seen:
            seen.add(dims.vital_kinds[j])
            features[j] = 1.0
    return features


def collate(records: Sequence[StayRecord], dims: ModelDims) -> Batch:
    for record in records:
        for stream in Stream:
            codes = record.stream(stream).codes
            if codes.size and (codes.min() < 0 or codes.max() >= dims.vocab(stream)):
                raise ConfigurationError(
                    f"stay {record.stay_id}: {stream.value} code id outside vocabulary of {dims.vocab(stream)}"
                )
    return Batch(
        stay_ids=tuple(r.stay_id for r in records),
        statics=np.array([r.statics for r in records], dtype=DTYPE).reshape(len(records), N_STATIC),
        labels=np.array([r.label for r in records], dtype=DTYPE),
        dp=StreamBatch.from_sequences([r.dp for r in records]),
        mv=StreamBatch.from_sequences([r.mv for r in records]),
        vitals=np.array([latest_vitals(r, dims) for r in records]).reshape(len(records), len(dims.vital_columns)),
    )


# -- layers -------------------------------------------------------------------


def gru_step(params: Mapping[str, Value], cell: str, h, x) -> Value:
    """z/r gates then candidate n; h' = (1 - z) * n + z * h."""
    p = lambda name: params[f"{cell}.{name}"]  # noqa: E731
    h = h if isinstance(h, Value) else Value(h)
    z = (x @ p("W_z") + h @ p("U_z") + p("b_z")).sigmoid()
    r = (x @ p("W_r") + h @ p("U_r") + p("b_r")).sigmoid()
    n = (x @ p("W_n") + (r * h) @ p("U_n") + p("b_n")).tanh()
    return (1.0 - z) * n + z * h


def apply_exp_decay(h, dt, gamma_raw) -> Value:
    h = h if isinstance(h, Value) else Value(h)
    gamma = gamma_raw.softplus() if isinstance(gamma_raw, Value) else Value(gamma_raw).softplus()
    return h * (-(gamma * np.asarray(dt, dtype=DTYPE))).exp()


def _run_direction(
    params: Mapping[str, Value],
    cell: str,
    x: Value,
    mask: np.ndarray,
    dt: np.ndarray,
    mode: TimeMode,
    policy: OdePolicy,
    stream: Stream,
) -> Tuple[List[Value], Value]:
    n, width = mask.shape
    h = Value(np.zeros((n, params[f"{cell}.U_z"].shape[0])))
    outputs = []
    for t in range(width):
        active = mask[:, t].astype(DTYPE)[:, None]
        if mode is TimeMode.EXP_DECAY:
            h_in = apply_exp_decay(h, dt[:, t][:, None], params[f"{cell}.gamma_raw"])
        elif mode is TimeMode.ODE_DECAY:
            h_in = evolve_ode(h, dt[:, t], ode_field(params, f"{cell}.ode"), policy.steps(stream, dt[:, t]))
        else:
            h_in = h
        x_t = x[:, t, :]
        if mode is TimeMode.CONCAT_DELTA:
            x_t = concat_time(x_t, dt[:, t])
        h = h + (gru_step(params, cell, h_in, x_t) - h) * active
        outputs.append(h)
    return outputs, h


def run_bigru(
    params: Mapping[str, Value],
    prefix: str,
    x: Value,
    batch: StreamBatch,
    mode: TimeMode,
    policy: OdePolicy | None = None,
    stream: Stream = Stream.DP,
) -> Tuple[Value, Value]:
    """Per-step outputs ``(B, L, 2h)`` and final states ``(B, 2h)``."""
    policy = policy or OdePolicy()
    n, width = batch.mask.shape
    if x.shape[:2] != (n, width):
        raise ConfigurationError(f"inputs {x.shape[:2]} do not match event layout {(n, width)}")
    hidden = params[f"{prefix}.gru_fwd.U_z"].shape[0]
    if width == 0:
        return Value(np.zeros((n, 0, 2 * hidden))), Value(np.zeros((n, 2 * hidden)))

    rows = np.arange(n)[:, None]
    fwd, h_fwd = _run_direction(params, f"{prefix}.gru_fwd", x, batch.mask, batch.dt_fwd, mode, policy, stream)
    x_rev = x[(rows, batch.rev_index)]
    bwd, h_bwd = _run_direction(params, f"{prefix}.gru_bwd", x_rev, batch.mask, batch.dt_bwd, mode, policy, stream)
    bwd_aligned = stack(bwd, axis=1)[(rows, batch.rev_index)]
    outputs = concat([stack(fwd, axis=1), bwd_aligned], axis=-1)
    return outputs, concat([h_fwd, h_bwd], axis=-1)


def attend(params: Mapping[str, Value], prefix: str, values, mask: np.ndarray | None = None) -> Tuple[Value, Value]:
    """Context-vector attention over the second-to-last axis of ``values``."""
    values = values if isinstance(values, Value) else Value(values)
    u = (values @ params[f"{prefix}.W"] + params[f"{prefix}.b"]).tanh()
    weights = masked_softmax(u @ params[f"{prefix}.u_c"], mask, axis=-1)
    context = (weights.reshape(weights.shape + (1,)) * values).sum(axis=-2)
    return weights, context


def score(params: Mapping[str, Value], prefix: str, context: Value) -> Value:
    return context @ params[f"{prefix}.w"] + params[f"{prefix}.b"]


# -- parameter construction ---------------------------------------------------


def _generator(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _init(seed: int, name: str, shape: Tuple[int, ...]) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "embedding":
        bound = 1.0 / np.sqrt(shape[1])
        return _generator(seed, name).uniform(-bound, bound, size=shape)
    if leaf == "gamma_raw":
        return np.full(shape, -3.0)
    if leaf.startswith("b") or name.startswith("final."):
        return np.zeros(shape)
    bound = 1.0 / np.sqrt(shape[0])
    return _generator(seed, name).uniform(-bound, bound, size=shape)


def _gru_shapes(cell: str, dim: int) -> Dict[str, Tuple[int, ...]]:
    shapes = {}
    for gate in ("z", "r", "n"):
        shapes[f"{cell}.W_{gate}"] = (dim, dim)
        shapes[f"{cell}.U_{gate}"] = (dim, dim)
        shapes[f"{cell}.b_{gate}"] = (dim,)
    return shapes


def _ode_shapes(prefix: str, dim: int) -> Dict[str, Tuple[int, ...]]:
    return {name: array.shape for name, array in init_ode_field(dim, np.random.default_rng(0), prefix).items()}


def parameter_shapes(spec: ArchitectureSpec, dims: ModelDims) -> Dict[str, Tuple[int, ...]]:
    """Names and shapes of the trainable arrays; a pure function of (spec, dims)."""
    spec = ArchitectureSpec(spec)
    if spec is ArchitectureSpec.LOGISTIC_BASELINE:
        return {"final.w": (N_STATIC + len(dims.vital_columns),), "final.b": ()}

    layout = LAYOUTS[spec]
    shapes: Dict[str, Tuple[int, ...]] = {}
    for stream in Stream:
        prefix, d = stream.value, dims.dim(stream)
        if layout.embedding is not EmbeddingKind.MCE:
            shapes[f"{prefix}.embedding"] = (dims.vocab(stream), d)
        if layout.embedding is EmbeddingKind.ODE:
            shapes.update(_ode_shapes(f"{prefix}.ode", d))
        value_dim = d + 1 if layout.embedding is EmbeddingKind.CONCAT_TIME else d
        if layout.rnn is not None:
            hidden = d + 1 if layout.rnn is TimeMode.CONCAT_DELTA else d
            for direction in ("gru_fwd", "gru_bwd"):
                cell = f"{prefix}.{direction}"
                shapes.update(_gru_shapes(cell, hidden))
                if layout.rnn is TimeMode.EXP_DECAY:
                    shapes[f"{cell}.gamma_raw"] = (hidden,)
                elif layout.rnn is TimeMode.ODE_DECAY:
                    shapes.update(_ode_shapes(f"{cell}.ode", hidden))
            value_dim = 2 * hidden
        if layout.attention:
            shapes[f"{prefix}.attention.W"] = (value_dim, value_dim)
            shapes[f"{prefix}.attention.b"] = (value_dim,)
            shapes[f"{prefix}.attention.u_c"] = (value_dim,)
        shapes[f"{prefix}.score.w"] = (value_dim,)
        shapes[f"{prefix}.score.b"] = ()
    shapes["final.w"] = (N_STATIC + 2,)
    shapes["final.b"] = ()
    return shapes


# -- the model ----------------------------------------------------------------


class ReadmissionModel:
    """Parameters and constants of one architecture plus its forward pass."""

    def __init__(
        self,
        spec: ArchitectureSpec,
        dims: ModelDims,
        params: Dict[str, Value],
        constants: Dict[str, np.ndarray] | None = None,
        seed: int = 0,
        policy: OdePolicy | None = None,
        dropout_p: float = 0.5,
    ):
        self.spec = ArchitectureSpec(spec)
        self.dims = dims
        self.params = params
        self.constants = dict(constants or {})
        self.seed = seed
        self.policy = policy or OdePolicy()
        self.dropout_p = dropout_p

    def __repr__(self) -> str:
        return f"ReadmissionModel({self.spec.value}, {self.n_parameters} parameters)"

    @property
    def layout(self) -> Layout | None:
        return LAYOUTS.get(self.spec)

    @property
    def n_parameters(self) -> int:
        return int(sum(value.data.size for value in self.params.values()))

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: value.data.copy() for name, value in self.params.items()}

    def restore(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, value in self.params.items():
            value.data = np.array(arrays[name], dtype=DTYPE)
            value.grad = None

    # -- forward --

    def embed(self, params: Mapping[str, Value], stream: Stream, batch: StreamBatch) -> Value:
        layout, prefix = self.layout, stream.value
        if layout.embedding is EmbeddingKind.MCE:
            table = Value(self.constants[f"{prefix}.mce"])
        else:
            table = params[f"{prefix}.embedding"]
        x = table[batch.codes]
        if layout.embedding is EmbeddingKind.ODE:
            n, width, d = x.shape
            elapsed = batch.elapsed.reshape(-1)
            flat = evolve_ode(
                x.reshape(n * width, d),
                elapsed,
                ode_field(params, f"{prefix}.ode"),
                self.policy.steps(stream, elapsed),
            )
            x = flat.reshape(n, width, d)
        elif layout.embedding is EmbeddingKind.CONCAT_TIME:
            x = concat_time(x, batch.elapsed)
        return x

    def stream_score(
        self,
        params: Mapping[str, Value],
        stream: Stream,
        batch: StreamBatch,
        training: bool,
        rng: RngStream | None,
    ) -> Value:
        layout, prefix = self.layout, stream.value
        x = dropout(self.embed(params, stream, batch), self.dropout_p, training, rng)
        if layout.rnn is None:
            _, context = attend(params, f"{prefix}.attention", x, batch.mask)
            context = dropout(context, self.dropout_p, training, rng)
        else:
            outputs, final = run_bigru(params, prefix, x, batch, layout.rnn, self.policy, stream)
            if layout.attention:
                outputs = dropout(outputs, self.dropout_p, training, rng)
                _, context = attend(params, f"{prefix}.attention", outputs, batch.mask)
                context = dropout(context, self.dropout_p, training, rng)
            else:
                context = dropout(final, self.dropout_p, training, rng)
        return score(params, f"{prefix}.score", context)

    def logits(
        self,
        batch: Batch,
        training: bool = False,
        rng: RngStream | None = None,
        params: Mapping[str, Value] | None = None,
    ) -> Value:
        params = self.params if params is None else params
        n = len(batch)
        if self.spec is ArchitectureSpec.LOGISTIC_BASELINE:
            features = Value(np.concatenate([batch.statics, batch.vitals], axis=1))
        else:
            scores = [self.stream_score(params, s, batch.stream(s), training, rng).reshape(n, 1) for s in Stream]
            features = concat([Value(batch.statics), *scores], axis=1)
        return features @ params["final.w"] + params["final.b"]

    def forward(
        self,
        batch: Batch,
        training: bool = False,
        rng: RngStream | None = None,
        params: Mapping[str, Value] | None = None,
    ) -> Value:
        """Risk probabilities, one per stay in the batch."""
        return self.logits(batch, training, rng, params).sigmoid()

    def predict(self, records: Sequence[StayRecord], batch_size: int = 512) -> np.ndarray:
        risks = [
            self.forward(collate(records[start : start + batch_size], self.dims)).data
            for start in range(0, len(records), batch_size)
        ]
        return np.concatenate(risks) if risks else np.zeros(0)

    # -- persistence --

    def manifest(self) -> Dict:
        return {
            "spec": self.spec.value,
            "seed": self.seed,
            "dims": asdict(self.dims),
            "policy": asdict(self.policy),
            "dropout_p": self.dropout_p,
            "vocab_hashes": {"dp": self.dims.dp_hash, "mv": self.dims.mv_hash},
            "constants": sorted(self.constants),
        }

    def save(self, directory: Path) -> Path:
        arrays = {**self.snapshot(), **{f"const:{k}": v for k, v in self.constants.items()}}
        path = archive.save_checkpoint(directory, arrays, self.manifest())
        logger.info("saved %s checkpoint to %s", self.spec.value, path)
        return path

    @classmethod
    def load(cls, directory: Path) -> "ReadmissionModel":
        arrays, manifest = archive.load_checkpoint(directory)
        return cls.from_arrays(arrays, manifest)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], manifest: Mapping) -> "ReadmissionModel":
        spec = ArchitectureSpec.parse(manifest["spec"])
        dims = ModelDims.from_manifest(manifest["dims"])
        shapes = parameter_shapes(spec, dims)
        missing = [name for name in shapes if name not in arrays]
        if missing:
            raise archive.ArchiveError(f"checkpoint lacks parameters {missing}")
        params = {name: parameter(arrays[name], name) for name in shapes}
        constants = {k[len("const:"):]: np.asarray(v) for k, v in arrays.items() if k.startswith("const:")}
        return cls(
            spec,
            dims,
            params,
            constants,
            seed=int(manifest.get("seed", 0)),
            policy=OdePolicy(**manifest.get("policy", {})),
            dropout_p=float(manifest.get("dropout_p", 0.5)),
        )


def build_model(
    spec: ArchitectureSpec,
    dims: ModelDims,
    seed: int,
    mce_tables: Mapping[Stream, EmbeddingTable] | None = None,
    policy: OdePolicy | None = None,
    dropout_p: float = 0.5,
) -> ReadmissionModel:
    """Construct the layer stack of ``spec`` with deterministic initial values."""
    spec = ArchitectureSpec.parse(spec) if isinstance(spec, str) else spec
    if spec.uses_mce and not mce_tables:
        raise ConfigurationError(f"{spec.value} needs pre-trained MCE tables")
    if mce_tables and not spec.uses_mce:
        raise ConfigurationError(f"{spec.value} does not take MCE tables")

    constants: Dict[str, np.ndarray] = {}
    if spec.uses_mce:
        replaced = {}
        for stream in Stream:
            table = mce_tables.get(stream)
            if table is None:
                raise ConfigurationError(f"missing MCE table for the {stream.value} stream")
            if table.matrix.shape[0] != dims.vocab(stream):
                raise ConfigurationError(
                    f"MCE {stream.value} table has {table.matrix.shape[0]} rows, vocabulary has {dims.vocab(stream)}"
                )
            constants[f"{stream.value}.mce"] = table.matrix.copy()
            replaced[f"{stream.value}_dim"] = table.dim
        dims = ModelDims(**{**asdict(dims), **replaced})

    params = {name: parameter(_init(seed, name, shape), name) for name, shape in parameter_shapes(spec, dims).items()}
    model = ReadmissionModel(spec, dims, params, constants, seed=seed, policy=policy, dropout_p=dropout_p)
    logger.debug("built %r", model)
    return model


def predict_risk(
    model: ReadmissionModel,
    record: StayRecord,
    training: bool = False,
    rng: RngStream | None = None,
) -> float:
    return float(model.forward(collate([record], model.dims), training, rng).data[0])
