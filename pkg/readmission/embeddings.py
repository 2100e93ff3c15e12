"""
Code embeddings and the ways elapsed time enters them.

Three strategies are supported: plain tables (optionally with the elapsed
time appended as an extra column), embeddings evolved across elapsed time by
a learned vector field integrated with explicit Euler steps, and tables
pre-trained with a time-aware CBOW objective (MCE) in which attention over
log-spaced time buckets replaces a fixed context window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Mapping, NamedTuple, Sequence, Tuple

import numpy as np
import pandas as pd

from .compute import (
    DTYPE,
    Adam,
    ConfigurationError,
    NumericError,
    Value,
    concat,
    log_softmax,
    masked_softmax,
    parameter,
)
from .ehr import Cohort, StayRecord, Stream

logger = logging.getLogger(__name__)

ODE_HIDDEN_LAYERS = 3

Field = Callable[[Value], Value]


def embed_dim(vocab_size: int) -> int:
    """Twice the fourth root of the vocabulary size, rounded, at least 2."""
    if vocab_size < 1:
        raise ConfigurationError(f"vocabulary size must be at least 1, got {vocab_size}")
    return max(2, int(np.floor(2.0 * vocab_size**0.25 + 0.5)))


def init_embedding(vocab_size: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(vocab_size, dim))


@dataclass(frozen=True)
class EmbeddingTable:
    codes: Tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=DTYPE)
        if matrix.ndim != 2 or matrix.shape[0] != len(self.codes):
            raise ConfigurationError(
                f"embedding table has {matrix.shape} rows for {len(self.codes)} codes"
            )
        object.__setattr__(self, "matrix", matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(self.matrix, columns=[f"dim_{j}" for j in range(self.dim)])
        frame.insert(0, "code", list(self.codes))
        frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, path: Path) -> "EmbeddingTable":
        frame = pd.read_csv(path, dtype={"code": str}, keep_default_na=False)
        if "code" not in frame.columns:
            raise ConfigurationError(f"{path}: embedding CSV lacks a 'code' column")
        columns = [c for c in frame.columns if c != "code"]
        return cls(tuple(frame["code"]), frame[columns].to_numpy(dtype=DTYPE))


# -- neural ODE ---------------------------------------------------------------


def init_ode_field(dim: int, rng: np.random.Generator, prefix: str) -> Dict[str, np.ndarray]:
    """Weights of a ``dim -> dim`` MLP with three tanh hidden layers of width ``dim``."""
    arrays = {}
    bound = 1.0 / np.sqrt(dim)
    for layer in range(ODE_HIDDEN_LAYERS + 1):
        arrays[f"{prefix}.w{layer}"] = rng.uniform(-bound, bound, size=(dim, dim))
        arrays[f"{prefix}.b{layer}"] = np.zeros(dim)
    return arrays


def ode_field(params: Mapping[str, Value], prefix: str) -> Field:
    def field(y: Value) -> Value:
        h = y
        for layer in range(ODE_HIDDEN_LAYERS):
            h = (h @ params[f"{prefix}.w{layer}"] + params[f"{prefix}.b{layer}"]).tanh()
        return h @ params[f"{prefix}.w{ODE_HIDDEN_LAYERS}"] + params[f"{prefix}.b{ODE_HIDDEN_LAYERS}"]

    return field


def euler_steps(elapsed, h_max: float, max_steps: int | None = None) -> np.ndarray:
    """max(1, round(elapsed / h_max)), optionally capped at ``max_steps``."""
    if h_max <= 0:
        raise ConfigurationError(f"ODE step size must be positive, got {h_max}")
    steps = np.maximum(1, np.rint(np.asarray(elapsed, dtype=DTYPE) / h_max)).astype(np.int64)
    if max_steps is not None:
        steps = np.minimum(steps, max(1, int(max_steps)))
    return steps


def evolve_ode(e0, elapsed, field: Field, n_steps) -> Value:
    """Integrate ``dy/dt = field(y)`` from ``e0`` over ``elapsed`` with explicit Euler.

    ``e0`` is a vector, or a stack of row vectors with one elapsed time and
    step count per row. Rows whose elapsed time is zero come back unchanged.
    """
    y = e0 if isinstance(e0, Value) else Value(e0)
    elapsed = np.asarray(elapsed, dtype=DTYPE)
    steps = np.broadcast_to(np.asarray(n_steps, dtype=np.int64), elapsed.shape)
    if np.any(steps < 1):
        raise ConfigurationError("n_steps must be at least 1")
    if np.any(elapsed < 0):
        raise ConfigurationError("elapsed time must be non-negative")
    if not np.any(elapsed > 0):
        return y

    h = elapsed / steps
    batched = elapsed.ndim > 0
    for k in range(int(steps.max())):
        active = (k < steps) & (elapsed > 0)
        if not np.any(active):
            break
        step = np.where(active, h, 0.0)
        y = y + field(y) * (step[..., None] if batched else step)
        if not np.all(np.isfinite(y.data)):
            raise NumericError("non-finite ODE state", f"Euler step {k + 1}")
    return y


def concat_time(e, elapsed) -> Value:
    """Append the elapsed time as a trailing column."""
    e = e if isinstance(e, Value) else Value(e)
    column = np.broadcast_to(np.asarray(elapsed, dtype=DTYPE), e.shape[:-1])[..., None]
    return concat([e, Value(column)], axis=-1)


# -- time-aware CBOW (MCE) -----------------------------------------------------


@dataclass(frozen=True)
class MceConfig:
    window: float
    buckets: int = 8
    epochs: int = 5
    lr: float = 0.01
    batch_size: int = 256
    max_context: int = 32

    def __post_init__(self):
        if self.window <= 0:
            raise ConfigurationError("MCE window must be positive")
        if self.buckets < 1 or self.epochs < 0 or self.batch_size < 1 or self.max_context < 1:
            raise ConfigurationError("MCE buckets, batch size and context size must be positive")

    def bucket_edges(self) -> np.ndarray:
        """Upper edges of all but the last bucket, doubling up to ``window / 2``."""
        k = np.arange(self.buckets - 1)
        return self.window * 2.0 ** (k - (self.buckets - 1))


def bucket_of(gaps, edges: np.ndarray) -> np.ndarray:
    return np.searchsorted(edges, np.abs(np.asarray(gaps, dtype=DTYPE)), side="right")


class MceCorpus(NamedTuple):
    targets: np.ndarray  # (P,)
    contexts: np.ndarray  # (P, C) code ids, 0 where masked
    buckets: np.ndarray  # (P, C)
    mask: np.ndarray  # (P, C)

    @property
    def size(self) -> int:
        return len(self.targets)

    def take(self, index: np.ndarray) -> "MceCorpus":
        return MceCorpus(*(array[index] for array in self))


def mce_corpus(records: Sequence[StayRecord], stream: Stream, cfg: MceConfig) -> MceCorpus:
    """One training pair per event that has same-stream neighbours within the window."""
    edges = cfg.bucket_edges()
    targets, contexts, buckets = [], [], []
    for record in records:
        sequence = record.stream(stream)
        if len(sequence) < 2:
            continue
        gaps = np.abs(sequence.elapsed[:, None] - sequence.elapsed[None, :])
        for i in range(len(sequence)):
            near = np.flatnonzero((gaps[i] <= cfg.window) & (np.arange(len(sequence)) != i))
            if near.size == 0:
                continue
            near = near[np.argsort(gaps[i, near], kind="stable")[: cfg.max_context]]
            targets.append(sequence.codes[i])
            contexts.append(sequence.codes[near])
            buckets.append(bucket_of(gaps[i, near], edges))

    width = max((len(c) for c in contexts), default=0)
    n = len(targets)
    corpus = MceCorpus(
        targets=np.asarray(targets, dtype=np.int64),
        contexts=np.zeros((n, width), dtype=np.int64),
        buckets=np.zeros((n, width), dtype=np.int64),
        mask=np.zeros((n, width), dtype=bool),
    )
    for p, (codes, bucket) in enumerate(zip(contexts, buckets)):
        corpus.contexts[p, : len(codes)] = codes
        corpus.buckets[p, : len(codes)] = bucket
        corpus.mask[p, : len(codes)] = True
    return corpus


class MceModel:
    """Input/output tables plus one attention scalar per (target code, time bucket)."""

    def __init__(self, vocab_size: int, dim: int, buckets: int, rng: np.random.Generator):
        self.params: Dict[str, Value] = {
            "in_table": parameter(init_embedding(vocab_size, dim, rng), "in_table"),
            "out_table": parameter(init_embedding(vocab_size, dim, rng), "out_table"),
            "bucket_scores": parameter(np.zeros((vocab_size, buckets)), "bucket_scores"),
        }

    def context_hidden(self, batch: MceCorpus) -> Tuple[Value, Value]:
        """Attention weights over each context and the attended input vectors."""
        scores = self.params["bucket_scores"][(batch.targets[:, None], batch.buckets)]
        alpha = masked_softmax(scores, batch.mask, axis=1)
        vectors = self.params["in_table"][batch.contexts]
        n, width = batch.contexts.shape
        hidden = (alpha.reshape(n, width, 1) * vectors).sum(axis=1)
        return alpha, hidden

    def loss(self, batch: MceCorpus) -> Value:
        _, hidden = self.context_hidden(batch)
        log_probs = log_softmax(hidden @ self.params["out_table"].T, axis=1)
        return -log_probs[(np.arange(batch.size), batch.targets)].mean()


def mce_pretrain(
    cohort: Cohort,
    stream: Stream,
    cfg: MceConfig,
    seed: int,
    records: Sequence[StayRecord] | None = None,
) -> EmbeddingTable:
    """Pre-train an input embedding table for one stream; returns it frozen."""
    vocabulary = cohort.vocab.for_stream(stream)
    if len(vocabulary) == 0:
        raise ConfigurationError(f"empty {stream.value} vocabulary")
    rng = np.random.default_rng(seed)
    model = MceModel(len(vocabulary), embed_dim(len(vocabulary)), cfg.buckets, rng)
    corpus = mce_corpus(cohort.records if records is None else records, stream, cfg)
    if corpus.size == 0:
        logger.warning("no %s context pairs; MCE table left at its initialisation", stream.value)
        return EmbeddingTable(vocabulary.codes, model.params["in_table"].data.copy())

    optimiser = Adam(model.params, lr=cfg.lr)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(corpus.size)
        total = 0.0
        for start in range(0, corpus.size, cfg.batch_size):
            batch = corpus.take(order[start : start + cfg.batch_size])
            optimiser.zero_grad()
            loss = model.loss(batch)
            if not np.isfinite(loss.data):
                raise NumericError("non-finite MCE loss", f"{stream.value} epoch {epoch}")
            loss.backward()
            optimiser.step()
            total += float(loss.data) * batch.size
        logger.info("MCE %s epoch %d: loss %.4f over %d pairs", stream.value, epoch, total / corpus.size, corpus.size)
    return EmbeddingTable(vocabulary.codes, model.params["in_table"].data.copy())
