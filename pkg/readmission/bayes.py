"""
Bayes-by-Backprop training of the attention-with-concatenated-time model and
the interpretation outputs derived from its weight posterior.

Every parameter gets a diagonal Gaussian posterior ``N(mu, softplus(rho)^2)``
against a scale mixture of two zero-mean Gaussians. The trained posterior
yields odds ratios for the final-layer covariates, risk scores for single
codes and credible intervals around an individual stay's predicted risk.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from . import archive
from .compute import DTYPE, Adam, ConfigurationError, RngStream, Value, parameter, weighted_bce
from .ehr import OTHER, STATIC_FEATURES, Cohort, StayRecord, Stream
from .sequence_models import (
    ArchitectureSpec,
    Batch,
    ModelDims,
    OdePolicy,
    ReadmissionModel,
    build_model,
    collate,
)
from .training import TrainingAborted, class_weight

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
RHO_FLOOR = -40.0
FINAL_COVARIATES = STATIC_FEATURES + ("dp_score", "mv_score")


def _gaussian_log_density(w, sigma: float):
    return -LOG_SQRT_2PI - math.log(sigma) - w * w / (2.0 * sigma * sigma)


@dataclass(frozen=True)
class ScaleMixturePrior:
    pi: float = 0.5
    sigma1: float = 1.0
    sigma2: float = math.exp(-6.0)

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise ConfigurationError(f"mixture weight must lie in (0, 1), got {self.pi}")
        if not self.sigma1 > self.sigma2 > 0.0:
            raise ConfigurationError("scale mixture needs sigma1 > sigma2 > 0")

    def _components(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return (
            math.log(self.pi) + _gaussian_log_density(w, self.sigma1),
            math.log(1.0 - self.pi) + _gaussian_log_density(w, self.sigma2),
        )

    def log_density(self, w) -> np.ndarray:
        return np.logaddexp(*self._components(np.asarray(w, dtype=DTYPE)))

    def log_prob(self, w: Value) -> Value:
        """Summed log density as a graph node."""
        first, second = self._components(w.data)
        total = np.logaddexp(first, second)
        r1, r2 = np.exp(first - total), np.exp(second - total)
        slope = -w.data * (r1 / self.sigma1**2 + r2 / self.sigma2**2)
        return Value.from_op(total.sum(), (w,), lambda g: (g * slope,))


@dataclass(frozen=True)
class GaussianPrior:
    sigma: float = 1.0

    def log_density(self, w) -> np.ndarray:
        return _gaussian_log_density(np.asarray(w, dtype=DTYPE), self.sigma)

    def log_prob(self, w: Value) -> Value:
        return Value.from_op(
            self.log_density(w.data).sum(), (w,), lambda g: (-g * w.data / self.sigma**2,)
        )


Prior = ScaleMixturePrior | GaussianPrior


def log_prior(w, prior: Prior = ScaleMixturePrior()) -> float | np.ndarray:
    density = prior.log_density(w)
    return float(density) if np.ndim(density) == 0 else density


def softplus_sigma(rho) -> np.ndarray:
    return np.logaddexp(0.0, np.maximum(np.asarray(rho, dtype=DTYPE), RHO_FLOOR))


@dataclass
class GaussianPosterior:
    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=DTYPE)
        self.rho = np.asarray(self.rho, dtype=DTYPE)
        if self.mu.shape != self.rho.shape:
            raise ConfigurationError("mu and rho must share a shape")

    @classmethod
    def from_sigma(cls, mu, sigma) -> "GaussianPosterior":
        sigma = np.asarray(sigma, dtype=DTYPE)
        return cls(mu, np.log(np.expm1(sigma)))

    @property
    def sigma(self) -> np.ndarray:
        return softplus_sigma(self.rho)

    def log_q(self, w) -> np.ndarray:
        sigma = self.sigma
        return -np.log(sigma) - LOG_SQRT_2PI - (np.asarray(w) - self.mu) ** 2 / (2.0 * sigma**2)

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        return self.mu + self.sigma * rng.normal(size=(n,) + self.mu.shape)


def monte_carlo_kl(posterior: GaussianPosterior, prior: Prior, n_samples: int, rng: RngStream) -> float:
    """Mean of log q(w) - log p(w) over posterior draws."""
    w = posterior.sample(n_samples, rng)
    return float(np.mean(posterior.log_q(w) - prior.log_density(w)))


def _sigma(rho: Value) -> Value:
    return rho.clip(RHO_FLOOR, np.inf).softplus()


def _log_q(w: Value, mu: Value, sigma: Value) -> Value:
    return (-(sigma.log()) - LOG_SQRT_2PI - (w - mu) ** 2 / (sigma**2 * 2.0)).sum()


class BayesianModel:
    """An AttnConcatTime model whose parameters are all variational."""

    def __init__(self, base: ReadmissionModel, rho: Dict[str, Value], prior: Prior = ScaleMixturePrior()):
        if base.spec is not ArchitectureSpec.ATTN_CONCAT_TIME:
            raise ConfigurationError(f"variational training covers AttnConcatTime only, got {base.spec.value}")
        self.base = base
        self.mu = base.params
        self.rho = rho
        self.prior = prior

    @classmethod
    def from_model(cls, base: ReadmissionModel, prior: Prior = ScaleMixturePrior(), rho_init: float = -5.0):
        rho = {name: parameter(np.full(value.shape, rho_init), f"rho:{name}") for name, value in base.params.items()}
        return cls(base, rho, prior)

    @property
    def variational_params(self) -> Dict[str, Value]:
        return {**{f"mu:{k}": v for k, v in self.mu.items()}, **{f"rho:{k}": v for k, v in self.rho.items()}}

    def posterior(self, name: str) -> GaussianPosterior:
        return GaussianPosterior(self.mu[name].data.copy(), self.rho[name].data.copy())

    def draw_noise(self, rng: RngStream) -> Dict[str, np.ndarray]:
        return {name: rng.normal(size=value.shape) for name, value in self.mu.items()}

    def sample_weights(self, noise: Mapping[str, np.ndarray]) -> Tuple[Dict[str, Value], Value]:
        """Reparameterised weights and the summed log q - log p of this draw."""
        weights: Dict[str, Value] = {}
        divergence = Value(0.0)
        for name, mu in self.mu.items():
            sigma = _sigma(self.rho[name])
            w = mu + sigma * noise[name]
            weights[name] = w
            divergence = divergence + _log_q(w, mu, sigma) - self.prior.log_prob(w)
        return weights, divergence

    def sampled_arrays(self, noise: Mapping[str, np.ndarray]) -> Dict[str, Value]:
        return {
            name: Value(self.mu[name].data + softplus_sigma(self.rho[name].data) * noise[name])
            for name in self.mu
        }

    def predict_mean(self, records: Sequence[StayRecord], batch_size: int = 512) -> np.ndarray:
        return self.base.predict(records, batch_size)

    # -- persistence --

    def save(self, directory: Path) -> Path:
        arrays = {f"mu:{k}": v.data for k, v in self.mu.items()}
        arrays.update({f"rho:{k}": v.data for k, v in self.rho.items()})
        arrays.update({f"const:{k}": v for k, v in self.base.constants.items()})
        manifest = {**self.base.manifest(), "kind": "bayes", "prior": {type(self.prior).__name__: asdict(self.prior)}}
        return archive.save_checkpoint(directory, arrays, manifest)

    @classmethod
    def load(cls, directory: Path) -> "BayesianModel":
        arrays, manifest = archive.load_checkpoint(directory)
        if manifest.get("kind") != "bayes":
            raise archive.ArchiveError(f"{directory} does not hold a variational checkpoint")
        base_arrays = {k[3:]: v for k, v in arrays.items() if k.startswith("mu:")}
        base_arrays.update({k: v for k, v in arrays.items() if k.startswith("const:")})
        base = ReadmissionModel.from_arrays(base_arrays, manifest)
        rho = {name: parameter(arrays[f"rho:{name}"], f"rho:{name}") for name in base.params}
        (prior_kind, prior_args), = manifest["prior"].items()
        prior = GaussianPrior(**prior_args) if prior_kind == "GaussianPrior" else ScaleMixturePrior(**prior_args)
        return cls(base, rho, prior)


def elbo_loss(
    model: BayesianModel,
    batch: Batch,
    n_mc: int,
    kl_scale: float,
    rng: RngStream | None = None,
    w_pos: float = 1.0,
    noise: Sequence[Mapping[str, np.ndarray]] | None = None,
) -> Value:
    """Negative ELBO of one batch averaged over ``n_mc`` weight draws.

    Passing ``noise`` freezes the draws, which makes the loss a deterministic
    function of (mu, rho).
    """
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    if n_mc < 1:
        raise ConfigurationError("n_mc must be at least 1")
    if noise is None:
        if rng is None:
            raise ConfigurationError("elbo_loss needs a random stream or frozen noise")
        noise = [model.draw_noise(rng) for _ in range(n_mc)]
    total = Value(0.0)
    for draw in noise[:n_mc]:
        weights, divergence = model.sample_weights(draw)
        likelihood = weighted_bce(model.base.forward(batch, params=weights), batch.labels, w_pos).sum()
        total = total + divergence * kl_scale + likelihood
    return total / float(n_mc)


class EarlyStopping:
    """Stop once the monitored loss has not decreased for ``patience`` epochs."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.stale = 0
        self.epoch = 0

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best, self.stale = loss, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass(frozen=True)
class BayesConfig:
    lr: float = 0.001
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    n_mc: int = 1
    rho_init: float = -5.0
    prior_pi: float = 0.5
    prior_sigma1: float = 1.0
    prior_sigma2: float = math.exp(-6.0)
    class_weight: float | str = "auto"

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1 or self.n_mc < 1:
            raise ConfigurationError("Bayesian training settings must be positive")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "BayesConfig":
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown bayes settings: {sorted(unknown)}")
        return cls(**dict(mapping))

    @property
    def prior(self) -> ScaleMixturePrior:
        return ScaleMixturePrior(self.prior_pi, self.prior_sigma1, self.prior_sigma2)


@dataclass
class BbbResult:
    model: BayesianModel
    elbo: List[float] = field(default_factory=list)
    stop_epoch: int = 0
    seconds: float = 0.0


def train_bbb(
    cohort: Cohort,
    config: BayesConfig,
    seed: int,
    policy: OdePolicy | None = None,
    records: Sequence[StayRecord] | None = None,
) -> BbbResult:
    """Fit the posterior on every stay (dropout off) until the ELBO stalls."""
    started = time.perf_counter()
    records = list(cohort.records if records is None else records)
    if not records:
        raise ConfigurationError("empty cohort")
    w_pos = class_weight([r.label for r in records]) if config.class_weight == "auto" else float(config.class_weight)
    base = build_model(ArchitectureSpec.ATTN_CONCAT_TIME, ModelDims.from_cohort(cohort), seed, policy=policy, dropout_p=0.0)
    model = BayesianModel.from_model(base, config.prior, config.rho_init)
    optimiser = Adam(model.variational_params, lr=config.lr)
    rng = RngStream(seed)
    noise_rng = rng.spawn(2)
    n_batches = math.ceil(len(records) / config.batch_size)
    stopper = EarlyStopping(config.patience)

    history: List[float] = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(records))
        epoch_loss = 0.0
        for number, start in enumerate(range(0, len(order), config.batch_size), start=1):
            batch = collate([records[i] for i in order[start : start + config.batch_size]], base.dims)
            optimiser.zero_grad()
            loss = elbo_loss(model, batch, config.n_mc, 1.0 / n_batches, noise_rng, w_pos)
            if not np.isfinite(loss.data):
                raise TrainingAborted("non-finite ELBO", epoch, number)
            loss.backward()
            optimiser.step()
            epoch_loss += float(loss.data)
        history.append(epoch_loss)
        logger.info("bayes epoch %d: negative ELBO %.3f", epoch, epoch_loss)
        if stopper.update(epoch_loss):
            break

    logger.info("bayes training stopped at epoch %d (best %.3f)", stopper.epoch, stopper.best)
    return BbbResult(model, history, stopper.epoch, time.perf_counter() - started)


# -- interpretation -----------------------------------------------------------


def posterior_odds_ratios(model: BayesianModel, n_samples: int = 10_000, rng: RngStream | None = None) -> pd.DataFrame:
    """exp(w) summaries for each final-layer weight (23 statics and two stream scores)."""
    rng = rng or RngStream(0)
    posterior = model.posterior("final.w")
    odds = np.exp(posterior.sample(n_samples, rng))
    lo, hi = np.percentile(odds, [2.5, 97.5], axis=0)
    return pd.DataFrame(
        {
            "covariate": list(FINAL_COVARIATES),
            "or_mean": odds.mean(axis=0),
            "or_lo": lo,
            "or_hi": hi,
            "or_at_mean": np.exp(posterior.mu),
        }
    )


def code_risk_scores(
    model: BayesianModel,
    stream: Stream,
    n_samples: int = 10_000,
    rng: RngStream | None = None,
    chunk: int = 500,
) -> pd.DataFrame:
    """Score head applied to each code's embedding with elapsed time 0, ranked by mean.

    Scores are negated when the posterior mean of the stream's final-layer
    weight is negative, so a higher score always means a higher risk.
    """
    rng = rng or RngStream(0)
    stream = Stream(stream)
    prefix = stream.value
    table = model.posterior(f"{prefix}.embedding")
    head_w = model.posterior(f"{prefix}.score.w")
    head_b = model.posterior(f"{prefix}.score.b")
    d = table.mu.shape[1]
    final_weight = model.posterior("final.w").mu[FINAL_COVARIATES.index(f"{prefix}_score")]
    orientation = -1.0 if final_weight < 0 else 1.0

    draws = []
    for start in range(0, n_samples, chunk):
        k = min(chunk, n_samples - start)
        rows = table.sample(k, rng)  # (k, V, d)
        w = head_w.sample(k, rng)[:, :d]  # time column meets elapsed = 0
        b = head_b.sample(k, rng)
        draws.append(np.einsum("kvd,kd->kv", rows, w) + b[:, None])
    scores = orientation * np.concatenate(draws, axis=0)
    lo, hi = np.percentile(scores, [2.5, 97.5], axis=0)

    frame = pd.DataFrame(
        {
            "code_id": np.arange(scores.shape[1]),
            "score_mean": scores.mean(axis=0),
            "score_lo": lo,
            "score_hi": hi,
        }
    )
    return frame.sort_values(["score_mean", "code_id"], ascending=[False, True], kind="mergesort").reset_index(drop=True)


def label_codes(frame: pd.DataFrame, codes: Sequence[str]) -> pd.DataFrame:
    """Attach code strings to a ``code_risk_scores`` frame."""
    labelled = frame.copy()
    labelled.insert(0, "code", [codes[i] for i in labelled["code_id"]])
    return labelled


def top_codes(frame: pd.DataFrame, k: int = 10) -> pd.DataFrame:
    if "code" in frame.columns:
        frame = frame[frame["code"] != OTHER]
    else:
        frame = frame[frame["code_id"] != 0]
    return frame.head(k).reset_index(drop=True)


def patient_risk_ci(
    model: BayesianModel,
    record: StayRecord,
    n_samples: int = 10_000,
    rng: RngStream | None = None,
) -> Tuple[float, float, float]:
    """(mean, 2.5th, 97.5th percentile) of the risk over posterior draws."""
    rng = rng or RngStream(0)
    batch = collate([record], model.base.dims)
    risks = np.empty(n_samples)
    for i in range(n_samples):
        weights = model.sampled_arrays(model.draw_noise(rng))
        risks[i] = float(expit(model.base.logits(batch, params=weights).data[0]))
    lo, hi = np.percentile(risks, [2.5, 97.5])
    return float(risks.mean()), float(lo), float(hi)
