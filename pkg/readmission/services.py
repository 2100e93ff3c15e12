"""
Orchestration behind the management commands.

Commands parse flags and resolve a ``RunConfig``; everything else happens here.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Tuple

import numpy as np
import pandas as pd
from django.conf import settings
from django.db import transaction
from joblib import Parallel, delayed

from . import reports
from .bayes import (
    BayesianModel,
    code_risk_scores,
    label_codes,
    patient_risk_ci,
    posterior_odds_ratios,
    top_codes,
    train_bbb,
)
from .compute import ConfigurationError, RngStream
from .conf import RunConfig
from .ehr import Cohort, Split, Stream, cohort_summary, generate_synthetic, load_cohort, simulate_frames, split_by_patient, write_frame
from .embeddings import EmbeddingTable, mce_pretrain
from .models import ArchitectureResult, BenchmarkRun, EpochRecord
from .sequence_models import ArchitectureSpec
from .training import ArchitectureOutcome, benchmark_row, train_and_evaluate

logger = logging.getLogger(__name__)

CHECKPOINTS_DIR = "checkpoints"
PREDICTIONS_DIR = "predictions"
MCE_DIR = "mce"
BAYES_DIR = "bayes"


class LoadedCohort(NamedTuple):
    cohort: Cohort
    planted: pd.DataFrame | None  # ground truth of synthetic cohorts


class PreparedData(NamedTuple):
    cohort: Cohort
    planted: pd.DataFrame | None
    split: Split
    split_hash: str


def load_data(config: RunConfig) -> LoadedCohort:
    data = config.data
    if data.has_files:
        cohort = load_cohort(data.stays, data.events, min_code_stays=data.min_code_stays, max_events=data.max_events)
        return LoadedCohort(cohort, None)
    if data.synthetic is not None:
        synthetic = generate_synthetic(data.synthetic, config.seed)
        return LoadedCohort(synthetic.cohort, synthetic.planted)
    raise ConfigurationError("config 'data' needs 'stays' and 'events' paths or a 'synthetic' block")


def prepare(config: RunConfig) -> PreparedData:
    cohort, planted = load_data(config)
    split = split_by_patient(cohort, config.test_fraction, config.val_fraction, config.seed)
    split_hash = split.digest(cohort)
    logger.info(
        "split %s: %d train, %d validation, %d test stays",
        split_hash, len(split.train), len(split.val), len(split.test),
    )
    return PreparedData(cohort, planted, split, split_hash)


def config_json(config: RunConfig) -> Dict:
    """The resolved config as plain JSON values, for storage."""
    return json.loads(json.dumps(config.raw, default=str, sort_keys=True))


# -- synth --------------------------------------------------------------------


def run_synth(config: RunConfig) -> Dict[str, Path]:
    """Write raw stays/events CSVs plus the planted ground truth."""
    if config.data.synthetic is None:
        raise ConfigurationError("synth needs a 'synthetic' block in the data section")
    frames = simulate_frames(config.data.synthetic, config.seed)
    out = Path(config.out)
    paths = {
        "stays": write_frame(frames.stays, out / "stays.csv"),
        "events": write_frame(frames.events, out / "events.csv"),
        "planted": write_frame(frames.planted, out / "planted.csv"),
    }
    logger.info("wrote %d stays and %d events to %s", len(frames.stays), len(frames.events), out)
    return paths


# -- train / benchmark --------------------------------------------------------


def pretrain_tables(prepared: PreparedData, config: RunConfig) -> Dict[Stream, EmbeddingTable]:
    """MCE tables fitted on the training stays only, shared by every MCE architecture."""
    records = prepared.cohort.subset(prepared.split.train)
    tables = {}
    for stream in Stream:
        tables[stream] = mce_pretrain(prepared.cohort, stream, config.mce_config(stream), config.seed, records)
        tables[stream].to_csv(Path(config.out) / MCE_DIR / f"{stream.value}.csv")
    return tables


def _outcome_files(outcome: ArchitectureOutcome, out: Path) -> None:
    if outcome.predictions is not None:
        write_frame(outcome.predictions, out / PREDICTIONS_DIR / f"{outcome.spec.value}.csv")


def run_train(config: RunConfig, spec: ArchitectureSpec) -> ArchitectureOutcome:
    """Train one architecture; aborts raise instead of being recorded."""
    prepared = prepare(config)
    tables = pretrain_tables(prepared, config) if spec.uses_mce else None
    out = Path(config.out)
    outcome = train_and_evaluate(
        spec,
        prepared.cohort,
        prepared.split,
        config.train,
        config.seed,
        config.n_resamples,
        tables,
        config.ode,
        checkpoint_dir=out / CHECKPOINTS_DIR / spec.value,
        record_aborts=False,
    )
    _outcome_files(outcome, out)
    write_frame(reports.epochs_frame({spec.value: outcome.logs}), out / f"epochs_{spec.value}.csv")
    rows = pd.DataFrame(outcome.report.rows(spec.value))
    write_frame(rows, out / f"metrics_{spec.value}.csv")
    return outcome


@dataclass
class BenchmarkReport:
    run: BenchmarkRun
    outcomes: List[ArchitectureOutcome] = field(default_factory=list)
    paths: List[Path] = field(default_factory=list)

    @property
    def results(self) -> List[ArchitectureResult]:
        return list(self.run.results.all())


def run_benchmark(config: RunConfig) -> BenchmarkReport:
    """Train and evaluate every requested architecture on one shared split."""
    if not config.architectures:
        raise ConfigurationError("benchmark needs at least one architecture")
    prepared = prepare(config)
    out = Path(config.out)
    tables = pretrain_tables(prepared, config) if any(s.uses_mce for s in config.architectures) else None

    # workers share the cohort read-only; each owns its model
    outcomes: List[ArchitectureOutcome] = Parallel(n_jobs=config.jobs)(
        delayed(benchmark_row)(
            spec,
            prepared.cohort,
            prepared.split,
            config.train,
            config.seed,
            config.n_resamples,
            tables,
            config.ode,
            out / CHECKPOINTS_DIR / spec.value,
            log_config=settings.LOGGING,
        )
        for spec in config.architectures
    )

    test_labels = prepared.cohort.labels[prepared.split.test]
    prevalence = float(test_labels.mean()) if len(test_labels) else None
    run = save_benchmark(config, prepared, outcomes, prevalence)
    results = list(run.results.all())

    for outcome in outcomes:
        _outcome_files(outcome, out)
    paths = reports.write_benchmark(results, out, prepared.split_hash, prevalence)
    paths.append(
        write_frame(reports.epochs_frame({o.spec.value: o.logs for o in outcomes}), out / reports.EPOCHS_CSV)
    )
    paths.append(write_frame(reports.timings_frame(results), out / reports.TIMINGS_CSV))
    aborted = [o.spec.value for o in outcomes if not o.succeeded]
    logger.info(
        "benchmark run %d finished: %d architectures, %d aborted%s",
        run.pk, len(outcomes), len(aborted), f" ({', '.join(aborted)})" if aborted else "",
    )
    return BenchmarkReport(run=run, outcomes=outcomes, paths=paths)


@transaction.atomic
def save_benchmark(
    config: RunConfig,
    prepared: PreparedData,
    outcomes: List[ArchitectureOutcome],
    prevalence: float | None,
) -> BenchmarkRun:
    run = BenchmarkRun.objects.create(
        seed=config.seed,
        split_hash=prepared.split_hash,
        config=config_json(config),
        output_dir=str(config.out),
        n_test_stays=len(prepared.split.test),
        prevalence=prevalence,
    )
    for position, outcome in enumerate(outcomes):
        result = ArchitectureResult(
            run=run,
            architecture=outcome.spec.value,
            position=position,
            seconds=outcome.seconds,
            n_parameters=outcome.n_parameters,
            best_epoch=outcome.best_epoch,
            error=outcome.error,
        )
        if outcome.report is not None:
            result.set_report(outcome.report)
        result.save()
        EpochRecord.objects.bulk_create([EpochRecord.from_log(result, log) for log in outcome.logs])
    return run


# -- interpret ----------------------------------------------------------------


@dataclass
class InterpretReport:
    odds_ratios: pd.DataFrame
    code_scores: Dict[Stream, pd.DataFrame]
    top: Dict[Stream, pd.DataFrame]
    planted_recovered: int | None = None
    stop_epoch: int = 0
    paths: List[Path] = field(default_factory=list)


def bayes_dir(config: RunConfig) -> Path:
    return Path(config.out) / BAYES_DIR


def _streams_rngs(seed: int) -> Tuple[RngStream, RngStream, RngStream]:
    root = RngStream(seed)
    return root.spawn(10), root.spawn(11), root.spawn(12)


def run_interpret(config: RunConfig) -> InterpretReport:
    """Bayes-by-Backprop on every stay, then the odds-ratio and code-score tables."""
    cohort, planted = load_data(config)
    result = train_bbb(cohort, config.bayes, config.seed, config.ode)
    out = bayes_dir(config)
    result.model.save(out)
    write_frame(
        pd.DataFrame({"epoch": np.arange(1, len(result.elbo) + 1), "negative_elbo": result.elbo}),
        out / "elbo.csv",
    )

    options = config.interpret
    or_rng, dp_rng, mv_rng = _streams_rngs(config.seed)
    odds = posterior_odds_ratios(result.model, options.or_samples, or_rng)
    paths = reports.write_odds_ratios(odds, out, options.or_samples)

    ranked, best = {}, {}
    for stream, rng in ((Stream.DP, dp_rng), (Stream.MV, mv_rng)):
        frame = label_codes(
            code_risk_scores(result.model, stream, options.code_samples, rng),
            cohort.vocab.for_stream(stream).codes,
        )
        ranked[stream], best[stream] = frame, top_codes(frame, options.top_k)
        paths += reports.write_code_scores(frame, best[stream], stream.value, out, options.code_samples)

    recovered = None
    if planted is not None:
        planted_codes = {c for c in planted["code"] if not str(c).startswith("static:")}
        recovered = len(planted_codes & set(best[Stream.DP]["code"]))
        logger.info("%d of %d planted codes in the top %d", recovered, len(planted_codes), options.top_k)
    return InterpretReport(odds, ranked, best, recovered, result.stop_epoch, paths)


def query_stay(config: RunConfig, stay_id: str) -> Tuple[float, float, float]:
    """Risk of one stay with its 95% credible interval, from the stored posterior."""
    directory = bayes_dir(config)
    if not directory.is_dir():
        raise ConfigurationError(f"no Bayesian checkpoint in {directory}; run interpret first")
    model = BayesianModel.load(directory)
    cohort, _ = load_data(config)
    dims = model.base.dims
    if (dims.dp_hash, dims.mv_hash) != (cohort.vocab.dp.digest(), cohort.vocab.mv.digest()):
        raise ConfigurationError("checkpoint vocabularies do not match the configured cohort")
    try:
        record = cohort.record(stay_id)
    except KeyError as exc:
        raise ConfigurationError(f"unknown stay id {stay_id!r}") from exc
    return patient_risk_ci(model, record, config.interpret.patient_samples, RngStream(config.seed).spawn(13))


# -- report -------------------------------------------------------------------


def latest_run(run_id: int | None = None) -> BenchmarkRun:
    runs = BenchmarkRun.objects.all()
    run = runs.filter(pk=run_id).first() if run_id is not None else runs.first()
    if run is None:
        raise ConfigurationError("no stored benchmark run" if run_id is None else f"no benchmark run {run_id}")
    return run


def run_report(run_id: int | None = None, config: RunConfig | None = None, out: Path | None = None) -> List[Path]:
    """Re-render the comparison table of a stored run; with a config also the cohort summary."""
    paths: List[Path] = []
    out_dir = Path(out) if out is not None else (Path(config.out) if config is not None else None)
    if config is not None:
        cohort, _ = load_data(config)
        paths += reports.write_cohort_summary(cohort_summary(cohort), out_dir)
    if run_id is not None or BenchmarkRun.objects.exists():
        run = latest_run(run_id)
        target = out_dir if out_dir is not None else Path(run.output_dir)
        paths += reports.write_benchmark(list(run.results.all()), target, run.split_hash, run.prevalence)
    elif config is None:
        raise ConfigurationError("nothing to report: no stored benchmark run and no --config")
    return paths


def summarise_paths(paths: Mapping[str, Path] | List[Path]) -> str:
    values = paths.values() if isinstance(paths, Mapping) else paths
    return "\n".join(str(p) for p in values)
