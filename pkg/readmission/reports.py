"""
CSV and markdown rendering of benchmark, interpretation and cohort tables.

CSV files are the machine-readable form; markdown tables are rendered through
the ``readmission/table.md`` template.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, List, Mapping, Sequence

import numpy as np
import pandas as pd
from django.template.loader import render_to_string

from .ehr import STATIC_LABELS, write_frame
from .metrics import METRICS, Interval

logger = logging.getLogger(__name__)

TABLE_TEMPLATE = "readmission/table.md"
METRIC_HEADERS = {
    "ap": "AP",
    "auroc": "AUROC",
    "f1": "F1",
    "sensitivity": "Sensitivity",
    "specificity": "Specificity",
}
MISSING = "n/a"

# published figures on the credentialed MIMIC-III cohort; not reproducible here
REFERENCE_NOTES = (
    "Reference values reported on MIMIC-III, cited for context only (not reproducible on these data):",
    "- ODE + RNN: AP 0.331, AUROC 0.739",
    "- Logistic regression: AP 0.257",
)

BENCHMARK_CSV = "table1.csv"
BENCHMARK_MD = "table1.md"
EPOCHS_CSV = "epochs.csv"
TIMINGS_CSV = "timings.csv"
ODDS_CSV = "odds_ratios.csv"
ODDS_MD = "odds_ratios.md"
SUMMARY_CSV = "cohort_summary.csv"
SUMMARY_MD = "cohort_summary.md"


def render_table(
    title: str,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    caption: str = "",
    notes: Sequence[str] = (),
) -> str:
    return render_to_string(
        TABLE_TEMPLATE,
        {
            "title": title,
            "caption": caption,
            "header": list(header),
            "rows": [[str(cell).replace("|", "\\|") for cell in row] for row in rows],
            "notes": list(notes),
        },
    )


def write_text(text: str, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def format_interval(interval: Interval | None, digits: int = 3) -> str:
    return MISSING if interval is None else interval.format(digits)


# -- benchmark ----------------------------------------------------------------


def benchmark_frame(results: Sequence) -> pd.DataFrame:
    """Long format: one row per (architecture, metric).

    ``results`` are ``ArchitectureResult`` rows or anything exposing
    ``architecture``, ``error`` and ``interval(metric)``.
    """
    rows = []
    for result in results:
        for metric in METRICS:
            interval = None if result.error else result.interval(metric)
            rows.append(
                {
                    "architecture": result.architecture,
                    "metric": metric,
                    "point": np.nan if interval is None else interval.point,
                    "lo": np.nan if interval is None else interval.lo,
                    "hi": np.nan if interval is None else interval.hi,
                    "error": result.error,
                }
            )
    return pd.DataFrame(rows, columns=["architecture", "metric", "point", "lo", "hi", "error"])


def benchmark_markdown(results: Sequence, split_hash: str, prevalence: float | None = None) -> str:
    header = ["Architecture", *METRIC_HEADERS.values(), "Parameters"]
    rows = []
    for result in results:
        if result.error:
            rows.append([result.architecture, *(["aborted"] * len(METRICS)), MISSING])
            continue
        rows.append(
            [
                result.architecture,
                *(format_interval(result.interval(metric)) for metric in METRICS),
                f"{result.n_parameters:,}",
            ]
        )
    caption = f"Test split {split_hash}; mean [95% confidence interval] over patient-level bootstrap resamples."
    if prevalence is not None:
        caption += f" Test prevalence {prevalence:.3f}."
    notes = [f"- {r.architecture} aborted: {r.error}" for r in results if r.error]
    if notes:
        notes.append("")
    notes.extend(REFERENCE_NOTES)
    return render_table("Model comparison", header, rows, caption, notes)


def write_benchmark(results: Sequence, out_dir: Path, split_hash: str, prevalence: float | None = None) -> List[Path]:
    out_dir = Path(out_dir)
    paths = [
        write_frame(benchmark_frame(results), out_dir / BENCHMARK_CSV),
        write_text(benchmark_markdown(results, split_hash, prevalence), out_dir / BENCHMARK_MD),
    ]
    logger.info("wrote benchmark table for %d architectures to %s", len(results), out_dir)
    return paths


def epochs_frame(logs: Mapping[str, Sequence]) -> pd.DataFrame:
    rows = [
        {"architecture": name, "epoch": log.epoch, "train_loss": log.train_loss, "val_ap": log.val_ap}
        for name, entries in logs.items()
        for log in entries
    ]
    return pd.DataFrame(rows, columns=["architecture", "epoch", "train_loss", "val_ap"])


def timings_frame(results: Sequence) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"architecture": r.architecture, "seconds": r.seconds, "n_parameters": r.n_parameters, "best_epoch": r.best_epoch}
            for r in results
        ],
        columns=["architecture", "seconds", "n_parameters", "best_epoch"],
    )


# -- interpretation -----------------------------------------------------------


def excludes_one(lo: float, hi: float) -> bool:
    return lo > 1.0 or hi < 1.0


def format_odds_ratio(mean: float, lo: float, hi: float) -> str:
    """``"1.000 [1.000,1.000]"``; a trailing ``*`` marks a credible interval excluding 1."""
    text = f"{mean:.3f} [{lo:.3f},{hi:.3f}]"
    return text + "*" if excludes_one(lo, hi) else text


def covariate_label(name: str) -> str:
    if name in STATIC_LABELS:
        return STATIC_LABELS[name]
    return {"dp_score": "Diagnoses/procedures score", "mv_score": "Medications/vitals score"}.get(name, name)


def odds_ratio_markdown(frame: pd.DataFrame, n_samples: int) -> str:
    rows = [
        [covariate_label(row.covariate), format_odds_ratio(row.or_mean, row.or_lo, row.or_hi)]
        for row in frame.itertuples(index=False)
    ]
    return render_table(
        "Odds ratios",
        ["Covariate", "OR [95% credible interval]"],
        rows,
        caption=f"Mean of exp(w) over {n_samples:,} posterior samples of the final-layer weights.",
        notes=["* credible interval excludes 1"],
    )


def write_odds_ratios(frame: pd.DataFrame, out_dir: Path, n_samples: int) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        write_frame(frame, out_dir / ODDS_CSV),
        write_text(odds_ratio_markdown(frame, n_samples), out_dir / ODDS_MD),
    ]


def code_scores_markdown(frame: pd.DataFrame, stream_name: str, n_samples: int) -> str:
    rows = [
        [rank, row.code, f"{row.score_mean:.3f} [{row.score_lo:.3f}, {row.score_hi:.3f}]"]
        for rank, row in enumerate(frame.itertuples(index=False), start=1)
    ]
    return render_table(
        f"Highest risk {stream_name} codes",
        ["Rank", "Code", "Score [95% credible interval]"],
        rows,
        caption=f"Score head applied to single codes at discharge, {n_samples:,} posterior samples.",
    )


def write_code_scores(
    ranked: pd.DataFrame, top: pd.DataFrame, stream_name: str, out_dir: Path, n_samples: int
) -> List[Path]:
    """Full ranking as CSV, top rows as markdown."""
    out_dir = Path(out_dir)
    columns = ["code", "score_mean", "score_lo", "score_hi"]
    return [
        write_frame(ranked[columns], out_dir / f"code_scores_{stream_name}.csv"),
        write_frame(top[columns], out_dir / f"top_codes_{stream_name}.csv"),
        write_text(code_scores_markdown(top, stream_name, n_samples), out_dir / f"top_codes_{stream_name}.md"),
    ]


# -- cohort summary -----------------------------------------------------------


def write_cohort_summary(frame: pd.DataFrame, out_dir: Path) -> List[Path]:
    out_dir = Path(out_dir)
    markdown = render_table(
        "Baseline characteristics",
        ["Characteristic", "Value"],
        frame.itertuples(index=False),
        caption="Mean (SD) for continuous values, count (%) for indicators.",
    )
    return [write_frame(frame, out_dir / SUMMARY_CSV), write_text(markdown, out_dir / SUMMARY_MD)]
