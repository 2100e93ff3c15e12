"""
Run configuration.

Values are layered, later layers winning:

1. ``settings.READMISSION`` defaults,
2. the JSON file passed with ``--config``,
3. ``READMISSION_<SECTION>__<KEY>`` environment variables (top-level keys use
   ``READMISSION_<KEY>``), values parsed as JSON when they parse,
4. command-line flags.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

from django.conf import settings

from .bayes import BayesConfig
from .compute import ConfigurationError
from .ehr import MIN_CODE_STAYS, Stream, SyntheticConfig
from .embeddings import MceConfig
from .sequence_models import ArchitectureSpec, OdePolicy
from .training import TrainConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "READMISSION_"
SECTIONS = ("data", "train", "split", "ode", "mce", "bayes", "interpret", "evaluation")
TOP_LEVEL = ("seed", "out", "architectures", "jobs")
DEFAULT_OUT = "out"


def deep_merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(dict(merged[key]), value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return data


def _parse_env_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ: Mapping[str, str] | None = None) -> Dict[str, Any]:
    """Config overrides from the environment; unrelated READMISSION_* names are ignored."""
    environ = os.environ if environ is None else environ
    overrides: Dict[str, Any] = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if "__" in key:
            section, option = key.split("__", 1)
            if section in SECTIONS:
                overrides.setdefault(section, {})[option] = _parse_env_value(raw)
        elif key in TOP_LEVEL:
            overrides[key] = _parse_env_value(raw)
    return overrides


@dataclass(frozen=True)
class DataConfig:
    stays: Path | None = None
    events: Path | None = None
    synthetic: SyntheticConfig | None = None
    min_code_stays: int = MIN_CODE_STAYS
    max_events: int | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "DataConfig":
        mapping = dict(mapping)
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown data settings: {sorted(unknown)}")
        min_code_stays = int(mapping.get("min_code_stays", MIN_CODE_STAYS))
        max_events = mapping.get("max_events")
        synthetic = mapping.get("synthetic")
        if synthetic is not None:
            synthetic = SyntheticConfig.from_mapping(
                {"min_code_stays": min_code_stays, "max_events": max_events, **synthetic}
            )
        stays, events = mapping.get("stays"), mapping.get("events")
        if (stays is None) != (events is None):
            raise ConfigurationError("data needs both 'stays' and 'events' paths")
        return cls(
            stays=Path(stays) if stays is not None else None,
            events=Path(events) if events is not None else None,
            synthetic=synthetic,
            min_code_stays=min_code_stays,
            max_events=None if max_events is None else int(max_events),
        )

    @property
    def has_files(self) -> bool:
        return self.stays is not None


@dataclass(frozen=True)
class InterpretConfig:
    or_samples: int = 10_000
    code_samples: int = 10_000
    patient_samples: int = 10_000
    top_k: int = 10

    def __post_init__(self):
        if min(self.or_samples, self.code_samples, self.patient_samples, self.top_k) < 1:
            raise ConfigurationError("interpretation sample counts and top_k must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    out: Path
    architectures: Tuple[ArchitectureSpec, ...]
    data: DataConfig
    train: TrainConfig
    bayes: BayesConfig
    ode: OdePolicy
    mce: Mapping[str, Any]
    interpret: InterpretConfig
    test_fraction: float = 0.1
    val_fraction: float = 0.1
    n_resamples: int = 100
    jobs: int = 1
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def mce_config(self, stream: Stream) -> MceConfig:
        options = dict(self.mce)
        windows = {Stream.DP: options.pop("window_dp"), Stream.MV: options.pop("window_mv")}
        return MceConfig(window=float(windows[Stream(stream)]), **options)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "RunConfig":
        unknown = set(mapping) - set(SECTIONS) - set(TOP_LEVEL)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        if mapping.get("seed") is None:
            raise ConfigurationError("a seed is required (config 'seed' or --seed)")
        try:
            seed = int(mapping["seed"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"seed must be an integer, got {mapping['seed']!r}") from exc
        if seed < 0:
            raise ConfigurationError("seed must be non-negative")

        names = mapping.get("architectures") or [spec.value for spec in ArchitectureSpec]
        if isinstance(names, str):
            names = [names]
        architectures = tuple(ArchitectureSpec.parse(name) for name in names)
        if len(set(architectures)) != len(architectures):
            raise ConfigurationError("architectures must not repeat")

        ode = dict(mapping.get("ode", {}))
        split = dict(mapping.get("split", {}))
        mce = dict(mapping.get("mce", {}))
        unknown_mce = set(mce) - {"window_dp", "window_mv"} - set(MceConfig.__dataclass_fields__)
        if unknown_mce or not {"window_dp", "window_mv"} <= set(mce):
            raise ConfigurationError(f"mce needs window_dp and window_mv; unknown keys {sorted(unknown_mce)}")
        jobs = int(mapping.get("jobs", 1))
        if jobs < 1:
            raise ConfigurationError("jobs must be at least 1")

        config = cls(
            seed=seed,
            out=Path(mapping.get("out") or DEFAULT_OUT),
            architectures=architectures,
            data=DataConfig.from_mapping(mapping.get("data", {})),
            train=TrainConfig.from_mapping(mapping.get("train", {})),
            bayes=BayesConfig.from_mapping(mapping.get("bayes", {})),
            ode=OdePolicy(**ode),
            mce=mce,
            interpret=InterpretConfig(**mapping.get("interpret", {})),
            test_fraction=float(split.get("test_fraction", 0.1)),
            val_fraction=float(split.get("val_fraction", 0.1)),
            n_resamples=int(mapping.get("evaluation", {}).get("n_resamples", 100)),
            jobs=jobs,
            raw=copy.deepcopy(dict(mapping)),
        )
        for stream in Stream:
            config.mce_config(stream)
        return config


def load_run_config(
    path: Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    merged = copy.deepcopy(getattr(settings, "READMISSION", {}))
    if path is not None:
        merged = deep_merge(merged, read_config_file(path))
    merged = deep_merge(merged, env_overrides(environ))
    merged = deep_merge(merged, {k: v for k, v in (overrides or {}).items() if v not in (None, [], ())})
    try:
        config = RunConfig.from_mapping(merged)
    except TypeError as exc:
        # unexpected keyword in one of the sections
        raise ConfigurationError(str(exc)) from exc
    logger.debug("resolved run config: %s", json.dumps(config.raw, default=str, sort_keys=True))
    return config
