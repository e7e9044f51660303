"""
pipeline.py
End-to-end disjoint generative model runs driven by a YAML configuration.

Module Purpose:
    - PipelineConfig and its sections: parsed and validated from YAML
    - synthesize: split -> partition -> fit/sample per partition -> join -> evaluate
    - run_synth / run_eval: the same, writing outputs and a reproducibility manifest

Configuration layout:
    dataset:    {csv, schema, holdout_fraction} or {dummy: {k1, k2, n, gamma, base_seed}}
    partition:  {mode: random|correlation|explicit, n_p, explicit: {part1: [...], ...}}
    generators: one GeneratorConfig mapping per partition
    join:       JoinConfig fields
    validator:  {backend, grid: full|degraded, calibrate}
    eval:       {label_column}
    seeds:      {master, repeats}
    experiment: {n_p_values, thetas, gammas, backends}  (optional)

Assumptions & Limitations:
    - Every partition samples ceil(max oversample_factor * target_size) rows,
      so all parts have equal length before joining.
    - Relative dataset paths are resolved against the config file's directory.
"""

from __future__ import annotations

import hashlib
import logging
import math
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Sequence

import joblib
import numpy as np
import pandas as pd
import scipy
import sklearn
import yaml
from joblib import Parallel, delayed

import dgm
from dgm.data_loader import DataLoader, atomic_write_text, load_csv, load_csv_like, write_csv
from dgm.dummy_data import DEFAULT_GAMMAS, DummyDataError, DummySpec, sample_dummy
from dgm.generators import GeneratorConfig, GeneratorError, fit
from dgm.joiner import (
    JoinConfig,
    JoinError,
    JoinStrategy,
    JoinTrace,
    Scorer,
    build_validator_training,
    concat_join,
    validated_join,
)
from dgm.metrics import MetricsReport, evaluate_all
from dgm.partitioner import (
    PartitionError,
    PartitionSpec,
    correlation_partition,
    explicit_partition,
    random_partition,
)
from dgm.tabular import DataTable, SplitPair, derive_seed, split
from dgm.validator import (
    HyperparameterGrid,
    ReliabilityCurve,
    ValidatorBackend,
    ValidatorError,
    ValidatorModel,
    reliability,
    train,
)

logger = logging.getLogger("dgm.pipeline")

DEFAULT_THETAS = tuple(round(0.1 * i, 1) for i in range(1, 10))

# Derived-seed keys for the pipeline stages.
SPLIT_KEY, PARTITION_KEY, FIT_KEY, SAMPLE_KEY, JOIN_KEY, VALIDATOR_KEY, EVAL_KEY = range(7)


class ConfigError(Exception):
    """Custom exception for configuration errors."""
    pass


class PipelineError(Exception):
    """Custom exception for a failed pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class PartitionMode:
    RANDOM = "random"
    CORRELATION = "correlation"
    EXPLICIT = "explicit"
    ALL = (RANDOM, CORRELATION, EXPLICIT)


@dataclass(frozen=True)
class DatasetConfig:
    csv: Path | None = None
    schema: Path | None = None
    holdout_fraction: float = 0.2
    dummy: DummySpec | None = None

    def __post_init__(self):
        if (self.csv is None) == (self.dummy is None):
            raise ConfigError("dataset: give either 'csv' (with 'schema') or 'dummy'.")
        if self.csv is not None and self.schema is None:
            raise ConfigError("dataset.schema is required with dataset.csv.")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError(f"dataset.holdout_fraction must be in (0, 1), got {self.holdout_fraction}.")

    def column_names(self) -> list[str]:
        if self.dummy is not None:
            return self.dummy.names()
        return list(DataLoader(self.csv, self.schema).load_schema())

    def load(self) -> DataTable:
        if self.dummy is not None:
            return sample_dummy(self.dummy).table
        return load_csv(self.csv, self.schema)


@dataclass(frozen=True)
class PartitionConfig:
    mode: str = PartitionMode.RANDOM
    n_p: int = 1
    explicit: Mapping[str, tuple[str, ...]] | None = None

    def __post_init__(self):
        if self.mode not in PartitionMode.ALL:
            raise ConfigError(f"partition.mode must be one of {PartitionMode.ALL}, got {self.mode!r}.")
        if self.mode == PartitionMode.EXPLICIT:
            if not self.explicit:
                raise ConfigError("partition.explicit lists are required in explicit mode.")
            if self.n_p != len(self.explicit):
                raise ConfigError(f"partition.n_p={self.n_p} but {len(self.explicit)} explicit partitions given.")
        if self.mode == PartitionMode.CORRELATION and self.n_p != 2:
            raise ConfigError(f"partition.mode 'correlation' builds 2 partitions, n_p={self.n_p}.")
        if self.n_p < 1:
            raise ConfigError(f"partition.n_p must be >= 1, got {self.n_p}.")

    def build(self, table: DataTable, seed: int) -> PartitionSpec:
        if self.mode == PartitionMode.EXPLICIT:
            return explicit_partition(table.names, self.explicit)
        if self.mode == PartitionMode.CORRELATION:
            return correlation_partition(table)
        return random_partition(table.k, self.n_p, seed)


@dataclass(frozen=True)
class ValidatorConfig:
    backend: ValidatorBackend = ValidatorBackend.RANDOM_FOREST
    grid: str = "full"
    calibrate: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "backend", ValidatorBackend(self.backend))
            HyperparameterGrid.preset(self.grid)
        except (ValueError, ValidatorError) as e:
            raise ConfigError(f"validator: {e}") from None


@dataclass(frozen=True)
class EvalConfig:
    label_column: str | None = None


@dataclass(frozen=True)
class SeedsConfig:
    master: int = 0
    repeats: int = 1

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError(f"seeds.repeats must be >= 1, got {self.repeats}.")


@dataclass(frozen=True)
class ExperimentConfig:
    n_p_values: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    thetas: tuple[float, ...] = DEFAULT_THETAS
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    backends: tuple[ValidatorBackend, ...] = tuple(ValidatorBackend)

    def __post_init__(self):
        object.__setattr__(self, "n_p_values", tuple(int(v) for v in self.n_p_values))
        object.__setattr__(self, "thetas", tuple(float(v) for v in self.thetas))
        object.__setattr__(self, "gammas", tuple(float(v) for v in self.gammas))
        try:
            object.__setattr__(self, "backends", tuple(ValidatorBackend(b) for b in self.backends))
        except ValueError as e:
            raise ConfigError(f"experiment.backends: {e}") from None
        if not all((self.n_p_values, self.thetas, self.gammas, self.backends)):
            raise ConfigError("experiment lists must not be empty.")
        if any(not 0.0 <= t < 1.0 for t in self.thetas):
            raise ConfigError(f"experiment.thetas must lie in [0, 1), got {self.thetas}.")


@dataclass(frozen=True)
class PipelineConfig:
    """
    Complete run configuration.

    Invariants checked on construction: one generator per partition and
    consistent section values. Column references are checked by
    ``validate_config`` once the dataset header is known.
    """

    dataset: DatasetConfig
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    generators: tuple[GeneratorConfig, ...] = (GeneratorConfig(),)
    join: JoinConfig = field(default_factory=JoinConfig)
    validator: ValidatorConfig = field(default_factory=ValidatorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def __post_init__(self):
        if len(self.generators) != self.partition.n_p:
            raise ConfigError(
                f"{len(self.generators)} generator config(s) given but partition.n_p={self.partition.n_p}."
            )

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir=".") -> "PipelineConfig":
        """
        Build a config from parsed YAML.

        Args:
            raw (dict): Parsed configuration sections
            base_dir (str or Path): Directory relative dataset paths are resolved against
        Raises:
            ConfigError: On unknown keys or invalid values
        """
        if not isinstance(raw, Mapping):
            raise ConfigError("Configuration must be a mapping of sections.")
        known = {"dataset", "partition", "generators", "join", "validator", "eval", "seeds", "experiment"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"Unknown config section(s): {unknown}")
        if "dataset" not in raw:
            raise ConfigError("Missing required section 'dataset'.")
        base = Path(base_dir)
        section = None
        try:
            section = "dataset"
            ds = dict(raw["dataset"] or {})
            if ds.get("dummy") is not None:
                ds["dummy"] = DummySpec(**ds["dummy"])
            for key in ("csv", "schema"):
                if ds.get(key) is not None:
                    ds[key] = base / ds[key]
            dataset = DatasetConfig(**ds)

            section = "partition"
            part = dict(raw.get("partition") or {})
            if part.get("explicit"):
                part["explicit"] = {str(k): tuple(v) for k, v in part["explicit"].items()}
                part.setdefault("n_p", len(part["explicit"]))
                part.setdefault("mode", PartitionMode.EXPLICIT)
            partition = PartitionConfig(**part)

            section = "generators"
            gens = raw.get("generators")
            if gens is None:
                gens = [{}] * partition.n_p
            if not isinstance(gens, list):
                raise ConfigError("generators must be a list with one entry per partition.")
            generators = tuple(GeneratorConfig.from_dict(g) for g in gens)

            section = "join"
            join = JoinConfig.from_dict(raw.get("join"))
            section = "validator"
            validator = ValidatorConfig(**(raw.get("validator") or {}))
            section = "eval"
            evaluation = EvalConfig(**(raw.get("eval") or {}))
            section = "seeds"
            seeds = SeedsConfig(**(raw.get("seeds") or {}))
            section = "experiment"
            experiment = ExperimentConfig(**(raw.get("experiment") or {}))
            section = "config"
            return cls(dataset, partition, generators, join, validator, evaluation, seeds, experiment)
        except ConfigError as e:
            raise ConfigError(f"{section}: {e}") from None
        except (TypeError, ValueError, GeneratorError, JoinError, DummyDataError) as e:
            raise ConfigError(f"{section}: {e}") from None

    def to_dict(self) -> dict:
        ds = {"holdout_fraction": self.dataset.holdout_fraction}
        if self.dataset.dummy is not None:
            d = self.dataset.dummy
            ds["dummy"] = {"k1": d.k1, "k2": d.k2, "n": d.n, "gamma": d.gamma, "base_seed": d.base_seed}
        else:
            ds["csv"] = str(self.dataset.csv)
            ds["schema"] = str(self.dataset.schema)
        part = {"mode": self.partition.mode, "n_p": self.partition.n_p}
        if self.partition.explicit:
            part["explicit"] = {k: list(v) for k, v in self.partition.explicit.items()}
        return {
            "dataset": ds,
            "partition": part,
            "generators": [g.to_dict() for g in self.generators],
            "join": self.join.to_dict(),
            "validator": {"backend": self.validator.backend.value, "grid": self.validator.grid,
                          "calibrate": self.validator.calibrate},
            "eval": {"label_column": self.eval.label_column},
            "seeds": {"master": self.seeds.master, "repeats": self.seeds.repeats},
            "experiment": {
                "n_p_values": list(self.experiment.n_p_values),
                "thetas": list(self.experiment.thetas),
                "gammas": list(self.experiment.gammas),
                "backends": [b.value for b in self.experiment.backends],
            },
        }

    def digest(self) -> str:
        """sha256 of the canonical YAML form."""
        text = yaml.safe_dump(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def with_partitions(self, n_p: int, mode: str = PartitionMode.RANDOM) -> "PipelineConfig":
        """Same run with n_p partitions, all using the first generator's settings."""
        return replace(self, partition=PartitionConfig(mode=mode, n_p=n_p),
                       generators=tuple([self.generators[0]] * n_p))


def load_config(path) -> PipelineConfig:
    """
    Read and validate a YAML pipeline configuration.

    Raises:
        ConfigError: If the file cannot be read or any section is invalid
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Error reading config {path}: {e}")
        raise ConfigError(f"Error reading config {path}: {e}") from None
    return PipelineConfig.from_dict(raw or {}, base_dir=path.parent)


def validate_config(config: PipelineConfig) -> list[str]:
    """
    Check column references against the dataset header.

    Returns:
        list: Dataset column names
    Raises:
        ConfigError: On unknown columns or impossible partition counts
    """
    try:
        names = config.dataset.column_names()
    except Exception as e:
        raise ConfigError(f"dataset: {e}") from None
    if config.partition.n_p > len(names):
        raise ConfigError(f"partition.n_p={config.partition.n_p} exceeds the {len(names)} dataset columns.")
    if config.partition.mode == PartitionMode.EXPLICIT:
        try:
            explicit_partition(names, config.partition.explicit)
        except PartitionError as e:
            raise ConfigError(f"partition: {e}") from None
    label = config.eval.label_column
    if label is not None and label not in names:
        raise ConfigError(f"eval.label_column '{label}' is not a dataset column.")
    for p, gen in enumerate(config.generators):
        order = gen.cart.visit_order or ()
        missing = [name for name in order if name not in names]
        if missing:
            raise ConfigError(f"generators[{p}].cart.visit_order names unknown column(s) {missing}.")
    return names


@contextmanager
def stage(name: str, timings: dict | None = None):
    """Wrap a pipeline stage: time it and re-raise failures as PipelineError(name)."""
    started = time.perf_counter()
    try:
        yield
    except (PipelineError, ConfigError):
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise PipelineError(name, str(e)) from e
    finally:
        if timings is not None:
            timings[name] = time.perf_counter() - started
    logger.info(f"Stage '{name}' done")


class RunOutcome(NamedTuple):
    synthetic: DataTable
    report: MetricsReport
    trace: JoinTrace
    spec: PartitionSpec
    timings: dict
    validator: Scorer | None = None


def oversampled_size(generators: Sequence[GeneratorConfig], target_size: int) -> int:
    return int(math.ceil(max(g.oversample_factor for g in generators) * target_size))


def _fit_and_sample(part: DataTable, config: GeneratorConfig, m: int, seed: int) -> DataTable:
    return fit(part, config).sample(m, seed)


def synthesize_parts(train_table: DataTable, spec: PartitionSpec, generators: Sequence[GeneratorConfig],
                     m: int, master_seed: int, jobs: int = 1) -> list[DataTable]:
    """Fit one generator per partition and draw m rows from each."""
    parts = spec.split_table(train_table)
    configs = [replace(g, seed=derive_seed(master_seed, FIT_KEY, p, g.seed)) for p, g in enumerate(generators)]
    return Parallel(n_jobs=jobs)(
        delayed(_fit_and_sample)(part, cfg, m, derive_seed(master_seed, SAMPLE_KEY, p))
        for p, (part, cfg) in enumerate(zip(parts, configs))
    )


def train_join_validator(config: PipelineConfig, train_table: DataTable, spec: PartitionSpec, master_seed: int,
                         backend: ValidatorBackend | None = None, jobs: int = 1):
    """Train the joining validator on authentic vs. partition-shuffled training rows."""
    features, labels = build_validator_training(train_table, spec, derive_seed(master_seed, VALIDATOR_KEY))
    return train(
        features,
        labels,
        backend or config.validator.backend,
        HyperparameterGrid.preset(config.validator.grid),
        seed=derive_seed(master_seed, VALIDATOR_KEY, 1),
        calibrate=config.validator.calibrate,
        jobs=jobs,
    )


def validator_reliability(validator: ValidatorModel, data: SplitPair, spec: PartitionSpec, master_seed: int,
                          bins: int = 10) -> ReliabilityCurve:
    """
    Reliability curve of a joining validator.

    The train set is the validator's own training data (authentic vs.
    partition-shuffled training rows); the holdout set is built the same way
    from the holdout split, which the validator never saw.
    """
    features, labels = build_validator_training(data.train, spec, derive_seed(master_seed, VALIDATOR_KEY))
    hold_features, hold_labels = build_validator_training(data.holdout, spec,
                                                          derive_seed(master_seed, VALIDATOR_KEY, 2))
    return reliability(validator, features, labels, bins, hold_features, hold_labels)


def write_reliability(validator: Scorer | None, data: SplitPair, spec: PartitionSpec, master_seed: int, out_dir,
                      suffix: str = "") -> Path | None:
    """Write ``reliability_<backend><suffix>.csv`` for a trained validator; other scorers are skipped."""
    if not isinstance(validator, ValidatorModel):
        return None
    curve = validator_reliability(validator, data, spec, master_seed)
    return curve.to_csv(Path(out_dir) / f"reliability_{validator.backend.value}{suffix}.csv")


def synthesize(config: PipelineConfig, data: SplitPair, master_seed: int, jobs: int = 1,
               validator: Scorer | None = None) -> RunOutcome:
    """
    One DGM run on an existing train/holdout split.

    Args:
        config (PipelineConfig): Partition, generator, join and eval settings
        data (SplitPair): Training and holdout tables
        master_seed (int): Seed all stage seeds are derived from
        jobs (int): Parallel workers
        validator (Scorer): Joining validator to use instead of training one
    Returns:
        RunOutcome: synthetic table (original column order), report, join trace,
        partition spec and per-stage wall-clock seconds
    """
    timings: dict[str, float] = {}
    generated = generate(config, data.train, master_seed, jobs, timings)
    return join_and_evaluate(config, data, generated, master_seed, jobs=jobs, validator=validator, timings=timings)


class GeneratedParts(NamedTuple):
    spec: PartitionSpec
    parts: list[DataTable]
    target: int


def generate(config: PipelineConfig, train_table: DataTable, master_seed: int, jobs: int = 1,
             timings: dict | None = None) -> GeneratedParts:
    """Partition the training table and sample every partition (oversampled)."""
    target = config.join.target_size or train_table.n
    with stage("partition", timings):
        spec = config.partition.build(train_table, derive_seed(master_seed, PARTITION_KEY))
        logger.info(f"Partitions: {spec.to_lists(train_table.names)}")
    with stage("generate", timings):
        m = oversampled_size(config.generators, target)
        parts = synthesize_parts(train_table, spec, config.generators, m, master_seed, jobs)
    return GeneratedParts(spec, parts, target)


def join_and_evaluate(config: PipelineConfig, data: SplitPair, generated: GeneratedParts, master_seed: int,
                      jobs: int = 1, validator: Scorer | None = None, timings: dict | None = None,
                      strategy: JoinStrategy | None = None) -> RunOutcome:
    """
    Join generated parts and evaluate the result.

    ``strategy`` overrides config.join.strategy so both joiners can be run on
    the same generated parts.
    """
    timings = {} if timings is None else timings
    strategy = JoinStrategy(strategy or config.join.strategy)
    spec, parts, target = generated
    with stage("join", timings):
        join_seed = derive_seed(master_seed, JOIN_KEY)
        if strategy is JoinStrategy.CONCAT:
            joined = concat_join(parts, target, join_seed)
            trace = JoinTrace()
            validator = None
        else:
            if validator is None:
                validator = train_join_validator(config, data.train, spec, master_seed, jobs=jobs)
            joined, trace = validated_join(parts, validator, replace(config.join, target_size=target), join_seed)
        synthetic = joined.select_names(data.train.names)
    with stage("evaluate", timings):
        report = evaluate_all(data.train, synthetic, data.holdout, label=config.eval.label_column,
                              seed=derive_seed(master_seed, EVAL_KEY))
    return RunOutcome(synthetic, report, trace, spec, timings, validator)


def load_split(config: PipelineConfig, master_seed: int, timings: dict | None = None) -> SplitPair:
    with stage("load", timings):
        table = config.dataset.load()
    with stage("split", timings):
        return split(table, config.dataset.holdout_fraction, derive_seed(master_seed, SPLIT_KEY))


def library_versions() -> dict:
    return {
        "dgm": dgm.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scikit-learn": sklearn.__version__,
        "scipy": scipy.__version__,
        "joblib": joblib.__version__,
    }


def write_manifest(config: PipelineConfig, master_seed: int, out_dir, extra: dict | None = None) -> Path:
    manifest = {
        "config_sha256": config.digest(),
        "master_seed": int(master_seed),
        "versions": library_versions(),
        "config": config.to_dict(),
    }
    manifest.update(extra or {})
    return atomic_write_text(Path(out_dir) / "manifest.yaml", yaml.safe_dump(manifest, sort_keys=False))


def run_synth(config: PipelineConfig, out_dir, seed: int | None = None, jobs: int = 1) -> RunOutcome:
    """
    Run the full pipeline and write its outputs.

    Files written to out_dir: synthetic.csv, report.yaml, report.csv,
    join_trace.csv and manifest.yaml, plus reliability_<backend>.csv for a
    validated join. The same config and seed reproduce synthetic.csv byte
    for byte.

    Raises:
        ConfigError: On column references the dataset does not have
        PipelineError: On any failing stage, naming it
    """
    master_seed = config.seeds.master if seed is None else seed
    validate_config(config)
    timings: dict[str, float] = {}
    data = load_split(config, master_seed, timings)
    outcome = synthesize(config, data, master_seed, jobs=jobs)
    timings.update(outcome.timings)

    out = Path(out_dir)
    with stage("write", timings):
        out.mkdir(parents=True, exist_ok=True)
        write_csv(outcome.synthetic, out / "synthetic.csv")
        outcome.report.to_yaml(out / "report.yaml")
        outcome.report.to_csv(out / "report.csv")
        outcome.trace.to_csv(out / "join_trace.csv")
        write_reliability(outcome.validator, data, outcome.spec, master_seed, out)
        write_manifest(config, master_seed, out, {
            "partition": outcome.spec.to_lists(data.train.names),
            "rows": {"train": data.train.n, "holdout": data.holdout.n, "synthetic": outcome.synthetic.n},
            "join_truncated": bool(outcome.trace.truncated),
        })
    logger.info(f"Wrote {outcome.synthetic.n} synthetic rows to {out / 'synthetic.csv'}")
    return outcome._replace(timings=timings)


def run_eval(config: PipelineConfig, synthetic_csv, out_dir, seed: int | None = None) -> MetricsReport:
    """
    Evaluate an existing synthetic CSV against the config's train/holdout split.

    Writes report.yaml and report.csv to out_dir.
    """
    master_seed = config.seeds.master if seed is None else seed
    validate_config(config)
    data = load_split(config, master_seed)
    with stage("load"):
        synthetic = load_csv_like(synthetic_csv, data.train)
    with stage("evaluate"):
        report = evaluate_all(data.train, synthetic, data.holdout, label=config.eval.label_column,
                              seed=derive_seed(master_seed, EVAL_KEY))
    out = Path(out_dir)
    report.to_yaml(out / "report.yaml")
    report.to_csv(out / "report.csv")
    return report
