"""
experiments.py
Parameter sweeps over the pipeline, one CSV row per (parameter point, repeat).

Presets:
    - partition_sweep: n_p over experiment.n_p_values, random partitions
    - join_compare: concat vs. validated join on identical generated parts
    - timing: wall-clock per stage plus the deterministic structure search cost
    - correlation_sweep: dummy tables over experiment.gammas through both joiners
    - validator_compare: validated join with every backend in experiment.backends;
      also writes reliability_<backend>_repeat<r>.csv per backend and repeat
    - threshold_sweep: static thresholds (decay 0) over experiment.thetas

Every row carries all MetricsReport fields. Repeat r runs with master seed
derive_seed(master, r), so rows do not depend on scheduling.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from enum import Enum
from pathlib import Path

import pandas as pd
from joblib import Parallel, delayed

from dgm.data_loader import write_frame
from dgm.dummy_data import DummySpec, target_correlation
from dgm.generators import structure_search_cost
from dgm.joiner import JoinStrategy, Scorer
from dgm.partitioner import exterior_interior_ratio
from dgm.pipeline import (
    PartitionConfig,
    PartitionMode,
    PipelineConfig,
    RunOutcome,
    generate,
    join_and_evaluate,
    load_split,
    synthesize,
    train_join_validator,
    write_reliability,
)
from dgm.tabular import derive_seed

logger = logging.getLogger("dgm.experiments")


class ExperimentPreset(str, Enum):
    PARTITION_SWEEP = "partition_sweep"
    JOIN_COMPARE = "join_compare"
    TIMING = "timing"
    CORRELATION_SWEEP = "correlation_sweep"
    VALIDATOR_COMPARE = "validator_compare"
    THRESHOLD_SWEEP = "threshold_sweep"


def _row(outcome: RunOutcome, **point) -> dict:
    row = dict(point)
    row["synthetic_rows"] = outcome.synthetic.n
    row["join_truncated"] = bool(outcome.trace.truncated)
    row["join_rounds"] = len(outcome.trace.rounds)
    row.update(outcome.report.to_dict())
    return row


def _partition_sweep(config: PipelineConfig, repeat: int, seed: int, n_p: int) -> list[dict]:
    data = load_split(config, seed)
    outcome = synthesize(config.with_partitions(n_p), data, seed)
    return [_row(outcome, n_p=n_p, repeat=repeat, seed=seed)]


def _join_compare(config: PipelineConfig, repeat: int, seed: int) -> list[dict]:
    data = load_split(config, seed)
    generated = generate(config, data.train, seed)
    return [
        _row(join_and_evaluate(config, data, generated, seed, strategy=strategy),
             strategy=strategy.value, n_p=generated.spec.n_p, repeat=repeat, seed=seed)
        for strategy in JoinStrategy
    ]


def _timing(config: PipelineConfig, repeat: int, seed: int, n_p: int) -> list[dict]:
    timings: dict[str, float] = {}
    data = load_split(config, seed, timings)
    outcome = synthesize(config.with_partitions(n_p), data, seed)
    timings.update(outcome.timings)
    max_parents = config.generators[0].bn.max_parents
    row = _row(outcome, n_p=n_p, repeat=repeat, seed=seed, kind=config.generators[0].kind.value,
               structure_search_cost=structure_search_cost(data.train.k, n_p, max_parents))
    row.update({f"{name}_seconds": seconds for name, seconds in timings.items()})
    return [row]


def _group_config(config: PipelineConfig, spec: DummySpec) -> PipelineConfig:
    """Dummy dataset partitioned along its two generating column groups."""
    names = spec.names()
    groups = {"part1": tuple(names[: spec.k1]), "part2": tuple(names[spec.k1:])}
    return replace(
        config,
        dataset=replace(config.dataset, csv=None, schema=None, dummy=spec),
        partition=PartitionConfig(mode=PartitionMode.EXPLICIT, n_p=2, explicit=groups),
        generators=tuple([config.generators[0]] * 2),
    )


def _correlation_sweep(config: PipelineConfig, repeat: int, seed: int, gamma: float) -> list[dict]:
    base = config.dataset.dummy or DummySpec()
    spec = replace(base, gamma=gamma, base_seed=derive_seed(base.base_seed, repeat))
    run_config = _group_config(config, spec)
    ratio = exterior_interior_ratio(target_correlation(spec), spec.partition()).ratio
    data = load_split(run_config, seed)
    generated = generate(run_config, data.train, seed)
    return [
        _row(join_and_evaluate(run_config, data, generated, seed, strategy=strategy),
             gamma=gamma, achieved_ratio=ratio, strategy=strategy.value, repeat=repeat, seed=seed)
        for strategy in JoinStrategy
    ]


def _validator_compare(config: PipelineConfig, repeat: int, seed: int, out_dir) -> list[dict]:
    data = load_split(config, seed)
    generated = generate(config, data.train, seed)
    rows = []
    for backend in config.experiment.backends:
        validator = train_join_validator(config, data.train, generated.spec, seed, backend=backend)
        outcome = join_and_evaluate(config, data, generated, seed, validator=validator,
                                    strategy=JoinStrategy.VALIDATED)
        write_reliability(validator, data, generated.spec, seed, out_dir, suffix=f"_repeat{repeat}")
        rows.append(_row(outcome, backend=backend.value, repeat=repeat, seed=seed))
    return rows


def _threshold_sweep(config: PipelineConfig, repeat: int, seed: int, validator: Scorer | None) -> list[dict]:
    data = load_split(config, seed)
    generated = generate(config, data.train, seed)
    if validator is None:
        validator = train_join_validator(config, data.train, generated.spec, seed)
    rows = []
    for theta in config.experiment.thetas:
        static = replace(config, join=replace(config.join, strategy=JoinStrategy.VALIDATED, theta=theta, decay=0.0))
        outcome = join_and_evaluate(static, data, generated, seed, validator=validator)
        rows.append(_row(outcome, theta=theta, repeat=repeat, seed=seed))
    return rows


def _tasks(preset: ExperimentPreset, config: PipelineConfig, repeats: int, master: int, validator, out_dir):
    n_p_limit = len(config.dataset.column_names())
    for repeat in range(repeats):
        seed = derive_seed(master, repeat)
        if preset in (ExperimentPreset.PARTITION_SWEEP, ExperimentPreset.TIMING):
            fn = _partition_sweep if preset is ExperimentPreset.PARTITION_SWEEP else _timing
            for n_p in config.experiment.n_p_values:
                if n_p > n_p_limit:
                    logger.warning(f"Skipping n_p={n_p}: dataset has {n_p_limit} columns")
                    continue
                yield delayed(fn)(config, repeat, seed, n_p)
        elif preset is ExperimentPreset.CORRELATION_SWEEP:
            for gamma in config.experiment.gammas:
                yield delayed(_correlation_sweep)(config, repeat, seed, gamma)
        elif preset is ExperimentPreset.JOIN_COMPARE:
            yield delayed(_join_compare)(config, repeat, seed)
        elif preset is ExperimentPreset.VALIDATOR_COMPARE:
            yield delayed(_validator_compare)(config, repeat, seed, out_dir)
        else:
            yield delayed(_threshold_sweep)(config, repeat, seed, validator)


def run_experiment(preset, config: PipelineConfig, out_dir, repeats: int | None = None, seed: int | None = None,
                   jobs: int = 1, validator: Scorer | None = None) -> pd.DataFrame:
    """
    Run a sweep preset and write ``<preset>.csv`` to out_dir (validator_compare
    also writes one reliability curve CSV per backend and repeat).

    Args:
        preset (ExperimentPreset or str): Sweep to run
        config (PipelineConfig): Base configuration; the ``experiment`` section supplies the grids
        out_dir (str or Path): Output directory
        repeats (int): Overrides seeds.repeats
        seed (int): Overrides seeds.master
        jobs (int): Parallel (point, repeat) tasks
        validator (Scorer): threshold_sweep only; used instead of training one per repeat
    Returns:
        pd.DataFrame: One row per (parameter point, repeat)
    """
    preset = ExperimentPreset(preset)
    repeats = repeats or config.seeds.repeats
    master = config.seeds.master if seed is None else seed
    logger.info(f"Running {preset.value} with {repeats} repeat(s), master seed {master}")
    batches = Parallel(n_jobs=jobs)(_tasks(preset, config, repeats, master, validator, out_dir))
    frame = pd.DataFrame([row for batch in batches for row in batch])
    path = Path(out_dir) / f"{preset.value}.csv"
    write_frame(frame, path)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return frame
