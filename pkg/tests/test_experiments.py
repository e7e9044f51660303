"""
Tests for the experiment sweep presets.
"""
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.stats import spearmanr

from dgm.experiments import ExperimentPreset, run_experiment
from dgm.pipeline import PipelineConfig


class AcceptAll:
    def score(self, queries):
        return np.ones(queries.n)


class HalfScorer:
    def score(self, queries):
        return np.full(queries.n, 0.5)


def make_config(k1=2, k2=2, n=60, kind="marginal", **experiment):
    return PipelineConfig.from_dict({
        "dataset": {"dummy": {"k1": k1, "k2": k2, "n": n, "gamma": 1.0, "base_seed": 2}},
        "generators": [{"kind": kind}],
        "validator": {"backend": "knn", "grid": "degraded"},
        "experiment": experiment or {"n_p_values": [1, 2, 3]},
    })


def test_partition_sweep_rows(tmp_path):
    frame = run_experiment("partition_sweep", make_config(), tmp_path, repeats=2)
    assert len(frame) == 6
    assert sorted(frame["n_p"]) == [1, 1, 2, 2, 3, 3]
    assert set(frame.groupby("repeat")["seed"].nunique()) == {1}
    written = pd.read_csv(tmp_path / "partition_sweep.csv")
    assert list(written.columns) == list(frame.columns)
    assert "eps_identifiability" in frame.columns


def test_partition_sweep_skips_impossible_n_p(tmp_path, caplog):
    with caplog.at_level("WARNING"):
        frame = run_experiment(ExperimentPreset.PARTITION_SWEEP, make_config(n_p_values=[1, 9]), tmp_path)
    assert list(frame["n_p"]) == [1]
    assert "Skipping n_p=9" in caplog.text


def test_sweep_rows_do_not_depend_on_jobs(tmp_path):
    serial = run_experiment("partition_sweep", make_config(), tmp_path / "serial", repeats=2)
    parallel = run_experiment("partition_sweep", make_config(), tmp_path / "parallel", repeats=2, jobs=2)
    pd.testing.assert_frame_equal(serial, parallel)


def test_threshold_sweep_with_accept_all_validator(tmp_path):
    config = make_config(thetas=[0.1, 0.5, 0.9])
    frame = run_experiment("threshold_sweep", config, tmp_path, validator=AcceptAll())
    assert list(frame["theta"]) == [0.1, 0.5, 0.9]
    assert len(frame.drop(columns="theta").drop_duplicates()) == 1
    assert (frame["join_rounds"] == 1).all()


def test_threshold_sweep_keeps_going_after_an_empty_join(tmp_path, caplog):
    config = make_config(thetas=[0.1, 0.9])
    config = replace(config, join=replace(config.join, early_stop_rounds=2))
    with caplog.at_level("WARNING"):
        frame = run_experiment("threshold_sweep", config, tmp_path, validator=HalfScorer())
    assert list(frame["theta"]) == [0.1, 0.9]
    accepted, stalled = frame.iloc[0], frame.iloc[1]
    assert not bool(accepted["join_truncated"])
    assert bool(stalled["join_truncated"])
    assert stalled["synthetic_rows"] == 0
    assert stalled["join_rounds"] == 2
    assert np.isnan(stalled["corr_diff_frobenius"])
    assert np.isnan(stalled["eps_identifiability"])
    assert "metrics reported as NaN" in caplog.text
    written = pd.read_csv(tmp_path / "threshold_sweep.csv")
    assert len(written) == 2
    assert written["eps_identifiability"].isna().tolist() == [False, True]


def test_timing_structure_cost_decreases(tmp_path):
    config = make_config(k1=12, k2=12, n=40, kind="bayes_net", n_p_values=[1, 2, 4])
    frame = run_experiment("timing", config, tmp_path)
    costs = list(frame.sort_values("n_p")["structure_search_cost"])
    assert costs[0] > costs[1] > costs[2]
    assert "generate_seconds" in frame.columns
    assert (frame["kind"] == "bayes_net").all()


def test_correlation_sweep_runs_both_joiners(tmp_path):
    frame = run_experiment("correlation_sweep", make_config(gammas=[0.0, 1.0]), tmp_path)
    assert len(frame) == 4
    assert set(frame["strategy"]) == {"concat", "validated"}
    assert (frame.loc[frame["gamma"] == 0.0, "achieved_ratio"] == 0.0).all()


def test_join_compare_and_validator_compare(tmp_path):
    config = make_config(backends=["knn", "one_class_distance"])
    joins = run_experiment("join_compare", config, tmp_path)
    assert list(joins["strategy"]) == ["concat", "validated"]
    backends = run_experiment("validator_compare", config, tmp_path)
    assert list(backends["backend"]) == ["knn", "one_class_distance"]
    for backend in ("knn", "one_class_distance"):
        curve = pd.read_csv(tmp_path / f"reliability_{backend}_repeat0.csv")
        assert set(curve["set"]) == {"train", "holdout"}
    assert not list(tmp_path.glob("reliability_random_forest*"))


def test_unknown_preset(tmp_path):
    with pytest.raises(ValueError):
        run_experiment("gan_sweep", make_config(), tmp_path)


def test_partition_sweep_trend(tmp_path):
    config = PipelineConfig.from_dict({
        "dataset": {"dummy": {"k1": 6, "k2": 6, "n": 600, "gamma": 1.0, "base_seed": 0}},
        "generators": [{"kind": "cart_sequential", "cart": {"min_leaf": 5, "max_depth": 8}}],
        "experiment": {"n_p_values": [1, 2, 3, 4, 6, 12]},
    })
    frame = run_experiment("partition_sweep", config, tmp_path, repeats=10, jobs=2)
    means = frame.groupby("n_p")[["corr_diff_frobenius", "eps_identifiability"]].mean()
    assert spearmanr(means.index, means["corr_diff_frobenius"])[0] >= 0.8
    assert spearmanr(means.index, means["eps_identifiability"])[0] <= -0.5
    assert means.loc[12, "eps_identifiability"] <= means.loc[1, "eps_identifiability"]


def grouped_config(gamma=1.5, **sections):
    """Dummy table split along its two generating groups, cart generators, full-grid forest validator."""
    raw = {
        "dataset": {"dummy": {"k1": 3, "k2": 3, "n": 600, "gamma": gamma, "base_seed": 0}},
        "partition": {"explicit": {"part1": ["a0", "a1", "a2"], "part2": ["b0", "b1", "b2"]}},
        "generators": [{"kind": "cart_sequential"}] * 2,
        "join": {"max_iters": 60},
        "validator": {"backend": "random_forest", "grid": "full"},
    }
    raw.update(sections)
    return PipelineConfig.from_dict(raw)


def test_validated_join_wins_only_when_groups_correlate(tmp_path):
    config = grouped_config(experiment={"gammas": [0.1, 1.5]})
    frame = run_experiment("correlation_sweep", config, tmp_path, repeats=3, jobs=2)
    means = frame.groupby(["gamma", "strategy"])[["corr_diff_frobenius", "hellinger_avg", "achieved_ratio"]].mean()
    assert means.loc[(0.1, "concat"), "achieved_ratio"] < means.loc[(1.5, "concat"), "achieved_ratio"]
    assert means.loc[(1.5, "validated"), "corr_diff_frobenius"] < means.loc[(1.5, "concat"), "corr_diff_frobenius"]
    assert means.loc[(0.1, "concat"), "hellinger_avg"] <= means.loc[(0.1, "validated"), "hellinger_avg"] + 0.01


def test_threshold_sweep_eps_falls_with_theta(tmp_path):
    thetas = [0.1, 0.3, 0.5, 0.7]
    config = grouped_config(experiment={"thetas": thetas})
    frame = run_experiment("threshold_sweep", config, tmp_path, repeats=3, jobs=2)
    means = frame.groupby("theta")["eps_identifiability"].mean()
    assert list(means.index) == thetas
    assert spearmanr(means.index, means.values)[0] <= -0.5
