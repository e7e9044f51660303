"""
Unit tests for concatenation and validated joining.
"""
from collections import Counter

import numpy as np
import pytest

from dgm.dummy_data import DummySpec, sample_dummy
from dgm.generators import GeneratorConfig, fit
from dgm.joiner import (
    JoinConfig,
    JoinError,
    JoinTrace,
    ValidatedJoiner,
    build_validator_training,
    concat_join,
    validated_join,
)
from dgm.partitioner import PartitionSpec
from dgm.tabular import DataTable, mixed_correlation
from tests.conftest import numeric_table


class ConstantScorer:
    def __init__(self, value):
        self.value = value

    def score(self, queries: DataTable) -> np.ndarray:
        return np.full(queries.n, self.value)


class SignScorer:
    """1.0 when both columns share a sign, else 0.0."""

    def score(self, queries: DataTable) -> np.ndarray:
        a, b = queries.columns
        return (np.sign(a) == np.sign(b)).astype(float)


class RandomScorer:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def score(self, queries: DataTable) -> np.ndarray:
        return self.rng.random(queries.n)


def parts_of(*columns, prefix="p"):
    return [numeric_table(np.asarray(c, dtype=float).reshape(-1, 1), prefix=f"{prefix}{i}_")
            for i, c in enumerate(columns)]


def test_concat_preserves_shuffled_multisets():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        sizes = rng.integers(30, 80)
        target = int(rng.integers(1, sizes + 1))
        parts = parts_of(*(rng.standard_normal(sizes) for _ in range(rng.integers(1, 4))))
        out = concat_join(parts, target, seed)
        assert out.n == target
        again = concat_join(parts, target, seed)
        for p, part in enumerate(parts):
            np.testing.assert_array_equal(out.columns[p], again.columns[p])
            assert set(out.columns[p]) <= set(part.columns[0])
            assert len(set(out.columns[p])) == target


def test_concat_full_target_keeps_every_value():
    parts = parts_of(np.arange(100), np.arange(100, 200))
    out = concat_join(parts, 100, seed=1)
    assert sorted(out.columns[0]) == list(range(100))
    assert sorted(out.columns[1]) == list(range(100, 200))


def test_concat_forced_join():
    out = concat_join(parts_of(np.full(5, 1.0), np.full(5, 2.0)), 5, seed=0)
    assert all(row == (1.0, 2.0) for row in zip(*out.columns))


def test_concat_rejects_short_part():
    with pytest.raises(JoinError):
        concat_join(parts_of(np.arange(5), np.arange(3)), 4, seed=0)


def test_validator_training_layout():
    table = numeric_table(np.column_stack([np.arange(1000.0), np.arange(1000.0)]))
    spec = PartitionSpec(2, (1, 2))
    features, labels = build_validator_training(table, spec, seed=3)
    assert features.n == 2000
    np.testing.assert_array_equal(labels, [1] * 1000 + [0] * 1000)
    shuffled = features.take(np.arange(1000, 2000))
    assert np.mean(shuffled.columns[0] != shuffled.columns[1]) > 0.99


def test_validator_training_single_row():
    table = numeric_table(np.array([[1.0, 2.0]]))
    features, labels = build_validator_training(table, PartitionSpec(2, (1, 2)), seed=0)
    np.testing.assert_array_equal(features.to_matrix(), [[1.0, 2.0], [1.0, 2.0]])
    np.testing.assert_array_equal(labels, [1, 0])


def test_accept_all_matches_concat():
    rng = np.random.default_rng(7)
    parts = parts_of(rng.standard_normal(60), rng.standard_normal(60))
    config = JoinConfig(strategy="validated", target_size=40)
    out, trace = validated_join(parts, ConstantScorer(1.0), config, seed=11)
    expected = concat_join(parts, 40, seed=11)
    assert len(trace.rounds) == 1
    assert not trace.truncated
    for a, b in zip(out.columns, expected.columns):
        np.testing.assert_array_equal(a, b)


def test_constant_zero_decays_then_accepts_all():
    parts = parts_of(np.arange(30), np.arange(30))
    config = JoinConfig(strategy="validated", target_size=30, theta=0.5, decay=0.02)
    out, trace = validated_join(parts, ConstantScorer(0.0), config, seed=2)
    stalled = [r for r in trace.rounds if r.accepted == 0]
    assert len(stalled) == 25
    thetas = [r.theta for r in stalled]
    assert all(a > b for a, b in zip(thetas, thetas[1:]))
    assert trace.rounds[-1].theta == 0.0
    assert trace.rounds[-1].accepted == 30
    assert out.n == 30


def test_oracle_validator_accepts_only_valid_rows():
    rng = np.random.default_rng(3)
    parts = parts_of(rng.standard_normal(400), rng.standard_normal(400))
    config = JoinConfig(strategy="validated", target_size=200, theta=0.5)
    out, trace = validated_join(parts, SignScorer(), config, seed=5)
    assert out.n == 200
    assert np.all(np.sign(out.columns[0]) == np.sign(out.columns[1]))


def test_static_threshold_early_stop(caplog):
    parts = parts_of(np.arange(20), np.arange(20))
    config = JoinConfig(strategy="validated", target_size=10, theta=0.5, decay=0.0, early_stop_rounds=4)
    with caplog.at_level("WARNING"):
        out, trace = ValidatedJoiner(ConstantScorer(0.1), config).join(parts, seed=0)
    assert out.n == 0
    assert trace.truncated
    assert len(trace.rounds) == 4
    assert "Early stop" in caplog.text


def test_randomized_loop_invariants():
    for run in range(100):
        rng = np.random.default_rng(run)
        m = int(rng.integers(20, 60))
        parts = parts_of(*(rng.standard_normal(m) for _ in range(int(rng.integers(2, 4)))))
        config = JoinConfig(strategy="validated", target_size=int(rng.integers(1, m + 1)),
                            decay=0.05, max_iters=30, early_stop_rounds=3)
        out, trace = validated_join(parts, RandomScorer(run), config, seed=run)
        assert len(trace.rounds) <= 30
        thetas = [r.theta for r in trace.rounds]
        assert all(a >= b for a, b in zip(thetas, thetas[1:]))
        for p in range(len(parts)):
            used = Counter(trace.provenance[:, p].tolist())
            assert all(count == 1 for count in used.values())
        assert out.n == len(trace.provenance) == sum(r.accepted for r in trace.rounds)


def test_unequal_parts_rejected():
    with pytest.raises(JoinError):
        validated_join(parts_of(np.arange(5), np.arange(6)), ConstantScorer(1.0),
                       JoinConfig(strategy="validated", target_size=3), seed=0)


def test_trace_csv(tmp_path):
    parts = parts_of(np.arange(10), np.arange(10))
    _, trace = validated_join(parts, ConstantScorer(1.0), JoinConfig(strategy="validated", target_size=5), seed=0)
    text = trace.to_csv(tmp_path / "trace.csv").read_text()
    assert text.splitlines()[0] == "round,theta,queries,accepted"
    assert len(text.splitlines()) == 2
    record = trace.to_frame().to_dict("records")
    assert record == [{"round": 1, "theta": trace.rounds[0].theta, "queries": 10, "accepted": 5}]
    empty = JoinTrace().to_csv(tmp_path / "empty.csv").read_text()
    assert empty.splitlines() == ["round,theta,queries,accepted"]


def _off_diagonal_norm(table: DataTable) -> float:
    corr = mixed_correlation(table)
    return float(np.linalg.norm(corr - np.diag(np.diag(corr))))


def test_one_column_partitions_join_like_independent_columns():
    n = 400
    joined_norms, permuted_norms, real_norms = [], [], []
    for seed in range(10):
        table = sample_dummy(DummySpec(k1=2, k2=2, n=n, gamma=1.0, base_seed=seed)).table
        spec = PartitionSpec(table.k, tuple(range(1, table.k + 1)))
        config = GeneratorConfig(kind="cart_sequential", seed=seed)
        parts = [fit(part, config).sample(n, seed + p) for p, part in enumerate(spec.split_table(table))]
        joined = concat_join(parts, n, seed).select_names(table.names)
        rng = np.random.default_rng(seed)
        permuted = DataTable(table.schema, tuple(rng.permutation(col) for col in table.columns))
        joined_norms.append(_off_diagonal_norm(joined))
        permuted_norms.append(_off_diagonal_norm(permuted))
        real_norms.append(_off_diagonal_norm(table))
    assert abs(np.mean(joined_norms) - np.mean(permuted_norms)) <= 3.0 / np.sqrt(n)
    assert np.mean(joined_norms) < 0.5 * np.mean(real_norms)
