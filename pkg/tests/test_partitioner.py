"""
Unit tests for column partitioning and the exterior/interior correlation ratio.
"""
import itertools

import numpy as np
import pytest

from dgm.partitioner import (
    PartitionError,
    PartitionSpec,
    _greedy_pairs,
    correlation_partition,
    exterior_interior_ratio,
    explicit_partition,
    load_partition,
    random_partition,
    save_partition,
)
from tests.conftest import numeric_table


@pytest.mark.parametrize("k,n_p,sizes", [(4, 2, [2, 2]), (5, 2, [3, 2]), (12, 12, [1] * 12), (7, 3, [3, 2, 2])])
def test_random_partition_sizes(k, n_p, sizes):
    spec = random_partition(k, n_p, seed=1)
    assert spec.sizes() == sizes
    assert sorted(spec.column_order()) == list(range(k))


def test_random_partition_deterministic():
    assert random_partition(9, 3, seed=4) == random_partition(9, 3, seed=4)


@pytest.mark.parametrize("n_p", [0, 6])
def test_random_partition_rejects_bad_n_p(n_p):
    with pytest.raises(PartitionError):
        random_partition(5, n_p, seed=0)


def test_spec_rejects_empty_partition():
    with pytest.raises(PartitionError):
        PartitionSpec(3, (1, 1, 2))


def test_correlation_partition_two_columns():
    table = numeric_table(np.random.default_rng(0).standard_normal((20, 2)))
    assert correlation_partition(table).assignment == (1, 2)


def test_correlation_partition_separates_correlated_pairs(correlated_table):
    spec = correlation_partition(correlated_table)
    assert spec.assignment[0] != spec.assignment[1]
    assert spec.assignment[2] != spec.assignment[3]


def _replay_greedy(corr):
    """Independent replay: repeatedly pick the strongest remaining pair by brute force."""
    remaining = set(range(len(corr)))
    assignment = [0] * len(corr)
    while len(remaining) >= 2:
        best = max(itertools.combinations(sorted(remaining), 2), key=lambda ij: (corr[ij], -ij[0], -ij[1]))
        assignment[best[0]], assignment[best[1]] = 1, 2
        remaining -= set(best)
    for c in remaining:
        assignment[c] = 1 if assignment.count(1) <= assignment.count(2) else 2
    return tuple(assignment)


def test_greedy_pairs_matches_replay():
    corr = np.array([
        [1.0, 0.2, 0.9, 0.1],
        [0.2, 1.0, 0.3, 0.7],
        [0.9, 0.3, 1.0, 0.4],
        [0.1, 0.7, 0.4, 1.0],
    ])
    masked = corr.copy()
    np.fill_diagonal(masked, 0.0)
    assert _greedy_pairs(masked).assignment == _replay_greedy(masked) == (1, 1, 2, 2)


def test_greedy_pairs_odd_column_joins_smaller_partition():
    corr = np.full((3, 3), 0.5)
    np.fill_diagonal(corr, 0.0)
    assert _greedy_pairs(corr).assignment == (1, 2, 1)


def test_ratio_all_half_off_diagonal():
    corr = np.full((4, 4), 0.5)
    np.fill_diagonal(corr, 1.0)
    report = exterior_interior_ratio(corr, PartitionSpec(2, (1, 1, 2, 2)))
    assert report.exterior_norm == pytest.approx(np.sqrt(8 * 0.25))
    assert report.interior_norm == pytest.approx(np.sqrt(4 * 0.25))
    assert report.ratio == pytest.approx(np.sqrt(2))
    assert not report.degenerate


def test_ratio_block_diagonal_is_zero():
    corr = np.eye(4)
    corr[0, 1] = corr[1, 0] = 0.6
    corr[2, 3] = corr[3, 2] = 0.4
    assert exterior_interior_ratio(corr, PartitionSpec(2, (1, 1, 2, 2))).ratio == 0.0


def test_ratio_identity_is_degenerate():
    report = exterior_interior_ratio(np.eye(4), PartitionSpec(2, (1, 1, 2, 2)))
    assert report.degenerate
    assert report.ratio == float("inf")
    assert report.exterior_norm == 0.0


def test_explicit_partition_and_yaml_roundtrip(tmp_path):
    names = ["age", "sex", "bmi", "smoker"]
    spec = explicit_partition(names, {"part1": ["age", "bmi"], "part2": ["sex", "smoker"]})
    assert spec.assignment == (1, 2, 1, 2)
    save_partition(spec, names, tmp_path / "partition.yaml")
    assert load_partition(tmp_path / "partition.yaml", names) == spec


@pytest.mark.parametrize("groups", [
    {"part1": ["age", "nope"], "part2": ["sex"]},
    {"part1": ["age", "sex"], "part2": ["sex"]},
    {"part1": ["age"]},
])
def test_explicit_partition_errors(groups):
    with pytest.raises(PartitionError):
        explicit_partition(["age", "sex"], groups)
