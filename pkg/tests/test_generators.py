"""
Unit tests for the per-partition generators.
"""
from itertools import combinations

import numpy as np
import pytest

from dgm.generators import (
    BayesNetParams,
    CartParams,
    DpParams,
    GeneratorConfig,
    GeneratorError,
    GeneratorKind,
    fit,
    greedy_search_cost,
    load_generator,
    sample,
    save_generator,
    structure_search_cost,
)
from dgm.tabular import ColumnKind, ColumnMeta, DataTable, cramers_v
from tests.conftest import numeric_table


def categorical_table(columns: dict, cards: dict | None = None) -> DataTable:
    cards = cards or {}
    schema = tuple(
        ColumnMeta(name, ColumnKind.CATEGORICAL, categories=tuple(str(c) for c in range(cards.get(name, max(v) + 1))))
        for name, v in columns.items()
    )
    return DataTable(schema, tuple(np.asarray(v) for v in columns.values()))


@pytest.mark.parametrize("kind", list(GeneratorKind))
def test_schema_preserved_and_deterministic(kind, mixed_table):
    gen = fit(mixed_table, GeneratorConfig(kind=kind, seed=3))
    a = sample(gen, 50, seed=9)
    b = sample(gen, 50, seed=9)
    assert a.schema == mixed_table.schema
    assert a.n == 50
    for x, y in zip(a.columns, b.columns):
        np.testing.assert_array_equal(x, y)


def test_marginal_probabilities():
    table = categorical_table({"c": [0] * 7 + [1] * 3})
    gen = fit(table, GeneratorConfig(kind="marginal"))
    np.testing.assert_allclose(gen.category_probabilities["c"], [0.7, 0.3])


def test_marginal_constant_column():
    table = numeric_table(np.full((10, 1), 4.2))
    out = sample(fit(table, GeneratorConfig()), 5, seed=0)
    np.testing.assert_array_equal(out.columns[0], np.full(5, 4.2))


def test_fit_rejects_empty_table():
    with pytest.raises(GeneratorError):
        fit(numeric_table(np.zeros((1, 2))), GeneratorConfig())


def test_bayes_net_links_correlated_columns():
    x = np.array([0, 1] * 50)
    table = categorical_table({"a": x, "noise": np.random.default_rng(0).integers(0, 2, 100), "b": x})
    gen = fit(table, GeneratorConfig(kind="bayes_net", bn=BayesNetParams(max_parents=1)))
    assert ("a", "b") in gen.edge_list()
    assert gen.search_evaluations == greedy_search_cost(3, 1)


def test_bayes_net_keeps_independence():
    rng = np.random.default_rng(5)
    table = categorical_table({"a": rng.integers(0, 2, 1000), "b": rng.integers(0, 2, 1000)})
    out = sample(fit(table, GeneratorConfig(kind="bayes_net")), 1000, seed=1)
    assert cramers_v(out.columns[0], out.columns[1]) < 0.15


def test_dp_marginal_large_epsilon_matches_histogram():
    table = categorical_table({"c": [0] * 5 + [1] * 3 + [2] * 2})
    gen = fit(table, GeneratorConfig(kind="dp_marginal", dp=DpParams(epsilon=1e9)))
    np.testing.assert_allclose(gen.histograms["c"], [0.5, 0.3, 0.2], atol=1e-4)


def test_dp_noise_shrinks_with_epsilon():
    table = categorical_table({"c": np.repeat(np.arange(5), 20)})
    errors = []
    for eps in (0.1, 1.0, 10.0):
        devs = [
            np.abs(fit(table, GeneratorConfig(kind="dp_marginal", dp=DpParams(epsilon=eps), seed=s))
                   .histograms["c"] - 0.2).sum()
            for s in range(50)
        ]
        errors.append(np.mean(devs))
    assert errors[0] >= errors[1] >= errors[2]


def test_cart_follows_functional_relation():
    rng = np.random.default_rng(2)
    x = rng.integers(0, 4, 400)
    table = categorical_table({"x": x, "y": (x * 3 + 1) % 4})
    gen = fit(table, GeneratorConfig(kind="cart_sequential", cart=CartParams(min_leaf=5, max_depth=4)))
    rates = []
    for seed in range(10):
        out = sample(gen, 200, seed=seed)
        rates.append(np.mean(out.columns[1] == (out.columns[0] * 3 + 1) % 4))
    assert np.mean(rates) >= 0.95


def test_cart_single_column_is_bootstrap():
    table = numeric_table(np.array([[1.0], [2.0], [5.0]]))
    out = sample(fit(table, GeneratorConfig(kind="cart_sequential")), 100, seed=0)
    assert set(out.columns[0]) <= {1.0, 2.0, 5.0}


def test_cart_visit_order_must_cover_columns(correlated_table):
    config = GeneratorConfig.from_dict({"kind": "cart_sequential", "cart": {"visit_order": ["x0"]}})
    with pytest.raises(GeneratorError):
        fit(correlated_table, config)


def _simulated_cost(k, max_parents):
    visited, remaining, count = [0], list(range(1, k)), 0
    while remaining:
        size = min(max_parents, len(visited))
        count += len(remaining) * len(list(combinations(visited, size)))
        visited.append(remaining.pop())
    return count


@pytest.mark.parametrize("k,max_parents", [(8, 1), (5, 2), (24, 2), (6, 3)])
def test_greedy_cost_matches_enumeration(k, max_parents):
    assert greedy_search_cost(k, max_parents) == _simulated_cost(k, max_parents)


def test_structure_cost_scaling():
    costs = [structure_search_cost(24, n_p, 2) for n_p in (1, 2, 4, 8)]
    assert costs == sorted(costs, reverse=True)
    assert len(set(costs)) == 4
    assert structure_search_cost(2, 2, 2) == 0
    assert structure_search_cost(8, 2, 1) == 2 * _simulated_cost(4, 1)


def test_config_from_dict_rejects_unknown_kind():
    with pytest.raises(GeneratorError):
        GeneratorConfig.from_dict({"kind": "gan"})


def test_save_and_load_generator(tmp_path, mixed_table):
    gen = fit(mixed_table, GeneratorConfig(kind="bayes_net", seed=1))
    path = save_generator(gen, tmp_path / "models" / "bn.joblib")
    loaded = load_generator(path)
    a, b = gen.sample(20, seed=4), loaded.sample(20, seed=4)
    for x, y in zip(a.columns, b.columns):
        np.testing.assert_array_equal(x, y)
