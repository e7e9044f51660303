"""
Unit tests for the Gaussian benchmark tables.
"""
import numpy as np
import pandas as pd
import pytest
from scipy.stats import spearmanr

from dgm.data_loader import DataLoader
from dgm.dummy_data import (
    DEFAULT_GAMMAS,
    DummyDataError,
    DummySpec,
    ratio_sweep,
    sample_dummy,
    target_correlation,
    write_sweep,
)
from dgm.tabular import SeededRng

SMALL = DummySpec(k1=3, k2=3, n=300, gamma=1.0, base_seed=0)


def test_gamma_zero_gives_zero_ratio():
    sample = sample_dummy(DummySpec(k1=3, k2=3, n=300, gamma=0.0, base_seed=2))
    assert sample.achieved_ratio == 0.0
    assert np.all(sample.correlation[:3, 3:] == 0.0)


def test_gamma_one_keeps_base_matrix():
    A = SeededRng(0).generator().standard_normal((6, 6))
    cov = A @ A.T
    scale = 1.0 / np.sqrt(np.diag(cov))
    np.testing.assert_allclose(target_correlation(SMALL), cov * np.outer(scale, scale), atol=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 0.7, 1.3, 2.0])
def test_matrix_is_a_valid_correlation(gamma):
    corr = target_correlation(DummySpec(k1=4, k2=2, gamma=gamma, base_seed=5))
    np.testing.assert_allclose(np.diag(corr), 1.0, atol=1e-12)
    np.testing.assert_allclose(corr, corr.T)
    assert np.linalg.eigvalsh(corr).min() > -1e-9


def test_empirical_correlation_close_to_target():
    sample = sample_dummy(DummySpec(k1=3, k2=3, n=5000, gamma=1.0, base_seed=1))
    empirical = np.corrcoef(sample.table.to_matrix(), rowvar=False)
    assert np.abs(empirical - sample.correlation).max() < 0.1


def test_sample_is_deterministic():
    a, b = sample_dummy(SMALL), sample_dummy(SMALL)
    for x, y in zip(a.table.columns, b.table.columns):
        np.testing.assert_array_equal(x, y)
    assert a.table.names == ["a0", "a1", "a2", "b0", "b1", "b2"]
    assert SMALL.partition().sizes() == [3, 3]


def test_ratio_rises_with_gamma():
    for seed in range(3):
        ratios = [sample_dummy(DummySpec(k1=3, k2=3, n=50, gamma=g, base_seed=seed)).achieved_ratio
                  for g in DEFAULT_GAMMAS]
        assert spearmanr(DEFAULT_GAMMAS, ratios)[0] >= 0.9


def test_default_sweep_size_and_order():
    items = ratio_sweep(DummySpec(k1=2, k2=2, n=20))
    assert len(items) == 210
    ratios = [item.achieved_ratio for item in items]
    assert ratios == sorted(ratios)


@pytest.mark.parametrize("kwargs", [{"k1": 0}, {"n": 1}, {"gamma": -0.1}])
def test_spec_validation(kwargs):
    with pytest.raises(DummyDataError):
        DummySpec(**kwargs)


def test_empty_sweep_rejected():
    with pytest.raises(DummyDataError):
        ratio_sweep(SMALL, gammas=[])


def test_write_sweep(tmp_path):
    items = ratio_sweep(SMALL, gammas=[0.0, 1.0], seeds=[3, 4])
    manifest = write_sweep(items, tmp_path / "dummy")
    lines = manifest.read_text().splitlines()
    assert lines[0] == "seed,gamma,achieved_ratio,file"
    assert len(lines) == 5
    frame = pd.read_csv(manifest)
    assert frame["achieved_ratio"].is_monotonic_increasing
    assert list(frame["file"]) == [f"dummy_{i:04d}.csv" for i in range(4)]
    assert sorted(frame["seed"]) == [3, 3, 4, 4]
    out = tmp_path / "dummy"
    table = DataLoader(out / "dummy_0000.csv", out / "dummy_0000.schema.yaml").get_data()
    assert table.names == SMALL.names()
    assert table.n == 300
