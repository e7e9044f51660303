"""
Shared fixtures: small mixed-type and correlated numerical tables.
"""
import numpy as np
import pytest

from dgm.tabular import ColumnKind, ColumnMeta, DataTable


def numeric_table(values: np.ndarray, prefix: str = "x") -> DataTable:
    values = np.asarray(values, dtype=np.float64)
    schema = tuple(ColumnMeta(f"{prefix}{j}", ColumnKind.NUMERICAL) for j in range(values.shape[1]))
    return DataTable(schema, tuple(values[:, j].copy() for j in range(values.shape[1])))


@pytest.fixture
def correlated_table():
    """200 rows, 4 numerical columns: x0/x1 strongly correlated, x2/x3 strongly correlated."""
    rng = np.random.default_rng(0)
    a = rng.standard_normal(200)
    b = rng.standard_normal(200)
    values = np.column_stack([
        a,
        a + 0.3 * rng.standard_normal(200),
        b,
        b + 0.3 * rng.standard_normal(200),
    ])
    return numeric_table(values)


@pytest.fixture
def mixed_table():
    """120 rows: numerical age, categorical sex, binary outcome driven by age."""
    rng = np.random.default_rng(1)
    age = rng.uniform(20, 80, 120)
    sex = rng.integers(0, 2, 120)
    outcome = (age + 5 * rng.standard_normal(120) > 50).astype(np.int64)
    schema = (
        ColumnMeta("age", ColumnKind.NUMERICAL, min=20.0, max=80.0),
        ColumnMeta("sex", ColumnKind.CATEGORICAL, categories=("f", "m")),
        ColumnMeta("outcome", ColumnKind.CATEGORICAL, categories=("no", "yes")),
    )
    return DataTable(schema, (age, sex, outcome))
