"""
tabular.py
Column-major mixed-type tables and the utilities every other module builds on.

Module Purpose:
    - ColumnMeta / DataTable: schema-carrying immutable tables
    - split: seeded uniform train/holdout split
    - SeededRng / derive_seed: reproducible random streams
    - TableEncoder: one-hot + z-score encoding for distance computations
    - mixed_correlation: Pearson / Cramér's V / correlation ratio matrix

Assumptions & Limitations:
    - Missing values are not supported; categoricals are stored as integer
      codes into the column's category list, numericals as float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import scipy.stats
from sklearn.preprocessing import OneHotEncoder, StandardScaler

logger = logging.getLogger("dgm.tabular")


class TabularError(Exception):
    """Custom exception for table construction and manipulation errors."""
    pass


class ColumnKind(str, Enum):
    CATEGORICAL = "categorical"
    NUMERICAL = "numerical"


@dataclass(frozen=True)
class ColumnMeta:
    """
    Schema entry for one column.

    Args:
        name (str): Column name
        kind (ColumnKind): categorical or numerical
        categories (tuple): Ordered distinct labels (categorical only)
        min (float): Lower bound (numerical only)
        max (float): Upper bound (numerical only)
    """

    name: str
    kind: ColumnKind
    categories: tuple[str, ...] = ()
    min: float | None = None
    max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ColumnKind(self.kind))
        if self.is_categorical:
            cats = tuple(str(c) for c in self.categories)
            if not cats:
                raise TabularError(f"Categorical column '{self.name}' has no categories.")
            if len(set(cats)) != len(cats):
                raise TabularError(f"Categorical column '{self.name}' has duplicate categories.")
            object.__setattr__(self, "categories", cats)
        elif self.min is not None and self.max is not None and self.min > self.max:
            raise TabularError(f"Numerical column '{self.name}' has min > max.")

    @property
    def is_categorical(self) -> bool:
        return self.kind is ColumnKind.CATEGORICAL

    @property
    def cardinality(self) -> int:
        return len(self.categories)

    def code_of(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise TabularError(f"'{label}' is not a category of column '{self.name}'.") from None


@dataclass(frozen=True, eq=False)
class DataTable:
    """
    Immutable column-major table with a schema.

    Categorical columns hold int64 codes into ``ColumnMeta.categories``;
    numerical columns hold float64 values. Arrays are made read-only so a
    table can be shared freely between readers.

    Example:
        >>> meta = [ColumnMeta("age", "numerical"), ColumnMeta("sex", "categorical", ("f", "m"))]
        >>> t = DataTable.from_frame(pd.DataFrame({"age": [30.0], "sex": ["f"]}), meta)
        >>> t.n, t.k
        (1, 2)
    """

    schema: tuple[ColumnMeta, ...]
    columns: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        schema = tuple(self.schema)
        if len(schema) != len(self.columns):
            raise TabularError(f"Schema has {len(schema)} columns but {len(self.columns)} arrays given.")
        names = [m.name for m in schema]
        if len(set(names)) != len(names):
            raise TabularError(f"Duplicate column names in schema: {names}")
        arrays = []
        lengths = set()
        for meta, values in zip(schema, self.columns):
            if meta.is_categorical:
                arr = np.array(values, dtype=np.int64)
                if arr.size and (arr.min() < 0 or arr.max() >= meta.cardinality):
                    raise TabularError(f"Column '{meta.name}' holds codes outside its category list.")
            else:
                arr = np.array(values, dtype=np.float64)
            arr.setflags(write=False)
            arrays.append(arr)
            lengths.add(arr.shape[0])
        if len(lengths) > 1:
            raise TabularError(f"Columns have unequal lengths: {sorted(lengths)}")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "columns", tuple(arrays))

    @property
    def n(self) -> int:
        return int(self.columns[0].shape[0]) if self.columns else 0

    @property
    def k(self) -> int:
        return len(self.schema)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.schema]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise TabularError(f"Unknown column '{name}'.") from None

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.index_of(name)]

    def meta(self, name: str) -> ColumnMeta:
        return self.schema[self.index_of(name)]

    def select(self, indices: Iterable[int]) -> "DataTable":
        """Column subset, in the given order."""
        idx = list(indices)
        return DataTable(tuple(self.schema[i] for i in idx), tuple(self.columns[i] for i in idx))

    def select_names(self, names: Iterable[str]) -> "DataTable":
        return self.select(self.index_of(name) for name in names)

    def take(self, rows: Sequence[int] | np.ndarray) -> "DataTable":
        """Row subset, in the given order."""
        rows = np.asarray(rows, dtype=np.int64)
        return DataTable(self.schema, tuple(col[rows] for col in self.columns))

    def head(self, m: int) -> "DataTable":
        return self.take(np.arange(min(m, self.n)))

    def to_matrix(self) -> np.ndarray:
        """n×k float matrix of raw values (category codes for categoricals)."""
        if not self.columns:
            return np.empty((0, 0))
        return np.column_stack([col.astype(np.float64) for col in self.columns])

    def to_frame(self, decode: bool = True) -> pd.DataFrame:
        """
        Convert to a pandas DataFrame.

        Args:
            decode (bool): Replace categorical codes with their labels
        Returns:
            pd.DataFrame: One column per schema entry
        """
        data = {}
        for meta, col in zip(self.schema, self.columns):
            if meta.is_categorical and decode:
                data[meta.name] = np.asarray(meta.categories, dtype=object)[col]
            else:
                data[meta.name] = col.copy()
        return pd.DataFrame(data, columns=self.names)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: Sequence[ColumnMeta]) -> "DataTable":
        """Build a table from a DataFrame of labels (categoricals) and numbers."""
        columns = []
        for meta in schema:
            if meta.name not in frame.columns:
                raise TabularError(f"Missing column '{meta.name}'.")
            values = frame[meta.name].to_numpy()
            if meta.is_categorical:
                lookup = {label: code for code, label in enumerate(meta.categories)}
                try:
                    columns.append(np.array([lookup[str(v)] for v in values], dtype=np.int64))
                except KeyError as e:
                    raise TabularError(f"{e.args[0]!r} is not a category of column '{meta.name}'.") from None
            else:
                columns.append(np.asarray(values, dtype=np.float64))
        return cls(tuple(schema), tuple(columns))

    @classmethod
    def hstack(cls, tables: Sequence["DataTable"]) -> "DataTable":
        """Concatenate tables column-wise; all must have the same row count."""
        if not tables:
            raise TabularError("Nothing to concatenate.")
        if len({t.n for t in tables}) > 1:
            raise TabularError(f"Row counts differ: {[t.n for t in tables]}")
        return cls(sum((t.schema for t in tables), ()), sum((t.columns for t in tables), ()))

    @classmethod
    def vstack(cls, tables: Sequence["DataTable"]) -> "DataTable":
        """Concatenate tables row-wise; schemas must be identical."""
        if not tables:
            raise TabularError("Nothing to concatenate.")
        schema = tables[0].schema
        if any(t.schema != schema for t in tables[1:]):
            raise TabularError("Cannot stack tables with different schemas.")
        return cls(schema, tuple(np.concatenate(cols) for cols in zip(*(t.columns for t in tables))))


@dataclass(frozen=True)
class SplitPair:
    train: DataTable
    holdout: DataTable


@dataclass(frozen=True)
class SeededRng:
    """
    Named random stream. Identical (master_seed, stream_id) pairs produce
    identical draw sequences; parallel work uses distinct stream ids.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.master_seed & (2**64 - 1), self.stream_id]))

    def child(self, *keys: int) -> "SeededRng":
        return SeededRng(derive_seed(self.master_seed, self.stream_id, *keys))


def derive_seed(master_seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for (master_seed, *keys)."""
    entropy = [int(master_seed) & (2**64 - 1)] + [int(k) & (2**64 - 1) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def split(table: DataTable, holdout_fraction: float, seed: int) -> SplitPair:
    """
    Seeded uniform train/holdout split.

    Args:
        table (DataTable): Source table, n >= 2
        holdout_fraction (float): Share of rows in the holdout, in (0, 1)
        seed (int): Permutation seed
    Returns:
        SplitPair: Disjoint train and holdout tables, each in source row order
    Raises:
        TabularError: If n < 2 or the fraction is outside (0, 1)
    """
    if table.n < 2:
        raise TabularError(f"Cannot split a table with {table.n} rows.")
    if not 0.0 < holdout_fraction < 1.0:
        raise TabularError(f"holdout_fraction must be in (0, 1), got {holdout_fraction}.")
    n_holdout = int(np.floor(holdout_fraction * table.n + 0.5))
    n_holdout = min(max(n_holdout, 1), table.n - 1)
    perm = SeededRng(seed).generator().permutation(table.n)
    holdout_rows = np.sort(perm[:n_holdout])
    train_rows = np.sort(perm[n_holdout:])
    logger.info(f"Split {table.n} rows into train={len(train_rows)}, holdout={len(holdout_rows)}")
    return SplitPair(train=table.take(train_rows), holdout=table.take(holdout_rows))


class TableEncoder:
    """
    One-hot + z-score encoder fitted on a reference table.

    Categoricals are one-hot encoded over the schema's full category list,
    numericals are standardized with the reference mean and standard
    deviation (zero variance columns are only centred).

    Example:
        >>> enc = TableEncoder().fit(real)
        >>> X_real, X_synth = enc.transform(real), enc.transform(synth)
    """

    def __init__(self):
        self.schema: tuple[ColumnMeta, ...] | None = None
        self.source_columns: np.ndarray | None = None
        self._encoders: list = []

    def fit(self, table: DataTable) -> "TableEncoder":
        self.schema = table.schema
        self._encoders = []
        sources = []
        for j, (meta, col) in enumerate(zip(table.schema, table.columns)):
            if meta.is_categorical:
                enc = OneHotEncoder(categories=[list(range(meta.cardinality))], sparse_output=False,
                                    handle_unknown="ignore")
                enc.fit(np.arange(meta.cardinality).reshape(-1, 1))
                sources.extend([j] * meta.cardinality)
            else:
                enc = StandardScaler()
                enc.fit(col.reshape(-1, 1) if table.n else np.zeros((1, 1)))
                sources.append(j)
            self._encoders.append(enc)
        self.source_columns = np.asarray(sources, dtype=np.int64)
        return self

    @property
    def dimension(self) -> int:
        return 0 if self.source_columns is None else len(self.source_columns)

    def transform(self, table: DataTable) -> np.ndarray:
        if self.schema is None:
            raise TabularError("TableEncoder used before fit().")
        if table.names != [m.name for m in self.schema]:
            raise TabularError(f"Schema mismatch: expected {[m.name for m in self.schema]}, got {table.names}")
        if table.n == 0:
            return np.empty((0, self.dimension))
        blocks = [enc.transform(col.reshape(-1, 1)) for enc, col in zip(self._encoders, table.columns)]
        return np.hstack(blocks).astype(np.float64)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    return float(np.clip(np.corrcoef(x, y)[0, 1], -1.0, 1.0))


def cramers_v(x: np.ndarray, y: np.ndarray) -> float:
    """Cramér's V without bias correction; 0 when either side is constant."""
    table = pd.crosstab(x, y)
    r, c = table.shape
    if min(r, c) < 2:
        return 0.0
    chi2 = scipy.stats.chi2_contingency(table, correction=False)[0]
    return float(np.clip(np.sqrt(chi2 / (table.to_numpy().sum() * (min(r, c) - 1))), 0.0, 1.0))


def correlation_ratio(categories: np.ndarray, values: np.ndarray) -> float:
    """Correlation ratio η of a numerical variable given a categorical one."""
    total = np.sum((values - values.mean()) ** 2)
    if total == 0:
        return 0.0
    frame = pd.DataFrame({"c": categories, "v": values})
    groups = frame.groupby("c")["v"].agg(["mean", "size"])
    between = np.sum(groups["size"] * (groups["mean"] - values.mean()) ** 2)
    return float(np.clip(np.sqrt(between / total), 0.0, 1.0))


def mixed_correlation(table: DataTable) -> np.ndarray:
    """
    Mixed-type association matrix.

    numerical/numerical: Pearson; categorical/categorical: Cramér's V;
    categorical/numerical: correlation ratio η (placed symmetrically).
    Zero-variance columns have association 0 with every other column.

    Args:
        table (DataTable): Table with n >= 2
    Returns:
        np.ndarray: k×k symmetric matrix with unit diagonal
    Raises:
        TabularError: If n < 2
    """
    if table.n < 2:
        raise TabularError(f"mixed_correlation needs at least 2 rows, got {table.n}.")
    k = table.k
    corr = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            mi, mj = table.schema[i], table.schema[j]
            xi, xj = table.columns[i], table.columns[j]
            if mi.is_categorical and mj.is_categorical:
                value = cramers_v(xi, xj)
            elif mi.is_categorical:
                value = correlation_ratio(xi, xj)
            elif mj.is_categorical:
                value = correlation_ratio(xj, xi)
            else:
                value = _pearson(xi, xj)
            corr[i, j] = corr[j, i] = value
    return corr
