"""
dummy_data.py
Gaussian benchmark tables with a tunable cross-group correlation ratio.

Module Purpose:
    - sample_dummy: one table with two column groups (a*, b*) whose
      exterior/interior correlation ratio is controlled by ``gamma``
    - ratio_sweep: many tables over a (gamma, seed) grid, ordered by ratio
    - write_sweep: CSV + schema per table and a manifest CSV

Assumptions & Limitations:
    - All emitted columns are numerical.
    - The target matrix starts from a random A A^T normalized to unit
      diagonal; the cross-group block is scaled by gamma and repaired by
      eigenvalue clipping when it leaves the PSD cone.

Example Usage:
    >>> sample = sample_dummy(DummySpec(k1=3, k2=3, n=500, gamma=1.5, base_seed=4))
    >>> sample.achieved_ratio
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import cholesky

from dgm.data_loader import write_csv, write_frame, write_schema
from dgm.partitioner import PartitionSpec, exterior_interior_ratio
from dgm.tabular import ColumnKind, ColumnMeta, DataTable, SeededRng

logger = logging.getLogger("dgm.dummy_data")

EIGEN_FLOOR = 1e-6
DEFAULT_GAMMAS = tuple(float(g) for g in np.linspace(0.0, 2.0, 21))
DEFAULT_SEEDS = tuple(range(10))


class DummyDataError(Exception):
    """Custom exception for dummy data errors."""
    pass


@dataclass(frozen=True)
class DummySpec:
    k1: int = 6
    k2: int = 6
    n: int = 2000
    gamma: float = 1.0
    base_seed: int = 0

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise DummyDataError(f"k1 and k2 must be >= 1, got {self.k1}, {self.k2}.")
        if self.n < 2:
            raise DummyDataError(f"n must be >= 2, got {self.n}.")
        if self.gamma < 0:
            raise DummyDataError(f"gamma must be >= 0, got {self.gamma}.")

    @property
    def k(self) -> int:
        return self.k1 + self.k2

    def names(self) -> list[str]:
        return [f"a{i}" for i in range(self.k1)] + [f"b{i}" for i in range(self.k2)]

    def partition(self) -> PartitionSpec:
        """The generating column groups as a two-partition spec."""
        return PartitionSpec(2, tuple([1] * self.k1 + [2] * self.k2))


class DummySample(NamedTuple):
    table: DataTable
    achieved_ratio: float
    correlation: np.ndarray
    gamma: float
    seed: int


def _to_correlation(matrix: np.ndarray) -> np.ndarray:
    scale = 1.0 / np.sqrt(np.diag(matrix))
    out = matrix * scale[:, None] * scale[None, :]
    np.fill_diagonal(out, 1.0)
    return (out + out.T) / 2.0


def _clip_to_psd(matrix: np.ndarray, floor: float = EIGEN_FLOOR) -> np.ndarray:
    eigval, eigvec = np.linalg.eigh(matrix)
    if eigval.min() >= floor:
        return matrix
    logger.debug(f"Clipping eigenvalues (min {eigval.min():.3e}) at {floor}")
    repaired = (eigvec * np.maximum(eigval, floor)) @ eigvec.T
    return _to_correlation(repaired)


def target_correlation(spec: DummySpec) -> np.ndarray:
    """Correlation matrix of a DummySpec before sampling."""
    rng = SeededRng(spec.base_seed).generator()
    A = rng.standard_normal((spec.k, spec.k))
    base = _to_correlation(A @ A.T)
    scaled = base.copy()
    scaled[: spec.k1, spec.k1:] *= spec.gamma
    scaled[spec.k1:, : spec.k1] *= spec.gamma
    return _clip_to_psd(scaled)


def _schema(spec: DummySpec) -> tuple[ColumnMeta, ...]:
    return tuple(ColumnMeta(name, ColumnKind.NUMERICAL) for name in spec.names())


def sample_dummy(spec: DummySpec) -> DummySample:
    """
    Draw n multivariate normal rows from the gamma-scaled correlation matrix.

    Args:
        spec (DummySpec): Group sizes, row count, gamma and seed
    Returns:
        DummySample: table, achieved exterior/interior ratio of the final
        matrix, the matrix itself, gamma and seed
    """
    corr = target_correlation(spec)
    lower = cholesky(corr, lower=True)
    z = SeededRng(spec.base_seed, 1).generator().standard_normal((spec.n, spec.k))
    values = z @ lower.T
    schema = _schema(spec)
    metas = tuple(
        replace(meta, min=float(values[:, j].min()), max=float(values[:, j].max()))
        for j, meta in enumerate(schema)
    )
    table = DataTable(metas, tuple(values[:, j].copy() for j in range(spec.k)))
    report = exterior_interior_ratio(corr, spec.partition())
    return DummySample(table, report.ratio, corr, spec.gamma, spec.base_seed)


def ratio_sweep(base: DummySpec, gammas: Sequence[float] = DEFAULT_GAMMAS,
                seeds: Sequence[int] = DEFAULT_SEEDS) -> list[DummySample]:
    """
    One table per (gamma, seed), sorted by achieved ratio.

    Raises:
        DummyDataError: If either list is empty
    """
    if not gammas or not seeds:
        raise DummyDataError("ratio_sweep needs at least one gamma and one seed.")
    items = [sample_dummy(replace(base, gamma=float(g), base_seed=int(s))) for g in gammas for s in seeds]
    items.sort(key=lambda item: item.achieved_ratio)
    logger.info(f"Generated {len(items)} dummy tables, ratios "
                f"{items[0].achieved_ratio:.3f}..{items[-1].achieved_ratio:.3f}")
    return items


def write_sweep(items: Sequence[DummySample], out_dir) -> Path:
    """Write every table (CSV + schema) and ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, item in enumerate(items):
        name = f"dummy_{i:04d}.csv"
        write_csv(item.table, out / name)
        write_schema(item.table, out / f"dummy_{i:04d}.schema.yaml")
        rows.append({"seed": item.seed, "gamma": float(item.gamma),
                     "achieved_ratio": float(item.achieved_ratio), "file": name})
    manifest = pd.DataFrame(rows, columns=["seed", "gamma", "achieved_ratio", "file"])
    return write_frame(manifest, out / "manifest.csv")
