"""
partitioner.py
Column assignment into disjoint partitions.

Key pieces:
    - PartitionSpec: per-column partition index in [1, n_p]
    - random_partition: seeded, near-equal sizes
    - correlation_partition: two partitions that separate the most associated pairs
    - explicit_partition / load_partition / save_partition: named column lists
    - exterior_interior_ratio: Frobenius mass across vs. within partitions
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from dgm.data_loader import atomic_write_text
from dgm.tabular import DataTable, SeededRng, mixed_correlation

logger = logging.getLogger("dgm.partitioner")


class PartitionError(Exception):
    """Custom exception for partitioning errors."""
    pass


@dataclass(frozen=True)
class PartitionSpec:
    """
    Assignment of k columns to n_p disjoint, non-empty partitions.

    Args:
        n_p (int): Number of partitions
        assignment (tuple): Partition index (1-based) of every column
    """

    n_p: int
    assignment: tuple[int, ...]

    def __post_init__(self):
        assignment = tuple(int(a) for a in self.assignment)
        object.__setattr__(self, "assignment", assignment)
        if self.n_p < 1:
            raise PartitionError(f"n_p must be >= 1, got {self.n_p}.")
        if any(a < 1 or a > self.n_p for a in assignment):
            raise PartitionError(f"Assignment {assignment} has indices outside [1, {self.n_p}].")
        empty = sorted(set(range(1, self.n_p + 1)) - set(assignment))
        if empty:
            raise PartitionError(f"Partition(s) {empty} are empty.")

    @property
    def k(self) -> int:
        return len(self.assignment)

    def partitions(self) -> list[list[int]]:
        """Column indices of every partition, in partition order."""
        groups = [[] for _ in range(self.n_p)]
        for column, part in enumerate(self.assignment):
            groups[part - 1].append(column)
        return groups

    def sizes(self) -> list[int]:
        return [len(g) for g in self.partitions()]

    def column_order(self) -> list[int]:
        """Concatenated column order of the partitions (order used when joining)."""
        return [c for group in self.partitions() for c in group]

    def split_table(self, table: DataTable) -> list[DataTable]:
        if table.k != self.k:
            raise PartitionError(f"Spec covers {self.k} columns but table has {table.k}.")
        return [table.select(group) for group in self.partitions()]

    def to_lists(self, names: Sequence[str]) -> dict[str, list[str]]:
        return {f"part{p + 1}": [names[c] for c in group] for p, group in enumerate(self.partitions())}


def random_partition(k: int, n_p: int, seed: int) -> PartitionSpec:
    """
    Seeded random assignment with sizes differing by at most one.

    The first ``k % n_p`` partitions receive the extra column.

    Raises:
        PartitionError: If n_p is outside [1, k]
    """
    if n_p < 1 or n_p > k:
        raise PartitionError(f"n_p must be in [1, {k}], got {n_p}.")
    base, extra = divmod(k, n_p)
    sizes = [base + (1 if p < extra else 0) for p in range(n_p)]
    order = SeededRng(seed).generator().permutation(k)
    assignment = np.empty(k, dtype=np.int64)
    start = 0
    for p, size in enumerate(sizes):
        assignment[order[start:start + size]] = p + 1
        start += size
    return PartitionSpec(n_p, tuple(assignment))


def correlation_partition(table: DataTable) -> PartitionSpec:
    """
    Two partitions built by repeatedly taking the strongest remaining pair.

    The absolute mixed correlation matrix (zero diagonal) is scanned for its
    largest entry (i, j), i < j, ties resolved by the smallest (i, j); column i
    goes to partition 1 and column j to partition 2, and both are removed. A
    final unpaired column joins the smaller partition (partition 1 on a tie).

    Raises:
        PartitionError: If the table has fewer than 2 columns
    """
    k = table.k
    if k < 2:
        raise PartitionError(f"correlation_partition needs at least 2 columns, got {k}.")
    corr = np.abs(mixed_correlation(table))
    np.fill_diagonal(corr, 0.0)
    return _greedy_pairs(corr)


def _greedy_pairs(corr: np.ndarray) -> PartitionSpec:
    k = corr.shape[0]
    active = np.ones(k, dtype=bool)
    upper = np.triu(np.ones((k, k), dtype=bool), k=1)
    assignment = np.zeros(k, dtype=np.int64)
    while active.sum() >= 2:
        mask = upper & active[:, None] & active[None, :]
        scores = np.where(mask, corr, -np.inf)
        i, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
        assignment[i], assignment[j] = 1, 2
        active[i] = active[j] = False
        logger.debug(f"Separated columns {i} and {j} (|corr|={corr[i, j]:.4f})")
    if active.any():
        leftover = int(np.flatnonzero(active)[0])
        assignment[leftover] = 1 if (assignment == 1).sum() <= (assignment == 2).sum() else 2
    return PartitionSpec(2, tuple(assignment))


def explicit_partition(names: Sequence[str], groups: Mapping[str, Sequence[str]]) -> PartitionSpec:
    """
    Build a spec from named column lists (partition name -> column names).

    Partition order follows the mapping's order.

    Raises:
        PartitionError: On unknown, duplicated or unassigned columns
    """
    position = {name: i for i, name in enumerate(names)}
    assignment = [0] * len(names)
    for p, (part_name, columns) in enumerate(groups.items(), start=1):
        for column in columns:
            if column not in position:
                raise PartitionError(f"Partition '{part_name}' names unknown column '{column}'.")
            if assignment[position[column]]:
                raise PartitionError(f"Column '{column}' is assigned more than once.")
            assignment[position[column]] = p
    unassigned = [name for name, a in zip(names, assignment) if a == 0]
    if unassigned:
        raise PartitionError(f"Column(s) not assigned to any partition: {unassigned}")
    return PartitionSpec(len(groups), tuple(assignment))


def save_partition(spec: PartitionSpec, names: Sequence[str], path) -> Path:
    return atomic_write_text(path, yaml.safe_dump(spec.to_lists(names), sort_keys=False))


def load_partition(path, names: Sequence[str]) -> PartitionSpec:
    with open(path, "r", encoding="utf-8") as f:
        groups = yaml.safe_load(f)
    if not isinstance(groups, dict):
        raise PartitionError(f"{path} must map partition names to column lists.")
    return explicit_partition(names, groups)


@dataclass(frozen=True)
class CorrelationRatioReport:
    exterior_norm: float
    interior_norm: float
    ratio: float
    degenerate: bool = False


def exterior_interior_ratio(corr: np.ndarray, spec: PartitionSpec) -> CorrelationRatioReport:
    """
    Ratio of Frobenius norms of cross-partition to within-partition entries.

    Diagonal entries are excluded from both norms. When the interior norm is
    zero the ratio is +inf and ``degenerate`` is set.
    """
    corr = np.asarray(corr, dtype=np.float64)
    if corr.shape != (spec.k, spec.k):
        raise PartitionError(f"Matrix shape {corr.shape} does not match spec with {spec.k} columns.")
    labels = np.asarray(spec.assignment)
    same = labels[:, None] == labels[None, :]
    off_diagonal = ~np.eye(spec.k, dtype=bool)
    interior = float(np.sqrt(np.sum(corr[same & off_diagonal] ** 2)))
    exterior = float(np.sqrt(np.sum(corr[~same] ** 2)))
    if interior == 0.0:
        return CorrelationRatioReport(exterior, interior, float("inf"), degenerate=True)
    return CorrelationRatioReport(exterior, interior, exterior / interior)
