"""
joiner.py
Row-wise joining of independently synthesized partitions.

Module Purpose:
    - concat_join: align independently shuffled parts row by row
    - build_validator_training: authentic rows (1) vs. shuffled joins (0)
    - validated_join: iterative accept/reshuffle loop driven by a scorer,
      with automatic initial threshold, additive decay and early stopping

Assumptions & Limitations:
    - All parts passed to validated_join have the same row count.
    - The first query round uses the same per-part shuffles as concat_join,
      so an accept-all scorer reproduces concatenation.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Mapping, Protocol, Sequence

import numpy as np
import pandas as pd

from dgm.data_loader import write_frame
from dgm.partitioner import PartitionSpec
from dgm.tabular import DataTable, SeededRng, derive_seed


class JoinError(Exception):
    """Custom exception for joining errors."""
    pass


class Scorer(Protocol):
    def score(self, queries: DataTable) -> np.ndarray: ...


class JoinStrategy(str, Enum):
    CONCAT = "concat"
    VALIDATED = "validated"


@dataclass(frozen=True)
class JoinConfig:
    """
    Joining settings.

    Args:
        strategy (JoinStrategy): concat or validated
        target_size (int or None): Output rows; None means the training size
        theta (float or None): Fixed initial threshold; None sets it from the
            first round's scores so that ``auto_accept_fraction`` of them pass
        auto_accept_fraction (float): Share accepted in the first round, in (0, 1]
        decay (float): Threshold decrease after a round without acceptances;
            0 keeps the threshold static
        max_iters (int): Round limit
        early_stop_rounds (int): Stalled rounds tolerated once the threshold
            can no longer decrease
    """

    strategy: JoinStrategy = JoinStrategy.CONCAT
    target_size: int | None = None
    theta: float | None = None
    auto_accept_fraction: float = 0.10
    decay: float = 0.02
    max_iters: int = 200
    early_stop_rounds: int = 20

    def __post_init__(self):
        try:
            object.__setattr__(self, "strategy", JoinStrategy(self.strategy))
        except ValueError:
            raise JoinError(f"Unknown join strategy {self.strategy!r}.") from None
        if self.target_size is not None and self.target_size < 1:
            raise JoinError(f"target_size must be >= 1, got {self.target_size}.")
        if self.theta is not None and not 0.0 <= self.theta < 1.0:
            raise JoinError(f"theta must be in [0, 1), got {self.theta}.")
        if not 0.0 < self.auto_accept_fraction <= 1.0:
            raise JoinError(f"auto_accept_fraction must be in (0, 1], got {self.auto_accept_fraction}.")
        if not 0.0 <= self.decay < 1.0:
            raise JoinError(f"decay must be in [0, 1), got {self.decay}.")
        if self.max_iters < 1 or self.early_stop_rounds < 1:
            raise JoinError("max_iters and early_stop_rounds must be >= 1.")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any] | None) -> "JoinConfig":
        try:
            return cls(**dict(raw or {}))
        except TypeError as e:
            raise JoinError(f"Invalid join settings: {e}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["strategy"] = self.strategy.value
        return out


@dataclass(frozen=True)
class JoinRound:
    round: int
    theta: float
    queries: int
    accepted: int


@dataclass
class JoinTrace:
    """
    Per-round record of a validated join.

    ``provenance`` has one row per accepted output row and one column per
    part, holding the source row index used from that part.
    """

    rounds: list[JoinRound] = field(default_factory=list)
    truncated: bool = False
    provenance: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=np.int64))

    def to_frame(self) -> pd.DataFrame:
        """One row per round: round, theta, queries, accepted."""
        return pd.DataFrame([asdict(r) for r in self.rounds], columns=["round", "theta", "queries", "accepted"])

    def to_csv(self, path):
        return write_frame(self.to_frame(), path)


def _check_parts(parts: Sequence[DataTable]) -> None:
    if not parts:
        raise JoinError("No partitions to join.")
    names = [name for part in parts for name in part.names]
    if len(set(names)) != len(names):
        raise JoinError(f"Partitions share column names: {names}")


def _initial_orders(parts: Sequence[DataTable], seed: int) -> list[tuple[np.ndarray, np.random.Generator]]:
    """Per-part generator and first shuffle; shared by both join strategies."""
    out = []
    for p, part in enumerate(parts):
        rng = SeededRng(derive_seed(seed, p)).generator()
        out.append((rng.permutation(part.n), rng))
    return out


def concat_join(parts: Sequence[DataTable], target_size: int, seed: int) -> DataTable:
    """
    Random concatenation.

    Each part is shuffled with its own seeded stream, truncated to
    target_size and the parts are placed side by side; every column keeps the
    exact multiset of its first target_size shuffled values.

    Raises:
        JoinError: If any part has fewer than target_size rows
    """
    _check_parts(parts)
    short = [p for p, part in enumerate(parts) if part.n < target_size]
    if short:
        raise JoinError(f"Part(s) {short} have fewer than {target_size} rows.")
    orders = _initial_orders(parts, seed)
    return DataTable.hstack([part.take(order[:target_size]) for part, (order, _) in zip(parts, orders)])


def build_validator_training(X: DataTable, spec: PartitionSpec, seed: int) -> tuple[DataTable, np.ndarray]:
    """
    Training data for the joining validator.

    Returns 2n rows: the n authentic rows of X (label 1) followed by n rows in
    which every partition's columns were shuffled independently (label 0).
    Columns follow partition order.
    """
    if X.n == 0:
        raise JoinError("Cannot build validator training data from an empty table.")
    parts = spec.split_table(X)
    authentic = DataTable.hstack(parts)
    shuffled = DataTable.hstack([
        part.take(SeededRng(derive_seed(seed, p)).generator().permutation(X.n)) for p, part in enumerate(parts)
    ])
    features = DataTable.vstack([authentic, shuffled])
    labels = np.concatenate([np.ones(X.n, dtype=np.int64), np.zeros(X.n, dtype=np.int64)])
    return features, labels


class ValidatedJoiner:
    """
    Iterative joining with a scoring validator.

    Each round aligns the current pools into queries, moves rows scoring at
    or above the threshold into the output (removing their source rows from
    every pool) and reshuffles what is left. Rounds without acceptances lower
    the threshold by ``decay``; the run stops once the target is reached, a
    pool is empty, ``max_iters`` rounds have run, or ``early_stop_rounds``
    stalled rounds pass with a threshold that can no longer decrease.

    Example:
        >>> joiner = ValidatedJoiner(validator, JoinConfig(strategy="validated", target_size=500))
        >>> table, trace = joiner.join(parts, seed=7)
    """

    def __init__(self, validator: Scorer, config: JoinConfig):
        self.validator = validator
        self.config = config
        self.logger = logging.getLogger("ValidatedJoiner")

    def join(self, parts: Sequence[DataTable], seed: int) -> tuple[DataTable, JoinTrace]:
        _check_parts(parts)
        sizes = {part.n for part in parts}
        if len(sizes) > 1:
            raise JoinError(f"Partitions have unequal row counts: {[part.n for part in parts]}")
        m = sizes.pop()
        target = self.config.target_size if self.config.target_size is not None else m
        if m < target:
            raise JoinError(f"Partitions have {m} rows, fewer than target_size={target}.")

        orders = _initial_orders(parts, seed)
        pools = [order for order, _ in orders]
        rngs = [rng for _, rng in orders]
        theta = self.config.theta
        trace = JoinTrace()
        accepted_rows: list[np.ndarray] = []
        n_accepted = 0
        stalled = 0

        for round_no in range(1, self.config.max_iters + 1):
            if len(pools[0]) == 0:
                break
            queries = DataTable.hstack([part.take(pool) for part, pool in zip(parts, pools)])
            z = np.asarray(self.validator.score(queries), dtype=np.float64)
            if theta is None:
                theta = float(np.quantile(z, 1.0 - self.config.auto_accept_fraction))
            hits = np.flatnonzero(z >= theta)[: target - n_accepted]
            trace.rounds.append(JoinRound(round_no, theta, len(z), len(hits)))
            if len(hits):
                accepted_rows.append(np.column_stack([pool[hits] for pool in pools]))
                n_accepted += len(hits)
                keep = np.ones(len(pools[0]), dtype=bool)
                keep[hits] = False
                pools = [pool[keep] for pool in pools]
                stalled = 0
            else:
                exhausted = theta <= 0.0 or self.config.decay == 0.0
                stalled = stalled + 1 if exhausted else 0
                theta = max(round(theta - self.config.decay, 12), 0.0)
                if stalled >= self.config.early_stop_rounds:
                    self.logger.warning(f"Early stop after {stalled} stalled rounds at theta={theta}")
                    break
            if n_accepted >= target:
                break
            pools = [pool[rng.permutation(len(pool))] for pool, rng in zip(pools, rngs)]

        provenance = np.vstack(accepted_rows) if accepted_rows else np.empty((0, len(parts)), dtype=np.int64)
        trace.provenance = provenance
        trace.truncated = n_accepted < target
        if trace.truncated:
            self.logger.warning(f"Join stopped with {n_accepted}/{target} rows after {len(trace.rounds)} rounds")
        else:
            self.logger.info(f"Joined {n_accepted} rows in {len(trace.rounds)} rounds")
        table = DataTable.hstack([part.take(provenance[:, p]) for p, part in enumerate(parts)])
        return table, trace


def validated_join(parts: Sequence[DataTable], validator: Scorer, config: JoinConfig,
                   seed: int) -> tuple[DataTable, JoinTrace]:
    """Run the validated joining loop; see ValidatedJoiner."""
    return ValidatedJoiner(validator, config).join(parts, seed)
