"""
generators.py
Per-partition generative models behind a uniform fit/sample interface.

Module Purpose:
    - GeneratorConfig: kind + hyperparameters + seed for one partition
    - fit / sample: train a FittedGenerator and draw synthetic rows from it
    - structure_search_cost: candidate evaluations of the greedy Bayesian
      network search, summed over equal partitions
    - save_generator / load_generator: model files for reuse across runs

Generator kinds:
    - marginal: independent per-column bootstrap
    - cart_sequential: columns drawn one at a time from CART leaves
      conditioned on the columns already generated
    - bayes_net: greedy mutual-information network over discretized values,
      optional Laplace noise on the conditional tables
    - dp_marginal: independent Laplace-noised histograms

Assumptions & Limitations:
    - The Laplace mechanisms follow the usual PrivBayes-style budget split but
      the pipeline as a whole is not a certified differentially private release.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from itertools import combinations
from math import comb
from pathlib import Path
from typing import Any, Mapping

import joblib
import numpy as np
from sklearn.metrics import mutual_info_score
from sklearn.tree import DecisionTreeClassifier, DecisionTreeRegressor

from dgm.tabular import ColumnMeta, DataTable, SeededRng, derive_seed


class GeneratorError(Exception):
    """Custom exception for generator errors."""
    pass


class GeneratorKind(str, Enum):
    MARGINAL = "marginal"
    CART_SEQUENTIAL = "cart_sequential"
    BAYES_NET = "bayes_net"
    DP_MARGINAL = "dp_marginal"


@dataclass(frozen=True)
class CartParams:
    min_leaf: int = 5
    max_depth: int = 12
    visit_order: tuple[str, ...] | None = None


@dataclass(frozen=True)
class BayesNetParams:
    max_parents: int = 2
    bins: int = 10
    epsilon: float | None = None


@dataclass(frozen=True)
class DpParams:
    epsilon: float = 1.0
    bins: int = 10


@dataclass(frozen=True)
class GeneratorConfig:
    """
    Configuration of one partition's generator.

    Args:
        kind (GeneratorKind): Model family
        oversample_factor (float): Generated rows per target output row, >= 1
        cart (CartParams): Sequential CART settings
        bn (BayesNetParams): Bayesian network settings
        dp (DpParams): Noisy histogram settings
        seed (int): Seed for training randomness (trees, Laplace noise)
    """

    kind: GeneratorKind = GeneratorKind.MARGINAL
    oversample_factor: float = 3.0
    cart: CartParams = field(default_factory=CartParams)
    bn: BayesNetParams = field(default_factory=BayesNetParams)
    dp: DpParams = field(default_factory=DpParams)
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", GeneratorKind(self.kind))
        except ValueError:
            raise GeneratorError(f"Unknown generator kind {self.kind!r}.") from None
        if self.oversample_factor < 1:
            raise GeneratorError(f"oversample_factor must be >= 1, got {self.oversample_factor}.")
        if self.cart.min_leaf < 1 or self.cart.max_depth < 1:
            raise GeneratorError("cart.min_leaf and cart.max_depth must be >= 1.")
        if self.bn.bins < 2 or self.dp.bins < 2:
            raise GeneratorError("bins must be >= 2.")
        if self.bn.max_parents < 1:
            raise GeneratorError(f"bn.max_parents must be >= 1, got {self.bn.max_parents}.")
        if self.bn.epsilon is not None and self.bn.epsilon <= 0:
            raise GeneratorError(f"bn.epsilon must be > 0, got {self.bn.epsilon}.")
        if self.dp.epsilon <= 0:
            raise GeneratorError(f"dp.epsilon must be > 0, got {self.dp.epsilon}.")

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any] | None) -> "GeneratorConfig":
        raw = dict(raw or {})
        cart = dict(raw.pop("cart", None) or {})
        if cart.get("visit_order") is not None:
            cart["visit_order"] = tuple(cart["visit_order"])
        try:
            return cls(
                cart=CartParams(**cart),
                bn=BayesNetParams(**(raw.pop("bn", None) or {})),
                dp=DpParams(**(raw.pop("dp", None) or {})),
                **raw,
            )
        except TypeError as e:
            raise GeneratorError(f"Invalid generator settings: {e}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        if self.cart.visit_order is not None:
            out["cart"]["visit_order"] = list(self.cart.visit_order)
        return out


class FittedGenerator:
    """
    Base class of trained generators.

    Subclasses implement ``_fit`` and ``_sample``; ``sample`` always returns a
    table with exactly the fitted schema.
    """

    kind: GeneratorKind

    def __init__(self, schema: tuple[ColumnMeta, ...], n_train: int):
        self.schema = schema
        self.n_train = n_train
        self.logger = logging.getLogger(type(self).__name__)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.schema]

    def sample(self, m: int, seed: int) -> DataTable:
        """
        Draw m synthetic rows.

        Args:
            m (int): Number of rows, >= 1
            seed (int): Sampling seed
        Returns:
            DataTable: m rows with the fitted schema
        """
        if m < 1:
            raise GeneratorError(f"Sample size must be >= 1, got {m}.")
        rng = SeededRng(seed).generator()
        columns = self._sample(int(m), rng)
        return DataTable(self.schema, tuple(columns))

    def _sample(self, m: int, rng: np.random.Generator) -> list[np.ndarray]:
        raise NotImplementedError


def _bin_edges(values: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    return np.linspace(lo, hi, bins + 1)


def _discretize(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    codes = np.searchsorted(edges, values, side="right") - 1
    return np.clip(codes, 0, len(edges) - 2).astype(np.int64)


def _undiscretize(codes: np.ndarray, edges: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lower = edges[codes]
    upper = edges[codes + 1]
    return lower + rng.random(len(codes)) * (upper - lower)


def _draw_from_rows(cdf_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw, one value per row of a cumulative probability matrix."""
    u = rng.random(cdf_rows.shape[0])[:, None]
    return np.minimum((cdf_rows <= u).sum(axis=1), cdf_rows.shape[1] - 1).astype(np.int64)


def _laplace_histogram(probs: np.ndarray, scale: float, rng: np.random.Generator | None) -> np.ndarray:
    """Add Laplace noise, clamp negatives to 0 and renormalize each row."""
    noisy = probs if rng is None else probs + rng.laplace(0.0, scale, size=probs.shape)
    noisy = np.clip(noisy, 0.0, None)
    totals = noisy.sum(axis=-1, keepdims=True)
    uniform = np.full_like(noisy, 1.0 / noisy.shape[-1])
    return np.where(totals > 0, noisy / np.where(totals > 0, totals, 1.0), uniform)


class MarginalGenerator(FittedGenerator):
    """Independent per-column bootstrap of the training marginals."""

    kind = GeneratorKind.MARGINAL

    def _fit(self, data: DataTable, config: GeneratorConfig) -> None:
        self.category_probabilities = {}
        self.values = {}
        for meta, col in zip(data.schema, data.columns):
            if meta.is_categorical:
                self.category_probabilities[meta.name] = np.bincount(col, minlength=meta.cardinality) / data.n
            else:
                self.values[meta.name] = col.copy()

    def _sample(self, m, rng):
        out = []
        for meta in self.schema:
            if meta.is_categorical:
                out.append(rng.choice(meta.cardinality, size=m, p=self.category_probabilities[meta.name]))
            else:
                out.append(rng.choice(self.values[meta.name], size=m, replace=True))
        return out


class CartSequentialGenerator(FittedGenerator):
    """
    Sequential CART synthesis.

    The first column in visit order is bootstrapped from its marginal; every
    later column is predicted by a tree fitted on the preceding columns and
    its value drawn uniformly from the training rows of the reached leaf.
    Gini trees for categorical targets, variance-reduction trees otherwise.
    """

    kind = GeneratorKind.CART_SEQUENTIAL

    def _fit(self, data: DataTable, config: GeneratorConfig) -> None:
        params = config.cart
        order = list(params.visit_order) if params.visit_order else data.names
        if sorted(order) != sorted(data.names):
            raise GeneratorError(f"cart.visit_order {order} does not cover columns {data.names}.")
        self.visit_order = order
        self.first_values = data.column(order[0]).copy()
        self.trees = {}
        self.leaf_values = {}
        for i in range(1, len(order)):
            target = order[i]
            X = data.select_names(order[:i]).to_matrix()
            y = data.column(target)
            tree_cls = DecisionTreeClassifier if data.meta(target).is_categorical else DecisionTreeRegressor
            tree = tree_cls(min_samples_leaf=params.min_leaf, max_depth=params.max_depth,
                            random_state=derive_seed(config.seed, i) % (2**32))
            tree.fit(X, y)
            leaves = tree.apply(X)
            self.trees[target] = tree
            self.leaf_values[target] = {int(leaf): y[leaves == leaf].copy() for leaf in np.unique(leaves)}
        self.logger.info(f"Fitted {len(self.trees)} sequential trees over {len(order)} columns")

    def _sample(self, m, rng):
        generated = {self.visit_order[0]: rng.choice(self.first_values, size=m, replace=True)}
        for i in range(1, len(self.visit_order)):
            target = self.visit_order[i]
            X = np.column_stack([generated[name].astype(np.float64) for name in self.visit_order[:i]])
            leaves = self.trees[target].apply(X)
            values = np.empty(m, dtype=np.float64)
            for leaf in np.unique(leaves):
                rows = np.flatnonzero(leaves == leaf)
                values[rows] = rng.choice(self.leaf_values[target][int(leaf)], size=len(rows), replace=True)
            generated[target] = values
        return [generated[meta.name] for meta in self.schema]


def greedy_search_cost(k: int, max_parents: int) -> int:
    """Candidate (column, parent set) evaluations of the greedy search on k columns."""
    return sum((k - t) * comb(t, min(max_parents, t)) for t in range(1, k))


class BayesNetGenerator(FittedGenerator):
    """
    Discretized Bayesian network.

    Structure: the first column is the root; each step adds the unvisited
    column and parent set (of size min(max_parents, |visited|), drawn from
    visited columns) with the highest mutual information. Numerical columns
    are cut into equal-width bins and de-discretized uniformly within a bin.
    """

    kind = GeneratorKind.BAYES_NET

    def _fit(self, data: DataTable, config: GeneratorConfig) -> None:
        params = config.bn
        self.edges = {}
        codes = []
        cards = []
        for meta, col in zip(data.schema, data.columns):
            if meta.is_categorical:
                codes.append(col)
                cards.append(meta.cardinality)
            else:
                self.edges[meta.name] = _bin_edges(col, params.bins)
                codes.append(_discretize(col, self.edges[meta.name]))
                cards.append(params.bins)
        codes = np.column_stack(codes)
        self.cards = cards
        self.structure, self.search_evaluations = self._learn_structure(codes, cards, params.max_parents)

        noise_rng = SeededRng(config.seed, 1).generator() if params.epsilon else None
        scale = 2.0 * len(self.structure) / (data.n * params.epsilon) if params.epsilon else 0.0
        self.conditionals = []
        for column, parents in self.structure:
            config_idx = self._parent_config(codes, parents)
            n_configs = int(np.prod([cards[p] for p in parents])) if parents else 1
            counts = np.zeros((n_configs, cards[column]))
            np.add.at(counts, (config_idx, codes[:, column]), 1.0)
            joint = counts / data.n
            self.conditionals.append(_laplace_histogram(joint, scale, noise_rng))
        self.logger.info(f"Learned network {self.edge_list()} after {self.search_evaluations} evaluations")

    def _parent_config(self, codes: np.ndarray, parents: tuple[int, ...]) -> np.ndarray:
        if not parents:
            return np.zeros(codes.shape[0], dtype=np.int64)
        return np.ravel_multi_index(tuple(codes[:, p] for p in parents), tuple(self.cards[p] for p in parents))

    def _learn_structure(self, codes, cards, max_parents):
        k = codes.shape[1]
        structure = [(0, ())]
        visited = [0]
        remaining = list(range(1, k))
        evaluations = 0
        while remaining:
            size = min(max_parents, len(visited))
            best = None
            for column in remaining:
                for parents in combinations(visited, size):
                    evaluations += 1
                    mi = mutual_info_score(codes[:, column], self._parent_config(codes, parents))
                    if best is None or mi > best[0]:
                        best = (mi, column, parents)
            _, column, parents = best
            structure.append((column, parents))
            visited.append(column)
            remaining.remove(column)
        return structure, evaluations

    def edge_list(self) -> list[tuple[str, str]]:
        """(parent, child) pairs by column name."""
        return [(self.schema[p].name, self.schema[c].name) for c, parents in self.structure for p in parents]

    def _sample(self, m, rng):
        codes = np.zeros((m, len(self.schema)), dtype=np.int64)
        for (column, parents), table in zip(self.structure, self.conditionals):
            cdf = np.cumsum(table, axis=1)[self._parent_config(codes, parents)]
            codes[:, column] = _draw_from_rows(cdf, rng)
        out = []
        for j, meta in enumerate(self.schema):
            if meta.is_categorical:
                out.append(codes[:, j])
            else:
                out.append(_undiscretize(codes[:, j], self.edges[meta.name], rng))
        return out


class DpMarginalGenerator(FittedGenerator):
    """
    Independent Laplace-noised histograms.

    The budget is split evenly across columns; each normalized histogram gets
    Laplace noise of scale 2·k/(n·epsilon), negatives are clamped to 0 and the
    result renormalized.
    """

    kind = GeneratorKind.DP_MARGINAL

    def _fit(self, data: DataTable, config: GeneratorConfig) -> None:
        params = config.dp
        rng = SeededRng(config.seed, 2).generator()
        scale = 2.0 * data.k / (data.n * params.epsilon)
        self.edges = {}
        self.histograms = {}
        for meta, col in zip(data.schema, data.columns):
            if meta.is_categorical:
                counts = np.bincount(col, minlength=meta.cardinality)
            else:
                self.edges[meta.name] = _bin_edges(col, params.bins)
                counts = np.bincount(_discretize(col, self.edges[meta.name]), minlength=params.bins)
            self.histograms[meta.name] = _laplace_histogram(counts / data.n, scale, rng)

    def _sample(self, m, rng):
        out = []
        for meta in self.schema:
            probs = self.histograms[meta.name]
            codes = rng.choice(len(probs), size=m, p=probs)
            out.append(codes if meta.is_categorical else _undiscretize(codes, self.edges[meta.name], rng))
        return out


_GENERATORS = {
    GeneratorKind.MARGINAL: MarginalGenerator,
    GeneratorKind.CART_SEQUENTIAL: CartSequentialGenerator,
    GeneratorKind.BAYES_NET: BayesNetGenerator,
    GeneratorKind.DP_MARGINAL: DpMarginalGenerator,
}


def fit(data: DataTable, config: GeneratorConfig) -> FittedGenerator:
    """
    Train a generator on one partition.

    Args:
        data (DataTable): Partition of the training data, n >= 2
        config (GeneratorConfig): Kind, hyperparameters and seed
    Returns:
        FittedGenerator: Deterministic given (data, config)
    Raises:
        GeneratorError: If the table is empty or too small
    """
    if data.k == 0 or data.n < 2:
        raise GeneratorError(f"Cannot fit a generator on a table with {data.n} rows and {data.k} columns.")
    generator = _GENERATORS[config.kind](data.schema, data.n)
    generator._fit(data, config)
    return generator


def sample(gen: FittedGenerator, m: int, seed: int) -> DataTable:
    """Draw m rows from a fitted generator."""
    return gen.sample(m, seed)


def structure_search_cost(k: int, n_p: int, max_parents: int) -> int:
    """
    Candidate parent-set evaluations of the greedy network search summed over
    n_p near-equal partitions of k columns (sizes differ by at most one).
    """
    if n_p < 1 or n_p > k:
        raise GeneratorError(f"n_p must be in [1, {k}], got {n_p}.")
    base, extra = divmod(k, n_p)
    return sum(greedy_search_cost(base + (1 if p < extra else 0), max_parents) for p in range(n_p))


def save_generator(gen: FittedGenerator, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump({"kind": gen.kind.value, "schema": gen.schema, "model": gen}, path)
    return path


def load_generator(path) -> FittedGenerator:
    payload = joblib.load(path)
    if not isinstance(payload, dict) or "model" not in payload:
        raise GeneratorError(f"{path} is not a generator model file.")
    return payload["model"]
