"""
validator.py
Calibrated binary scorers that tell authentic joins from random ones.

Module Purpose:
    - HyperparameterGrid: per-backend candidate settings (full / degraded presets)
    - train: 70/15/15 fit/select/calibrate split, grid search by AUROC,
      two-parameter sigmoid calibration
    - ValidatorModel.score: calibrated validity score in [0, 1]
    - reliability: calibration curves and score histograms for train/holdout

Backends:
    - random_forest: scikit-learn forest on raw values (category codes)
    - knn: k-nearest-neighbour positive fraction on one-hot/z-scored features
    - one_class_distance: 1 / (1 + d_k / tau) from the distance to the k-th
      nearest positive training row; negatives are ignored when fitting
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Any, Sequence

import joblib
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit
from sklearn.ensemble import RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import brier_score_loss, roc_auc_score
from sklearn.model_selection import train_test_split
from sklearn.neighbors import KNeighborsClassifier, NearestNeighbors

from dgm.data_loader import write_frame
from dgm.tabular import DataTable, TableEncoder, derive_seed


class ValidatorError(Exception):
    """Custom exception for validator errors."""
    pass


class ValidatorBackend(str, Enum):
    RANDOM_FOREST = "random_forest"
    KNN = "knn"
    ONE_CLASS_DISTANCE = "one_class_distance"


def _expand(**options: Sequence[Any]) -> tuple[dict, ...]:
    keys = list(options)
    return tuple(dict(zip(keys, values)) for values in product(*options.values()))


@dataclass(frozen=True)
class HyperparameterGrid:
    """
    Candidate settings per backend.

    Example:
        >>> grid = HyperparameterGrid.preset("full")
        >>> len(grid.candidates("random_forest"))
        8
    """

    forest: tuple[dict, ...] = field(default_factory=lambda: _expand(
        n_estimators=[50, 200], max_depth=[8, 16], min_samples_leaf=[1, 5]))
    knn: tuple[dict, ...] = field(default_factory=lambda: _expand(k=[5, 15, 31]))
    one_class: tuple[dict, ...] = field(default_factory=lambda: _expand(k=[5, 15]))

    def __post_init__(self):
        if not (self.forest and self.knn and self.one_class):
            raise ValidatorError("Every backend needs at least one candidate setting.")

    @classmethod
    def full(cls) -> "HyperparameterGrid":
        return cls()

    @classmethod
    def degraded(cls) -> "HyperparameterGrid":
        """Shallow, heavily regularized candidates that leave the validator underconfident."""
        return cls(
            forest=_expand(n_estimators=[5], max_depth=[1], min_samples_leaf=[50]),
            knn=_expand(k=[301]),
            one_class=_expand(k=[1]),
        )

    @classmethod
    def preset(cls, name: str) -> "HyperparameterGrid":
        presets = {"full": cls.full, "degraded": cls.degraded}
        if name not in presets:
            raise ValidatorError(f"Unknown grid preset {name!r}; expected one of {sorted(presets)}.")
        return presets[name]()

    def candidates(self, backend) -> tuple[dict, ...]:
        backend = ValidatorBackend(backend)
        return {
            ValidatorBackend.RANDOM_FOREST: self.forest,
            ValidatorBackend.KNN: self.knn,
            ValidatorBackend.ONE_CLASS_DISTANCE: self.one_class,
        }[backend]


class OneClassDistance:
    """
    Distance-to-positives scorer: 1 / (1 + d_k / tau).

    tau is the median leave-one-out k-th neighbour distance among the
    training positives, i.e. the typical d_k of a fresh positive query.
    Queries are scored against every stored positive, so a query identical
    to a training positive counts that copy as its nearest neighbour (d_1 = 0,
    score 1 for k = 1). Join queries are new recombinations of part rows,
    which only coincide with a training row when they reproduce it exactly.
    """

    def __init__(self, k: int = 5):
        self.k = k
        self.tau = 1.0
        self.logger = logging.getLogger("OneClassDistance")

    def fit(self, X_pos: np.ndarray) -> "OneClassDistance":
        if len(X_pos) < 2:
            raise ValidatorError("one_class_distance needs at least 2 positive rows.")
        self.k_eff = min(self.k, len(X_pos) - 1)
        self.nn = NearestNeighbors(n_neighbors=self.k_eff + 1).fit(X_pos)
        distances, _ = self.nn.kneighbors(X_pos, n_neighbors=self.k_eff + 1)
        d_k = distances[:, self.k_eff]
        positive = d_k[d_k > 0]
        if positive.size:
            self.tau = float(np.median(d_k)) if np.median(d_k) > 0 else float(np.median(positive))
        else:
            self.logger.warning("All training positives coincide; using tau=1.0")
            self.tau = 1.0
        return self

    def kth_distance(self, X: np.ndarray) -> np.ndarray:
        """k-th nearest stored positive for each query row; a stored copy of the query counts."""
        distances, _ = self.nn.kneighbors(X, n_neighbors=self.k_eff)
        return distances[:, self.k_eff - 1]

    def raw(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + self.kth_distance(X) / self.tau)


class ValidatorModel:
    """
    Trained, optionally calibrated validator.

    Args:
        backend (ValidatorBackend): Model family
        params (dict): Selected hyperparameters
        estimator: Fitted scikit-learn estimator or OneClassDistance
        feature_names (list): Column names expected in queries
        encoder (TableEncoder or None): One-hot/z-score encoder for distance backends
        calibration (tuple or None): Sigmoid slope and intercept (a, b)
    """

    def __init__(self, backend, params, estimator, feature_names, encoder=None, calibration=None):
        self.backend = ValidatorBackend(backend)
        self.params = dict(params)
        self.estimator = estimator
        self.feature_names = list(feature_names)
        self.encoder = encoder
        self.calibration = calibration

    def _features(self, queries: DataTable) -> np.ndarray:
        if queries.names != self.feature_names:
            raise ValidatorError(f"Query columns {queries.names} do not match training columns {self.feature_names}.")
        return self.encoder.transform(queries) if self.encoder is not None else queries.to_matrix()

    def raw_score(self, queries: DataTable) -> np.ndarray:
        """Uncalibrated score in [0, 1]."""
        X = self._features(queries)
        if len(X) == 0:
            return np.empty(0)
        if self.backend is ValidatorBackend.ONE_CLASS_DISTANCE:
            return self.estimator.raw(X)
        proba = self.estimator.predict_proba(X)
        classes = list(self.estimator.classes_)
        return proba[:, classes.index(1)] if 1 in classes else np.zeros(len(X))

    def apply_calibration(self, raw: np.ndarray) -> np.ndarray:
        if self.calibration is None:
            return np.asarray(raw, dtype=np.float64)
        a, b = self.calibration
        return expit(a * np.asarray(raw, dtype=np.float64) + b)

    def score(self, queries: DataTable) -> np.ndarray:
        """Calibrated validity score of every query row."""
        return np.clip(self.apply_calibration(self.raw_score(queries)), 0.0, 1.0)


def _encoder_for(backend: ValidatorBackend, features: DataTable) -> TableEncoder | None:
    if backend is ValidatorBackend.RANDOM_FOREST:
        return None
    return TableEncoder().fit(features)


def _fit_candidate(backend: ValidatorBackend, params: dict, X: np.ndarray, y: np.ndarray, seed: int):
    if backend is ValidatorBackend.RANDOM_FOREST:
        model = RandomForestClassifier(random_state=seed % (2**32), n_jobs=1, **params)
        return model.fit(X, y)
    if backend is ValidatorBackend.KNN:
        return KNeighborsClassifier(n_neighbors=min(params["k"], len(X))).fit(X, y)
    return OneClassDistance(k=params["k"]).fit(X[y == 1])


def _auroc(y: np.ndarray, scores: np.ndarray) -> float:
    if len(np.unique(y)) < 2:
        return 0.5
    return float(roc_auc_score(y, scores))


def _three_way_split(labels: np.ndarray, seed: int):
    idx = np.arange(len(labels))
    rs = seed % (2**32)
    try:
        fit_idx, rest = train_test_split(idx, train_size=0.7, stratify=labels, random_state=rs)
        select_idx, cal_idx = train_test_split(rest, test_size=0.5, stratify=labels[rest], random_state=rs)
    except ValueError:
        fit_idx, rest = train_test_split(idx, train_size=0.7, random_state=rs)
        select_idx, cal_idx = train_test_split(rest, test_size=0.5, random_state=rs)
    return fit_idx, select_idx, cal_idx


def train(features: DataTable, labels, backend, grid: HyperparameterGrid | None = None, seed: int = 0,
          calibrate: bool = True, jobs: int = 1) -> ValidatorModel:
    """
    Train a validator with grid search and sigmoid calibration.

    Args:
        features (DataTable): Candidate join rows
        labels (array): 1 for authentic joins, 0 for random joins
        backend (ValidatorBackend): Model family
        grid (HyperparameterGrid): Candidate settings; full preset when None
        seed (int): Seed for splitting and model randomness
        calibrate (bool): Fit the sigmoid calibration step
        jobs (int): Parallel workers for grid points
    Returns:
        ValidatorModel: Immutable after training
    Raises:
        ValidatorError: On length mismatch or single-class labels
    """
    logger = logging.getLogger("ValidatorTrainer")
    backend = ValidatorBackend(backend)
    grid = grid or HyperparameterGrid.full()
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != features.n:
        raise ValidatorError(f"{features.n} feature rows but {len(labels)} labels.")
    if set(np.unique(labels)) != {0, 1}:
        raise ValidatorError("Validator training needs both label 0 and label 1 rows.")

    fit_idx, select_idx, cal_idx = _three_way_split(labels, seed)
    encoder = _encoder_for(backend, features.take(fit_idx))
    shell = ValidatorModel(backend, {}, None, features.names, encoder)
    X_fit = shell._features(features.take(fit_idx))
    model_seed = derive_seed(seed, 1)

    candidates = grid.candidates(backend)
    estimators = Parallel(n_jobs=jobs)(
        delayed(_fit_candidate)(backend, params, X_fit, labels[fit_idx], model_seed) for params in candidates
    )
    select = features.take(select_idx)
    best = None
    for params, estimator in zip(candidates, estimators):
        model = ValidatorModel(backend, params, estimator, features.names, encoder)
        auc = _auroc(labels[select_idx], model.raw_score(select))
        logger.debug(f"{backend.value} {params}: select AUROC={auc:.4f}")
        if best is None or auc > best[0]:
            best = (auc, model)
    auc, model = best
    logger.info(f"Selected {backend.value} {model.params} (select AUROC={auc:.4f})")

    if calibrate:
        model.calibration = _fit_calibration(model, features.take(cal_idx), labels[cal_idx], logger)
    return model


def _fit_calibration(model: ValidatorModel, features: DataTable, labels: np.ndarray, logger):
    if len(np.unique(labels)) < 2:
        logger.warning("Calibration split holds a single class; scores left uncalibrated")
        return None
    raw = model.raw_score(features)
    lr = LogisticRegression(C=1e6).fit(raw.reshape(-1, 1), labels)
    a, b = float(lr.coef_[0, 0]), float(lr.intercept_[0])
    if a <= 0:
        logger.warning(f"Calibration slope {a:.4f} is not positive; scores left uncalibrated")
        return None
    calibrated = expit(a * raw + b)
    if brier_score_loss(labels, calibrated) > brier_score_loss(labels, raw):
        logger.warning("Calibration did not improve the Brier score; scores left uncalibrated")
        return None
    return (a, b)


@dataclass(frozen=True)
class ReliabilityBins:
    edges: np.ndarray
    mean_score: np.ndarray
    positive_fraction: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class ReliabilityCurve:
    train: ReliabilityBins
    holdout: ReliabilityBins | None = None

    def to_frame(self) -> pd.DataFrame:
        """One row per (set, bin); the holdout rows are present only when a holdout was scored."""
        frames = []
        for name, bins in (("train", self.train), ("holdout", self.holdout)):
            if bins is None:
                continue
            frames.append(pd.DataFrame({
                "set": name,
                "bin_low": bins.edges[:-1],
                "bin_high": bins.edges[1:],
                "mean_score": bins.mean_score,
                "positive_fraction": bins.positive_fraction,
                "count": bins.counts.astype(np.int64),
            }))
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path) -> Path:
        return write_frame(self.to_frame(), path)


def reliability_bins(scores, labels, bins: int = 10) -> ReliabilityBins:
    """Equal-width bins over [0, 1]; empty bins report NaN means."""
    if bins < 2:
        raise ValidatorError(f"bins must be >= 2, got {bins}.")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.floor(scores * bins).astype(np.int64), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_score = np.bincount(idx, weights=scores, minlength=bins) / counts
        positive_fraction = np.bincount(idx, weights=labels, minlength=bins) / counts
    return ReliabilityBins(edges, mean_score, positive_fraction, counts)


def reliability(model, features: DataTable, labels, bins: int = 10, holdout_features: DataTable | None = None,
                holdout_labels=None) -> ReliabilityCurve:
    """
    Reliability curve and score histogram of a scorer on train (and holdout) inputs.
    """
    train_bins = reliability_bins(model.score(features), labels, bins)
    holdout_bins = None
    if holdout_features is not None:
        holdout_bins = reliability_bins(model.score(holdout_features), holdout_labels, bins)
    return ReliabilityCurve(train_bins, holdout_bins)


def save_validator(model: ValidatorModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump(model, path)
    return path


def load_validator(path) -> ValidatorModel:
    model = joblib.load(path)
    if not isinstance(model, ValidatorModel):
        raise ValidatorError(f"{path} is not a validator model file.")
    return model
