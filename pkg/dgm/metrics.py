"""
metrics.py
Utility and privacy evaluation of a synthetic table against real data.

Module Purpose:
    - Utility: PCA eigenvalue/angle differences, average Hellinger distance,
      correlation matrix difference, ML efficacy (AUROC / accuracy diffs)
    - Privacy: epsilon-identifiability risk, normalized median DCR,
      distance-based membership inference precision/recall
    - evaluate_all: one MetricsReport per (train, synthetic, holdout) triple

Assumptions & Limitations:
    - The epsilon-identifiability risk compares, per real record, the
      entropy-weighted distance to the nearest synthetic record with the
      distance to the nearest other real record.
    - ML efficacy uses two classifiers (random forest, k-NN) and needs a
      binary categorical label column.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import yaml
from scipy.stats import entropy
from sklearn.decomposition import PCA
from sklearn.dummy import DummyClassifier
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import accuracy_score, roc_auc_score
from sklearn.model_selection import KFold
from sklearn.neighbors import KNeighborsClassifier, NearestNeighbors

from dgm.data_loader import atomic_write_text, write_frame
from dgm.tabular import DataTable, SeededRng, TableEncoder, mixed_correlation

logger = logging.getLogger("dgm.metrics")

EPS_RISK_THRESHOLD = 0.09
HELLINGER_BINS = 10
ENTROPY_FLOOR = 0.01
MIN_SYNTHETIC_ROWS = 2


class MetricsError(Exception):
    """Custom exception for evaluation errors."""
    pass


@dataclass(frozen=True)
class MetricsReport:
    pca_eigenvalue_diff: float
    pca_angle_diff: float
    hellinger_avg: float
    corr_diff_frobenius: float
    auroc_diff: float
    acc_diff_cv: float
    acc_diff_holdout: float
    eps_identifiability: float
    median_dcr_normalized: float
    mia_recall: float
    mia_precision: float
    eps_risk_acceptable: bool
    dcr_normalized: bool

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def unavailable(cls) -> "MetricsReport":
        """Report for a synthetic table too small to evaluate: every value NaN, both flags False."""
        values = {f.name: math.nan for f in fields(cls)}
        values.update(eps_risk_acceptable=False, dcr_normalized=False)
        return cls(**values)

    def to_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in asdict(self).items()}

    def to_yaml(self, path) -> Path:
        return atomic_write_text(path, yaml.safe_dump(self.to_dict(), sort_keys=False))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.to_dict()], columns=self.field_names())

    def to_csv(self, path) -> Path:
        return write_frame(self.to_frame(), path)


class DcrResult(NamedTuple):
    value: float
    normalized: bool


def _check_schemas(real: DataTable, synth: DataTable) -> None:
    if real.names != synth.names or [m.kind for m in real.schema] != [m.kind for m in synth.schema]:
        raise MetricsError(f"Schemas differ: {real.names} vs {synth.names}")


def _hellinger(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sqrt(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)) / np.sqrt(2.0))


def hellinger_avg(real: DataTable, synth: DataTable, bins: int = HELLINGER_BINS) -> float:
    """
    Mean per-column Hellinger distance between marginals.

    Categorical columns compare category frequencies; numerical columns
    compare histograms over ``bins`` equal-width bins spanning both tables.
    """
    _check_schemas(real, synth)
    distances = []
    for meta, x, y in zip(real.schema, real.columns, synth.columns):
        if meta.is_categorical:
            p = np.bincount(x, minlength=meta.cardinality) / max(len(x), 1)
            q = np.bincount(y, minlength=meta.cardinality) / max(len(y), 1)
        else:
            lo = min(x.min(), y.min())
            hi = max(x.max(), y.max())
            if lo == hi:
                distances.append(0.0)
                continue
            edges = np.linspace(lo, hi, bins + 1)
            p = np.histogram(x, bins=edges)[0] / len(x)
            q = np.histogram(y, bins=edges)[0] / len(y)
        distances.append(_hellinger(p, q))
    return float(np.clip(np.mean(distances), 0.0, 1.0))


def correlation_diff(real: DataTable, synth: DataTable) -> float:
    """Frobenius norm of the difference of the mixed correlation matrices."""
    _check_schemas(real, synth)
    return float(np.linalg.norm(mixed_correlation(real) - mixed_correlation(synth), ord="fro"))


def _principal_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between two axes (sign-free) in [0, pi/2]."""
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    if np.dot(u, v) < 0:
        v = -v
    return float(2.0 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


def pca_diffs(real: DataTable, synth: DataTable) -> tuple[float, float]:
    """
    PCA eigenvalue and first-axis angle differences.

    Both tables are encoded with the encoder fitted on real. The eigenvalue
    difference is the sum of absolute differences of the sorted covariance
    eigenvalues divided by the real eigenvalue sum; the angle difference is
    the angle (radians) between the first principal axes.

    Returns:
        tuple: (eigenvalue_diff, angle_diff)
    """
    _check_schemas(real, synth)
    encoder = TableEncoder().fit(real)
    d = encoder.dimension
    if d < 2:
        raise MetricsError(f"PCA differences need at least 2 encoded dimensions, got {d}.")
    if real.n < 2 or synth.n < 2:
        raise MetricsError("PCA differences need at least 2 rows in each table.")
    pca_real = PCA().fit(encoder.transform(real))
    pca_synth = PCA().fit(encoder.transform(synth))

    def spectrum(pca):
        values = np.zeros(d)
        values[: len(pca.explained_variance_)] = np.clip(pca.explained_variance_, 0.0, None)
        return values

    lam_real, lam_synth = spectrum(pca_real), spectrum(pca_synth)
    total = lam_real.sum()
    eigen_diff = float(np.abs(lam_real - lam_synth).sum() / total) if total > 0 else 0.0
    angle = _principal_angle(pca_real.components_[0], pca_synth.components_[0])
    return eigen_diff, angle


def _classifier(name: str, y: np.ndarray, seed: int):
    if len(np.unique(y)) < 2:
        return DummyClassifier(strategy="most_frequent")
    if name == "random_forest":
        return RandomForestClassifier(n_estimators=100, random_state=seed % (2**32), n_jobs=1)
    return KNeighborsClassifier(n_neighbors=min(5, len(y)))


def _positive_proba(clf, X: np.ndarray) -> np.ndarray:
    classes = list(clf.classes_)
    if 1 not in classes:
        return np.zeros(len(X))
    return clf.predict_proba(X)[:, classes.index(1)]


def _cv_accuracy(name: str, X: np.ndarray, y: np.ndarray, seed: int, folds: int) -> float:
    splitter = KFold(n_splits=min(folds, len(y)), shuffle=True, random_state=seed % (2**32))
    scores = []
    for train_idx, test_idx in splitter.split(X):
        clf = _classifier(name, y[train_idx], seed).fit(X[train_idx], y[train_idx])
        scores.append(accuracy_score(y[test_idx], clf.predict(X[test_idx])))
    return float(np.mean(scores))


def ml_efficacy(real_train: DataTable, synth: DataTable, holdout: DataTable, label_column: str,
                seed: int = 0, folds: int = 5) -> tuple[float, float, float]:
    """
    Downstream classification differences, synthetic minus real.

    A random forest and a k-NN classifier are trained once on real_train and
    once on synth; negative values mean the synthetic data is worse.

    Returns:
        tuple: (auroc_diff, acc_diff_cv, acc_diff_holdout)
    Raises:
        MetricsError: If the label column is not a binary categorical column
    """
    _check_schemas(real_train, synth)
    _check_schemas(real_train, holdout)
    meta = real_train.meta(label_column)
    if not meta.is_categorical or meta.cardinality != 2:
        raise MetricsError(f"Label column '{label_column}' must be categorical with exactly 2 categories.")
    feature_names = [name for name in real_train.names if name != label_column]
    if not feature_names:
        raise MetricsError("ML efficacy needs at least one feature column besides the label.")
    encoder = TableEncoder().fit(real_train.select_names(feature_names))
    X_real = encoder.transform(real_train.select_names(feature_names))
    X_synth = encoder.transform(synth.select_names(feature_names))
    X_hold = encoder.transform(holdout.select_names(feature_names))
    y_real, y_synth, y_hold = (t.column(label_column) for t in (real_train, synth, holdout))

    diffs = {"auroc": [], "cv": [], "holdout": []}
    for name in ("random_forest", "knn"):
        results = {}
        for source, X, y in (("real", X_real, y_real), ("synth", X_synth, y_synth)):
            clf = _classifier(name, y, seed).fit(X, y)
            proba = _positive_proba(clf, X_hold)
            auroc = float(roc_auc_score(y_hold, proba)) if len(np.unique(y_hold)) == 2 else 0.5
            results[source] = (auroc, _cv_accuracy(name, X, y, seed, folds),
                               float(accuracy_score(y_hold, clf.predict(X_hold))))
        diffs["auroc"].append(results["synth"][0] - results["real"][0])
        diffs["cv"].append(results["synth"][1] - results["real"][1])
        diffs["holdout"].append(results["synth"][2] - results["real"][2])
    return float(np.mean(diffs["auroc"])), float(np.mean(diffs["cv"])), float(np.mean(diffs["holdout"]))


def entropy_weights(table: DataTable, bins: int = HELLINGER_BINS) -> np.ndarray:
    """Per-column weight 1 / H_j, H_j the empirical entropy (nats) floored at 0.01."""
    weights = []
    for meta, col in zip(table.schema, table.columns):
        if meta.is_categorical:
            counts = np.bincount(col, minlength=meta.cardinality)
        else:
            counts = np.histogram(col, bins=bins)[0] if np.ptp(col) > 0 else np.array([len(col)])
        weights.append(1.0 / max(float(entropy(counts)), ENTROPY_FLOOR))
    return np.asarray(weights)


def _nearest(reference: np.ndarray, queries: np.ndarray, skip_self: bool = False) -> np.ndarray:
    k = 2 if skip_self else 1
    nn = NearestNeighbors(n_neighbors=k).fit(reference)
    distances, _ = nn.kneighbors(queries, n_neighbors=k)
    return distances[:, k - 1]


def eps_identifiability(real: DataTable, synth: DataTable) -> float:
    """
    Fraction of real records whose nearest synthetic record is strictly closer
    than their nearest other real record (entropy-weighted encoded distance).
    """
    _check_schemas(real, synth)
    if real.n < 2:
        raise MetricsError("eps_identifiability needs at least 2 real rows.")
    encoder = TableEncoder().fit(real)
    scale = entropy_weights(real)[encoder.source_columns]
    X_real = encoder.transform(real) * scale
    X_synth = encoder.transform(synth) * scale
    r = _nearest(X_real, X_real, skip_self=True)
    d = _nearest(X_synth, X_real)
    return float(np.mean(d < r))


def median_dcr(real: DataTable, synth: DataTable) -> DcrResult:
    """
    Median distance from synthetic rows to their closest real row, divided by
    the median nearest-neighbour distance within real. When that median is 0
    the unnormalized value is returned with ``normalized=False``.
    """
    _check_schemas(real, synth)
    encoder = TableEncoder().fit(real)
    X_real, X_synth = encoder.transform(real), encoder.transform(synth)
    dcr = float(np.median(_nearest(X_real, X_synth)))
    baseline = float(np.median(_nearest(X_real, X_real, skip_self=True))) if real.n >= 2 else 0.0
    if baseline == 0.0:
        logger.warning("Real nearest-neighbour median is 0; reporting unnormalized DCR")
        return DcrResult(dcr, False)
    return DcrResult(dcr / baseline, True)


def mia_attack(known_records: DataTable, membership_labels, synth: DataTable) -> tuple[float, float]:
    """
    Distance-threshold membership inference.

    The half of the known records closest to the synthetic rows (by rank,
    ties broken by position) is predicted to be training members. With
    distinct distances this is the same as thresholding at the median; with
    many zero distances it still predicts floor(n / 2) members.

    Returns:
        tuple: (recall, precision); 0 where undefined
    """
    _check_schemas(known_records, synth)
    labels = np.asarray(membership_labels, dtype=bool)
    if len(labels) != known_records.n:
        raise MetricsError(f"{known_records.n} known records but {len(labels)} membership labels.")
    encoder = TableEncoder().fit(known_records)
    distances = _nearest(encoder.transform(synth), encoder.transform(known_records))
    predicted = np.zeros(len(distances), dtype=bool)
    predicted[np.argsort(distances, kind="stable")[: len(distances) // 2]] = True
    tp = int(np.sum(predicted & labels))
    recall = tp / int(labels.sum()) if labels.any() else 0.0
    precision = tp / int(predicted.sum()) if predicted.any() else 0.0
    return float(recall), float(precision)


def evaluate_all(real_train: DataTable, synth: DataTable, holdout: DataTable, label: str | None = None,
                 seed: int = 0) -> MetricsReport:
    """
    Compute every utility and privacy metric.

    Args:
        real_train (DataTable): Data the generators were trained on
        synth (DataTable): Synthetic table with the same schema
        holdout (DataTable): Real rows never seen by the generators
        label (str or None): Binary outcome column; ML efficacy fields are NaN when None
        seed (int): Seed for the attack sample and classifiers
    Returns:
        MetricsReport: All metric values plus the 9% risk and DCR flags; all NaN when
        synth has fewer than MIN_SYNTHETIC_ROWS rows (a truncated join)
    """
    _check_schemas(real_train, synth)
    _check_schemas(real_train, holdout)
    if synth.n < MIN_SYNTHETIC_ROWS:
        logger.warning(f"Synthetic table has {synth.n} row(s); metrics reported as NaN")
        return MetricsReport.unavailable()
    eigen_diff, angle_diff = pca_diffs(real_train, synth)
    if label is None:
        logger.warning("No label column given; ML efficacy metrics reported as NaN")
        auroc_diff = acc_cv = acc_hold = math.nan
    else:
        auroc_diff, acc_cv, acc_hold = ml_efficacy(real_train, synth, holdout, label, seed=seed)
    eps = eps_identifiability(real_train, synth)
    dcr = median_dcr(real_train, synth)

    rng = SeededRng(seed, 3).generator()
    m = min(real_train.n, holdout.n)
    known = DataTable.vstack([
        real_train.take(np.sort(rng.choice(real_train.n, size=m, replace=False))),
        holdout.take(np.sort(rng.choice(holdout.n, size=m, replace=False))),
    ])
    membership = np.concatenate([np.ones(m, dtype=bool), np.zeros(m, dtype=bool)])
    recall, precision = mia_attack(known, membership, synth)

    return MetricsReport(
        pca_eigenvalue_diff=eigen_diff,
        pca_angle_diff=angle_diff,
        hellinger_avg=hellinger_avg(real_train, synth),
        corr_diff_frobenius=correlation_diff(real_train, synth),
        auroc_diff=auroc_diff,
        acc_diff_cv=acc_cv,
        acc_diff_holdout=acc_hold,
        eps_identifiability=eps,
        median_dcr_normalized=dcr.value,
        mia_recall=recall,
        mia_precision=precision,
        eps_risk_acceptable=eps <= EPS_RISK_THRESHOLD,
        dcr_normalized=dcr.normalized,
    )
