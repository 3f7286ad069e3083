"""Outlier filtering, correlation filtering and federated min-max scaling.

The federated pieces are split into what a participant computes locally
(:func:`feature_summary`, :func:`local_minmax`) and what the coordinator does
with the reports (:func:`correlation_filter`, :func:`federated_minmax`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset
from .errors import ProtocolError

ZSCORE_LIMIT = 3.0
CORRELATION_TOL = 1e-12


def zscore_mask(X, limit: float = ZSCORE_LIMIT) -> np.ndarray:
    """Rows whose absolute z-score stays below ``limit`` in every feature.

    Statistics come from ``X`` itself (population std); zero-variance
    features never exclude a row.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    live = sigma > 0
    z = np.zeros_like(X)
    z[:, live] = (X[:, live] - mu[live]) / sigma[live]
    return np.all(np.abs(z) < limit, axis=1)


def zscore_outlier_filter(train, val, limit: float = ZSCORE_LIMIT):
    """Single-pass filter applied to each set with its own statistics."""

    def _apply(d):
        if isinstance(d, Dataset):
            return d.subset(np.flatnonzero(zscore_mask(d.features, limit)))
        d = np.asarray(d, dtype=np.float64)
        return d[zscore_mask(d, limit)]

    return _apply(train), _apply(val)


@dataclass
class FeatureSummary:
    """Mergeable count, mean and centred co-moment matrix of a sample."""

    n: int
    mean: np.ndarray
    comoment: np.ndarray

    def merge(self, other: "FeatureSummary") -> "FeatureSummary":
        if self.mean.shape != other.mean.shape:
            raise ProtocolError("summaries cover different feature counts")
        n = self.n + other.n
        if n == 0:
            return self
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        comoment = self.comoment + other.comoment + np.outer(delta, delta) * (self.n * other.n / n)
        return FeatureSummary(n, mean, comoment)


def feature_summary(X) -> FeatureSummary:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    centred = X - mean
    return FeatureSummary(X.shape[0], mean, centred.T @ centred)


def correlation_filter(data, absolute: bool = False, tol: float = CORRELATION_TOL) -> list[int]:
    """Indices of features kept after dropping constant and duplicated ones.

    ``data`` is a sample matrix, a :class:`FeatureSummary`, or a list of
    participant summaries.  For each pair with Pearson r == 1 (|r| == 1 when
    ``absolute``) the higher-indexed feature is dropped.
    """
    if isinstance(data, FeatureSummary):
        summary = data
    elif isinstance(data, (list, tuple)) and data and isinstance(data[0], FeatureSummary):
        summary = data[0]
        for s in data[1:]:
            summary = summary.merge(s)
    else:
        summary = feature_summary(data.features if isinstance(data, Dataset) else data)

    var = np.diag(summary.comoment).copy()
    scale = np.abs(summary.mean) + 1.0
    constant = var <= (1e-12 * scale) ** 2 * max(summary.n, 1)
    std = np.sqrt(np.where(constant, 1.0, var))
    r = summary.comoment / np.outer(std, std)
    if absolute:
        r = np.abs(r)

    d = var.size
    dropped = constant.copy()
    for j in range(d):
        if dropped[j]:
            continue
        for i in range(j):
            if not dropped[i] and r[i, j] >= 1.0 - tol:
                dropped[j] = True
                break
    return [int(i) for i in np.flatnonzero(~dropped)]


@dataclass
class FeaturePlan:
    """Global feature selection plus min-max ranges, fixed before round 1."""

    kept_indices: list
    min: np.ndarray
    max: np.ndarray
    n_raw: int | None = None

    def __post_init__(self):
        self.kept_indices = [int(i) for i in self.kept_indices]
        self.min = np.asarray(self.min, dtype=np.float64)
        self.max = np.asarray(self.max, dtype=np.float64)
        if not self.kept_indices:
            raise ProtocolError("feature plan keeps no features")
        if any(b <= a for a, b in zip(self.kept_indices, self.kept_indices[1:])):
            raise ProtocolError("kept indices must be strictly increasing")
        if self.min.shape != (len(self.kept_indices),) or self.max.shape != self.min.shape:
            raise ProtocolError("min/max length must match kept indices")
        if np.any(self.max < self.min):
            raise ProtocolError("max below min")

    @property
    def n_features(self) -> int:
        return len(self.kept_indices)

    def transform(self, X) -> np.ndarray:
        """Select kept features and min-max scale; no clipping."""
        X = np.asarray(X, dtype=np.float64)
        return (X[..., self.kept_indices] - self.min) / (self.max - self.min)

    def to_dict(self) -> dict:
        return {
            "kept_indices": self.kept_indices,
            "min": self.min.tolist(),
            "max": self.max.tolist(),
            "n_raw": self.n_raw,
        }


def local_minmax(X, kept_indices) -> tuple[np.ndarray, np.ndarray]:
    """A participant's min/max report over the kept raw features."""
    X = np.asarray(X, dtype=np.float64)[:, list(kept_indices)]
    return X.min(axis=0), X.max(axis=0)


def federated_minmax(mins, maxs, kept_indices=None) -> FeaturePlan:
    """Combine participant min/max reports into the global plan.

    ``mins``/``maxs`` are lists of equal-length vectors (one per participant)
    over ``kept_indices``; features whose global min equals the global max are
    dropped from the plan.
    """
    mins = [np.asarray(m, dtype=np.float64) for m in mins]
    maxs = [np.asarray(m, dtype=np.float64) for m in maxs]
    if not mins or len(mins) != len(maxs):
        raise ProtocolError("need one min and one max report per participant")
    width = mins[0].shape
    if any(m.shape != width for m in mins + maxs):
        raise ProtocolError("participant reports have different lengths")
    if kept_indices is None:
        kept_indices = list(range(width[0]))
    if len(kept_indices) != width[0]:
        raise ProtocolError("reports do not match kept indices")
    gmin = np.min(mins, axis=0)
    gmax = np.max(maxs, axis=0)
    live = gmax > gmin
    return FeaturePlan([k for k, ok in zip(kept_indices, live) if ok], gmin[live], gmax[live])


def scale(sample, plan: FeaturePlan) -> np.ndarray:
    """Min-max scale a raw feature vector (or matrix) with ``plan``."""
    if hasattr(sample, "features"):
        sample = sample.features
    return plan.transform(np.asarray(sample, dtype=np.float64))


class FederatedMinMaxScaler(TransformerMixin, BaseEstimator):
    """Min-max scaler whose ranges come from several participants.

    ``partial_fit`` is called once per participant with its local training
    data; ranges are the union of all reports.  Constant features are
    dropped, so ``transform`` may return fewer columns than it receives.

    >>> s = FederatedMinMaxScaler().partial_fit([[0, 1], [2, 1]]).partial_fit([[4, 1]])
    >>> s.transform([[2, 1]])
    array([[0.5]])
    """

    def __init__(self, kept_indices=None):
        self.kept_indices = kept_indices

    def partial_fit(self, X, y=None):
        X = check_array(X)
        kept = self.kept_indices if self.kept_indices is not None else list(range(X.shape[1]))
        lo, hi = local_minmax(X, kept)
        self.reports_ = getattr(self, "reports_", []) + [(lo, hi)]
        self.plan_ = federated_minmax([r[0] for r in self.reports_], [r[1] for r in self.reports_], kept)
        return self

    def fit(self, X, y=None):
        self.reports_ = []
        return self.partial_fit(X)

    def transform(self, X):
        check_is_fitted(self, "plan_")
        return self.plan_.transform(check_array(X))


class CorrelationFilter(TransformerMixin, BaseEstimator):
    """Drop constant features and perfect duplicates (Pearson r == 1)."""

    def __init__(self, absolute=False, tol=CORRELATION_TOL):
        self.absolute = absolute
        self.tol = tol

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        self.kept_indices_ = correlation_filter(X, self.absolute, self.tol)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "kept_indices_")
        return check_array(X)[:, self.kept_indices_]


@dataclass
class ScalingHandshake:
    """Messages exchanged while fixing the feature plan.

    Participants send a :class:`FeatureSummary` and, once the kept features
    are announced, their local min/max over those features.
    """

    summaries: dict = field(default_factory=dict)
    minmax: dict = field(default_factory=dict)
    kept_indices: list | None = None

    def report_summary(self, participant, X):
        self.summaries[participant] = feature_summary(X)

    def announce_features(self, absolute=False) -> list[int]:
        self.kept_indices = correlation_filter([self.summaries[k] for k in sorted(self.summaries)], absolute)
        return self.kept_indices

    def report_minmax(self, participant, X):
        if self.kept_indices is None:
            raise ProtocolError("kept features not announced yet")
        self.minmax[participant] = local_minmax(X, self.kept_indices)

    def finalize(self) -> FeaturePlan:
        keys = sorted(self.minmax)
        plan = federated_minmax([self.minmax[k][0] for k in keys], [self.minmax[k][1] for k in keys], self.kept_indices)
        plan.n_raw = len(self.summaries[keys[0]].mean) if self.summaries else None
        return plan
