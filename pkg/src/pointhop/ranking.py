"""Cross-entropy and energy ranking of scalar leaf features."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInput

EPS = 1e-12
MAX_ITER = 300
MODES = ("cross_entropy", "energy")


def partition_1d(values, num_bins: int, seed: Optional[int] = None):
    """Deterministic 1-D k-means.

    Centroids start at the ``num_bins`` quantile midpoints, i.e. the
    ``(j + 0.5) / J`` quantiles. Lloyd iterations run until the assignment is
    stable; clusters that empty out are dropped. ``seed`` is accepted for API
    symmetry and ignored since initialization is not random.

    Returns:
        (assignment, centroids): cluster index per value, with clusters
        numbered by ascending centroid.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInput("partition_1d needs a non-empty 1-D column")
    if num_bins < 2:
        raise InvalidInput("num_bins must be >= 2")
    if x.size < num_bins:
        raise InvalidInput(f"need at least {num_bins} samples, got {x.size}")
    distinct = np.unique(x)
    if distinct.size < num_bins:
        warnings.warn(f"only {distinct.size} distinct values; using {distinct.size} intervals")
        num_bins = distinct.size
    if num_bins == 1:
        return np.zeros(x.size, dtype=np.int64), distinct.copy()

    centroids = np.unique(np.quantile(x, (np.arange(num_bins) + 0.5) / num_bins))
    assign = None
    for _ in range(MAX_ITER):
        bounds = 0.5 * (centroids[:-1] + centroids[1:])
        new = np.searchsorted(bounds, x, side="left")
        counts = np.bincount(new, minlength=centroids.size)
        keep = counts > 0
        sums = np.bincount(new, weights=x, minlength=centroids.size)
        stable = assign is not None and keep.all() and np.array_equal(new, assign)
        if stable:
            break
        centroids = sums[keep] / counts[keep]
        if keep.all():
            assign = new
        else:
            # Renumber before the next pass; forces at least one more iteration.
            assign = None
    else:
        bounds = 0.5 * (centroids[:-1] + centroids[1:])
        assign = np.searchsorted(bounds, x, side="left")
    return assign, centroids


def _bin_class_counts(assign: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    bins = assign.max() + 1
    return np.bincount(assign * num_classes + labels, minlength=bins * num_classes).reshape(bins, num_classes)


def cross_entropy_score(
    values, labels, num_classes: int, num_bins: int = 32, variant: str = "label"
) -> float:
    """Per-sample cross entropy of a feature's 1-D bins; lower is more discriminant.

    Each sample contributes ``-log(p + eps)`` where p is the fraction of its
    own class in its bin (``variant="label"``). With ``variant="majority"``
    every bin predicts its majority class and a sample contributes
    ``-log(p_major)`` if that prediction is right, ``-log(1 - p_major)``
    otherwise.
    """
    x = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.size == 0:
        raise InvalidInput("cannot score an empty column")
    if y.shape != x.shape:
        raise InvalidInput("values and labels must have the same length")
    if y.min() < 0 or y.max() >= num_classes:
        raise InvalidInput(f"labels must lie in [0, {num_classes})")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assign, _ = partition_1d(x, min(num_bins, x.size))
    counts = _bin_class_counts(assign, y, num_classes)
    sizes = counts.sum(axis=1, keepdims=True)
    prob = counts / sizes
    if variant == "label":
        loss = -(counts * np.log(prob + EPS)).sum()
    elif variant == "majority":
        major = counts.argmax(axis=1)
        p_major = prob[np.arange(prob.shape[0]), major]
        right = counts[np.arange(counts.shape[0]), major]
        wrong = sizes[:, 0] - right
        loss = -(right * np.log(p_major + EPS)).sum() - (wrong * np.log(1.0 - p_major + EPS)).sum()
    else:
        raise InvalidInput(f"unknown cross-entropy variant {variant!r}")
    return float(loss / x.size)


@dataclass
class RankedFeatureSet:
    cross_entropy: np.ndarray
    energy: np.ndarray

    @property
    def order_ce(self) -> np.ndarray:
        """Columns by ascending cross entropy; ties keep column order."""
        return np.argsort(self.cross_entropy, kind="stable")

    @property
    def order_energy(self) -> np.ndarray:
        """Columns by descending energy; ties keep column order."""
        return np.argsort(-self.energy, kind="stable")

    def order(self, mode: str) -> np.ndarray:
        if mode == "cross_entropy":
            return self.order_ce
        if mode == "energy":
            return self.order_energy
        raise InvalidInput(f"unknown ranking mode {mode!r}")

    def select(self, mode: str, m: int) -> np.ndarray:
        order = self.order(mode)
        if not 0 < m <= order.size:
            raise InvalidInput(f"cannot select {m} of {order.size} features")
        return order[:m]

    def ranks(self, mode: str) -> np.ndarray:
        """1-based rank of each column under ``mode``."""
        out = np.empty(self.energy.size, dtype=np.int64)
        out[self.order(mode)] = np.arange(1, out.size + 1)
        return out


def score_columns(features, labels, num_classes: int, num_bins: int = 32, variant: str = "label") -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    return np.array(
        [cross_entropy_score(features[:, j], labels, num_classes, num_bins, variant) for j in range(features.shape[1])]
    )


def rank_features(features, labels, num_classes: int, energies, num_bins: int = 32,
                  variant: str = "label") -> RankedFeatureSet:
    energies = np.asarray(energies, dtype=np.float64)
    if energies.shape != (np.shape(features)[1],):
        raise InvalidInput("need one energy per feature column")
    return RankedFeatureSet(score_columns(features, labels, num_classes, num_bins, variant), energies)


def rank_and_select(features, labels, mode: str, m: int, num_classes: Optional[int] = None,
                    energies=None, num_bins: int = 32) -> np.ndarray:
    """Indices of the top-``m`` columns under cross-entropy or energy ranking."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_cols = features.shape[1]
    if not 0 < m <= n_cols:
        raise InvalidInput(f"cannot select {m} of {n_cols} features")
    if mode == "energy":
        if energies is None:
            raise InvalidInput("energy ranking needs per-column energies")
        return RankedFeatureSet(np.zeros(n_cols), np.asarray(energies, dtype=np.float64)).select(mode, m)
    if mode == "cross_entropy":
        num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
        scores = score_columns(features, labels, num_classes, num_bins)
        return RankedFeatureSet(scores, np.zeros(n_cols)).select(mode, m)
    raise InvalidInput(f"unknown ranking mode {mode!r}")
