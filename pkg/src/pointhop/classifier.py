"""Least-squares classifiers, the rotation ensemble and accuracy metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInput
from .geometry import rotate

DEFAULT_RIDGE = 1e-6


@dataclass
class LLSRModel:
    """Affine map from (standardized) features to class scores.

    ``weights`` is (F + 1, M); its last row multiplies a constant 1.
    """

    weights: np.ndarray
    num_classes: int
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    ridge: float = DEFAULT_RIDGE

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0] - 1

    def design(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise InvalidInput(f"expected {self.feature_dim} features per row, got shape {x.shape}")
        if self.mean is not None:
            x = (x - self.mean) / self.std
        return np.hstack([x, np.ones((x.shape[0], 1))])


def one_hot(labels, num_classes: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise InvalidInput(f"labels must lie in [0, {num_classes})")
    out = np.zeros((y.size, num_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def fit_llsr(features, labels, num_classes: int, standardize: bool = True,
             ridge: float = DEFAULT_RIDGE) -> LLSRModel:
    """Ridge-stabilized least squares onto one-hot targets.

    Solves ``min |X W - Y|^2 + ridge |W|^2`` over the bias-augmented design.
    When there are more columns than samples the equivalent dual system
    ``W = X^T (X X^T + ridge I)^-1 Y`` is solved instead.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInput("features must be an (S, F) matrix")
    y = one_hot(labels, num_classes)
    if y.shape[0] != x.shape[0]:
        raise InvalidInput("need one label per feature row")
    if np.unique(labels).size < 2:
        warnings.warn("all training labels belong to one class; the model is a constant predictor")
    mean = std = None
    if standardize:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std[std == 0] = 1.0
    model = LLSRModel(np.zeros((x.shape[1] + 1, num_classes)), num_classes, mean, std, ridge)
    a = model.design(x)
    s, f = a.shape
    if f <= s:
        model.weights = np.linalg.solve(a.T @ a + ridge * np.eye(f), a.T @ y)
    else:
        model.weights = a.T @ np.linalg.solve(a @ a.T + ridge * np.eye(s), y)
    return model


def objective(model: LLSRModel, features, labels) -> float:
    """The regularized least-squares objective the fit minimizes."""
    a = model.design(features)
    r = a @ model.weights - one_hot(labels, model.num_classes)
    return float((r * r).sum() + model.ridge * (model.weights * model.weights).sum())


def predict_scores(model: LLSRModel, features) -> np.ndarray:
    return model.design(features) @ model.weights


def predict(model: LLSRModel, features) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return predict_scores(model, features).argmax(axis=1)


# ---------------------------------------------------------------------------
# Rotation ensemble


def default_angles(count: int = 8) -> np.ndarray:
    return np.arange(count) * (2 * np.pi / count)


@dataclass
class EnsembleModel:
    angles: np.ndarray
    stage1: list
    stage2: LLSRModel
    axis: str = "z"
    columns: Optional[np.ndarray] = None

    @property
    def num_classes(self) -> int:
        return self.stage2.num_classes


def rotated_features(tree, clouds: Sequence, angles, axis: str = "z", seed: int = 0, threads: int = 1) -> list:
    """One feature matrix per rotation angle, all through the same tree."""
    return [
        tree.transform_many([rotate(c, a, axis) for c in clouds], seed=seed, threads=threads)
        for a in angles
    ]


def _stack_scores(models: list, feature_sets: list, columns) -> np.ndarray:
    return np.hstack([
        predict_scores(m, f if columns is None else f[:, columns]) for m, f in zip(models, feature_sets)
    ])


def fit_ensemble_features(feature_sets: list, labels, num_classes: int, angles, axis: str = "z",
                          columns=None, standardize: bool = True, ridge: float = DEFAULT_RIDGE) -> EnsembleModel:
    """Two-stage ensemble from per-rotation feature matrices."""
    if len(feature_sets) != len(angles):
        raise InvalidInput("need one feature matrix per rotation angle")
    stage1 = [
        fit_llsr(f if columns is None else f[:, columns], labels, num_classes, standardize, ridge)
        for f in feature_sets
    ]
    stage2 = fit_llsr(_stack_scores(stage1, feature_sets, columns), labels, num_classes, standardize, ridge)
    cols = None if columns is None else np.asarray(columns, dtype=np.int64)
    return EnsembleModel(np.asarray(angles, dtype=np.float64), stage1, stage2, axis, cols)


def predict_ensemble_features(model: EnsembleModel, feature_sets: list) -> np.ndarray:
    return predict(model.stage2, _stack_scores(model.stage1, feature_sets, model.columns))


def fit_ensemble(tree, clouds, labels, num_classes: int, angles=None, axis: str = "z", columns=None,
                 standardize: bool = True, ridge: float = DEFAULT_RIDGE, seed: int = 0,
                 threads: int = 1) -> EnsembleModel:
    angles = default_angles() if angles is None else np.asarray(angles, dtype=np.float64)
    feats = rotated_features(tree, clouds, angles, axis, seed, threads)
    return fit_ensemble_features(feats, labels, num_classes, angles, axis, columns, standardize, ridge)


def predict_ensemble(model: EnsembleModel, tree, clouds, seed: int = 0, threads: int = 1) -> np.ndarray:
    feats = rotated_features(tree, clouds, model.angles, model.axis, seed, threads)
    return predict_ensemble_features(model, feats)


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class Evaluation:
    overall_accuracy: float
    class_avg_accuracy: float
    confusion: np.ndarray = field(repr=False)


def evaluate(predictions, labels, num_classes: int) -> Evaluation:
    """Overall accuracy, mean per-class recall (absent classes skipped) and
    the confusion matrix with true classes on rows."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise InvalidInput("predictions and labels must have the same length")
    confusion = np.bincount(true * num_classes + pred, minlength=num_classes * num_classes)
    confusion = confusion.reshape(num_classes, num_classes)
    total = confusion.sum()
    overall = float(np.trace(confusion) / total) if total else 0.0
    support = confusion.sum(axis=1)
    present = support > 0
    recalls = np.diag(confusion)[present] / support[present]
    class_avg = float(recalls.mean()) if recalls.size else 0.0
    return Evaluation(overall, class_avg, confusion)
