"""End-to-end training and inference on datasets of clouds."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classifier import (
    EnsembleModel,
    default_angles,
    fit_ensemble_features,
    fit_llsr,
    predict,
    predict_ensemble_features,
    rotated_features,
)
from .config import RunConfig
from .errors import InvalidState
from .geometry import PointCloud, normalize
from .io import FeatureSelection, ModelContainer, Preprocessing, subsample
from .ranking import rank_features
from .tree import _map, cloud_layout, fit_tree

log = logging.getLogger(__name__)


def cloud_seed(seed: int, index: int) -> int:
    """Independent per-cloud seed derived from the run seed and cloud position."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def prepare(cloud: PointCloud, pre: Preprocessing, index: int, size: Optional[int] = None) -> PointCloud:
    """Random subsample down to ``size`` (default ``input_points``), then normalize."""
    target = pre.input_points if size is None else size
    if len(cloud) > target:
        cloud = subsample(cloud, target, cloud_seed(pre.seed, index))
    return normalize(cloud) if pre.normalize else cloud


def prepare_all(clouds: Sequence[PointCloud], pre: Preprocessing, size: Optional[int] = None) -> list:
    return [prepare(c, pre, i, size) for i, c in enumerate(clouds)]


@dataclass
class FitReport:
    timings: dict = field(default_factory=dict)
    train_accuracy: float = float("nan")


def _timed(report: FitReport, name: str, start: float):
    report.timings[name] = time.perf_counter() - start
    log.info("%s took %.2fs", name, report.timings[name])


def selected_columns(model: ModelContainer) -> Optional[np.ndarray]:
    return None if model.selection is None else model.selection.columns


def fit_model(clouds: Sequence[PointCloud], labels, class_names: list, cfg: RunConfig,
              threads: int = 1, prepared: bool = False):
    """Fit tree, optional feature selection and classifier.

    Returns:
        (ModelContainer, FitReport, training feature matrix)
    """
    report = FitReport()
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = len(class_names)
    pre = Preprocessing(cfg.input_points, cfg.normalize, cfg.seed)
    tree_cfg = cfg.tree_config()
    clouds = list(clouds) if prepared else prepare_all(clouds, pre)

    t = time.perf_counter()
    layouts = _map(lambda c: cloud_layout(c, tree_cfg, cfg.seed), clouds, threads)
    _timed(report, "layout", t)
    t = time.perf_counter()
    tree = fit_tree(clouds, tree_cfg, cfg.seed, threads, layouts)
    _timed(report, "tree", t)
    t = time.perf_counter()
    compiled = tree._compiled()
    feats = np.vstack(_map(lambda lay: tree.transform_layout(lay, compiled), layouts, threads))
    del layouts
    _timed(report, "features", t)

    model = ModelContainer(tree, list(class_names), pre)
    columns = None
    if cfg.ranking != "none":
        t = time.perf_counter()
        ranking = rank_features(feats, labels, num_classes, tree.feature_energies(), cfg.num_bins, cfg.ce_variant)
        m = cfg.num_features or feats.shape[1]
        columns = ranking.select(cfg.ranking, min(m, feats.shape[1]))
        model.selection = FeatureSelection(cfg.ranking, columns, ranking)
        _timed(report, "ranking", t)

    t = time.perf_counter()
    if cfg.ensemble:
        angles = default_angles(cfg.ensemble_rotations)
        feature_sets = _rotated(tree, clouds, angles, cfg.rotation_axis, cfg.seed, threads, feats)
        model.classifier = fit_ensemble_features(
            feature_sets, labels, num_classes, angles, cfg.rotation_axis, columns, cfg.standardize, cfg.ridge
        )
        pred = predict_ensemble_features(model.classifier, feature_sets)
    else:
        x = feats if columns is None else feats[:, columns]
        model.classifier = fit_llsr(x, labels, num_classes, cfg.standardize, cfg.ridge)
        pred = predict(model.classifier, x)
    _timed(report, "classifier", t)
    report.train_accuracy = float((pred == labels).mean())
    return model, report, feats


def _rotated(tree, clouds, angles, axis, seed, threads, unrotated=None) -> list:
    out = []
    for a in angles:
        if a == 0 and unrotated is not None:
            out.append(unrotated)
        else:
            out.extend(rotated_features(tree, clouds, [a], axis, seed, threads))
    return out


def model_features(model: ModelContainer, clouds: Sequence[PointCloud], threads: int = 1,
                   prepared: bool = False) -> np.ndarray:
    """Full (unselected) feature matrix of clouds under a fitted model."""
    if not prepared:
        clouds = prepare_all(clouds, model.preprocessing)
    return model.tree.transform_many(clouds, seed=model.preprocessing.seed, threads=threads)


def predict_model(model: ModelContainer, clouds: Sequence[PointCloud], threads: int = 1,
                  prepared: bool = False) -> np.ndarray:
    if not prepared:
        clouds = prepare_all(clouds, model.preprocessing)
    clf = model.classifier
    if clf is None:
        raise InvalidState("model has no classifier")
    seed = model.preprocessing.seed
    if isinstance(clf, EnsembleModel):
        feature_sets = _rotated(model.tree, clouds, clf.angles, clf.axis, seed, threads)
        return predict_ensemble_features(clf, feature_sets)
    feats = model.tree.transform_many(clouds, seed=seed, threads=threads)
    cols = selected_columns(model)
    return predict(clf, feats if cols is None else feats[:, cols])
