"""Point-cloud classification with octant pooling, channel-wise Saab trees,
cross-entropy feature ranking and least-squares classifiers."""

from .classifier import (
    EnsembleModel,
    Evaluation,
    LLSRModel,
    evaluate,
    fit_ensemble,
    fit_llsr,
    predict,
    predict_ensemble,
)
from .errors import CorruptModel, InsufficientData, InvalidInput, InvalidState, PointHopError
from .geometry import PointCloud, farthest_point_sample, knn, normalize, octant_partition, rotate
from .io import ModelContainer, load_model, load_xyz_dir, save_model
from .ranking import RankedFeatureSet, cross_entropy_score, partition_1d, rank_and_select, rank_features
from .saab import MomentAccumulator, SaabFilterBank, apply_saab, channel_energies, fit_saab
from .tree import FeatureTree, GlobalFeature, TreeConfig, TreeNode, fit_tree

__version__ = "0.1.0"

__all__ = [
    "CorruptModel",
    "EnsembleModel",
    "Evaluation",
    "FeatureTree",
    "GlobalFeature",
    "InsufficientData",
    "InvalidInput",
    "InvalidState",
    "LLSRModel",
    "ModelContainer",
    "MomentAccumulator",
    "PointCloud",
    "PointHopError",
    "RankedFeatureSet",
    "SaabFilterBank",
    "TreeConfig",
    "TreeNode",
    "apply_saab",
    "channel_energies",
    "cross_entropy_score",
    "evaluate",
    "farthest_point_sample",
    "fit_ensemble",
    "fit_llsr",
    "fit_saab",
    "fit_tree",
    "knn",
    "load_model",
    "load_xyz_dir",
    "normalize",
    "octant_partition",
    "partition_1d",
    "predict",
    "predict_ensemble",
    "rank_and_select",
    "rank_features",
    "rotate",
    "save_model",
]
