"""Permutation-invariant hashed sketches, kernel images and training-free
kNN scoring for multivariate windows whose set of variables changes."""

from .benchgen import ANOMALY_TYPES, GenConfig, LabeledDataset, build_dataset, inject_anomaly, make_window
from .detector import (
    ProjectionSpec,
    ReferenceIndex,
    StatsPoolKNN,
    fit_reference,
    make_projection,
    robust_standardize,
    score_batch,
    score_knn,
    stats_pool,
)
from .errors import ConfigError, GenerationError
from .kernelrep import (
    TABLE1_VARIANTS,
    Representation,
    RepVariant,
    anchor_features,
    band_features,
    batch_features,
    build_representation,
    complexity_proxy,
    cos_kernel,
    feature_dim,
    logdist_kernel,
    parse_variant,
    robust_bandwidth,
    scale_token,
)
from .metrics import auprc, auroc, tpr_at_fpr
from .sketch import HashConfig, HashedSequence, Window, build_hashed_sequence, collision_fraction

__version__ = "0.1.0"
