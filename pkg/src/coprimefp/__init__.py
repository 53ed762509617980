"""Cancelable fingerprint templates built from sector ridge features.

Pipeline: minutiae + thinned skeleton (:mod:`fpdata`) -> per-sector nearest
neighbours (:mod:`sectoring`) -> ridge count / mean crossing angle features
(:mod:`ridgefeat`) -> key-driven coprime mapping into a filler matrix
(:mod:`coprime`) -> matching (:mod:`matcher`) and evaluation (:mod:`evalkit`).
:mod:`synthgen` produces ring scenes with known ground truth.
"""

from .coprime import (
    KeySet,
    ProtectedTemplate,
    extract_features,
    generate_template,
    load_template,
    position_cycle,
    save_template,
)
from .fpdata import MinutiaeRecord, Minutia, SkeletonImage, load_dataset
from .matcher import MatchParams, MatchResult, global_match, match_raw
from .ridgefeat import FeatureMatrix, build_feature_matrix
from .sectoring import SectorConfig

__version__ = "0.1.0"

__all__ = [
    "FeatureMatrix",
    "KeySet",
    "MatchParams",
    "MatchResult",
    "Minutia",
    "MinutiaeRecord",
    "ProtectedTemplate",
    "SectorConfig",
    "SkeletonImage",
    "build_feature_matrix",
    "extract_features",
    "generate_template",
    "global_match",
    "load_dataset",
    "load_template",
    "match_raw",
    "position_cycle",
    "save_template",
]
