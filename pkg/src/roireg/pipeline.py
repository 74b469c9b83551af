"""Segment, embed and match two 2D images."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .embed import FeatureConfig, FeatureMap, compute_prototypes, extract_features, standardize_features
from .errors import DimensionError
from .match import MatchConfig, RoiPairSet, match_rois
from .segment import QuantileSegmenter, RoiFilterConfig, SegmenterConfig, candidate_rois


@dataclass(frozen=True)
class PipelineConfig:
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    filter: RoiFilterConfig = field(default_factory=RoiFilterConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    # z-score feature channels per image before pooling prototypes
    standardize: bool = True


@dataclass
class SliceCandidates:
    masks: List[np.ndarray]
    prototypes: np.ndarray  # (K, C)
    fmap: Optional[FeatureMap] = None


def embed_candidates(image, masks, features: FeatureConfig = FeatureConfig(),
                     standardize: bool = True) -> SliceCandidates:
    fmap = extract_features(image, features)
    if standardize:
        fmap = standardize_features(fmap)
    return SliceCandidates(list(masks), compute_prototypes(masks, fmap), fmap)


def prepare_slice(image, cfg: PipelineConfig = PipelineConfig(),
                  segmenter: Callable | None = None) -> SliceCandidates:
    segmenter = segmenter or QuantileSegmenter(cfg.segmenter)
    masks = candidate_rois(image, segmenter, cfg.filter)
    return embed_candidates(image, masks, cfg.features, cfg.standardize)


def register_images(moving, fixed, cfg: PipelineConfig = PipelineConfig(),
                    segmenter: Callable | None = None):
    """Return (RoiPairSet, moving candidates, fixed candidates) for two 2D images."""
    moving = np.asarray(moving, dtype=np.float64)
    fixed = np.asarray(fixed, dtype=np.float64)
    if moving.ndim != 2 or fixed.ndim != 2:
        raise DimensionError("register_images expects two 2D images")
    cx = prepare_slice(moving, cfg, segmenter)
    cy = prepare_slice(fixed, cfg, segmenter)
    pairs: RoiPairSet = match_rois(cx.masks, cx.prototypes, cy.masks, cy.prototypes, cfg.match)
    return pairs, cx, cy
