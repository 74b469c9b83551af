"""Candidate ROI generation: a built-in "segment everything" stand-in, the
area/overlap outlier filter, and class-posterior fusion for the case where
both images are segmented into the same label classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Protocol

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ValidationError

# 4-connectivity in 2D
_CROSS = ndimage.generate_binary_structure(2, 1)


class Segmenter(Protocol):
    def __call__(self, image: np.ndarray) -> List[np.ndarray]: ...


@dataclass(frozen=True)
class SegmenterConfig:
    n_thresholds: int = 8
    q_low: float = 0.1
    q_high: float = 0.9

    def __post_init__(self):
        if self.n_thresholds < 1:
            raise ValidationError("n_thresholds must be >= 1")
        if not 0.0 <= self.q_low <= self.q_high <= 1.0:
            raise ValidationError("need 0 <= q_low <= q_high <= 1")

    @property
    def quantiles(self):
        return np.linspace(self.q_low, self.q_high, self.n_thresholds)


@dataclass(frozen=True)
class RoiFilterConfig:
    min_area: int = 200
    max_area: int = 7000
    max_overlap_ratio: float = 0.8

    def __post_init__(self):
        if not 0 < self.min_area <= self.max_area:
            raise ValidationError("need 0 < min_area <= max_area")
        if not 0.0 <= self.max_overlap_ratio <= 1.0:
            raise ValidationError("max_overlap_ratio must lie in [0, 1]")


def normalize_intensity(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def segment_everything(image, config: SegmenterConfig = SegmenterConfig()) -> List[np.ndarray]:
    """Quantile-threshold the normalized image and emit every 4-connected
    component of ``image > threshold`` as a boolean mask.

    Ordering is (threshold index, raster discovery order of the component).
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise DimensionError(f"segment_everything expects a 2D slice, got {img.ndim} axes")
    norm = normalize_intensity(img)
    masks = []
    for t in np.quantile(norm, config.quantiles):
        labels, n = ndimage.label(norm > t, structure=_CROSS)
        masks.extend(labels == k for k in range(1, n + 1))
    return masks


class QuantileSegmenter:
    def __init__(self, config: SegmenterConfig = SegmenterConfig()):
        self.config = config

    def __call__(self, image):
        return segment_everything(image, self.config)


def overlap_ratio(a, b) -> float:
    """|A & B| / min(|A|, |B|); zero when either mask is empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    small = min(a.sum(), b.sum())
    if small == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / small)


def filter_rois(candidates, cfg: RoiFilterConfig = RoiFilterConfig()) -> List[np.ndarray]:
    sized = []
    for m in candidates:
        m = np.asarray(m, dtype=bool)
        if cfg.min_area <= m.sum() <= cfg.max_area:
            sized.append(m)
    kept = []
    for m in sized:
        if all(overlap_ratio(m, k) <= cfg.max_overlap_ratio for k in kept):
            kept.append(m)
    return kept


def candidate_rois(image, segmenter: Callable | None = None,
                   filter_cfg: RoiFilterConfig = RoiFilterConfig()) -> List[np.ndarray]:
    segmenter = segmenter or QuantileSegmenter()
    masks = segmenter(np.asarray(image))
    for m in masks:
        if np.shape(m) != np.shape(image):
            raise DimensionError("segmenter returned a mask with the wrong dims")
    return filter_rois(masks, filter_cfg)


@dataclass(frozen=True)
class PosteriorGrid:
    """Per-voxel class probabilities, stored with classes on the last axis."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim < 2 or p.shape[-1] < 1:
            raise DimensionError("probs must have shape (*dims, K)")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ValidationError("probabilities must be finite and non-negative")
        if not np.allclose(p.sum(axis=-1), 1.0, atol=1e-6, rtol=0):
            raise ValidationError("per-voxel probabilities must sum to 1")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def dims(self):
        return self.probs.shape[:-1]

    @property
    def n_classes(self):
        return self.probs.shape[-1]


def fuse_posteriors(px: PosteriorGrid, py: PosteriorGrid) -> PosteriorGrid:
    """Voxel-wise product of two class posteriors, renormalized.

    Voxels where the product vanishes get the uniform distribution.
    """
    if px.probs.shape != py.probs.shape:
        raise DimensionError(f"posterior shapes differ: {px.probs.shape} vs {py.probs.shape}")
    prod = px.probs * py.probs
    total = prod.sum(axis=-1, keepdims=True)
    k = px.n_classes
    safe = np.where(total > 0, total, 1.0)
    fused = np.where(total > 0, prod / safe, 1.0 / k)
    return PosteriorGrid(fused)


def posteriors_to_pairs(px: PosteriorGrid, py: PosteriorGrid):
    """Argmax-label both grids and pair class k in one with class k in the other."""
    from .match import MatchConfig, RoiPair, RoiPairSet

    if px.n_classes != py.n_classes:
        raise DimensionError("posteriors have different class counts")
    lx = px.probs.argmax(axis=-1)
    ly = py.probs.argmax(axis=-1)
    pairs = []
    for k in range(px.n_classes):
        mx, my = lx == k, ly == k
        if mx.any() and my.any():
            pairs.append(RoiPair(k, k, 1.0, mx, my))
    return RoiPairSet(pairs, MatchConfig())
