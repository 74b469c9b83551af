"""Hand-crafted feature maps and mask-pooled ROI prototypes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, EmptyRoiError, SizeError, ValidationError
from .grid import area_resample, resample_mask
from .segment import normalize_intensity

CHANNEL_NAMES = (
    "mean", "std", "grad_row", "grad_col", "grad_mag",
    "grad_mag_s1", "grad_mag_s2", "grad_mag_s4", "coord_row", "coord_col",
)


@dataclass(frozen=True)
class FeatureConfig:
    factor: int = 4
    sigmas: tuple = (1.0, 2.0, 4.0)
    use_coords: bool = True

    def __post_init__(self):
        if self.factor < 1:
            raise ValidationError("downsampling factor must be >= 1")


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # (H', W', C)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[-1] < 1:
            raise DimensionError("feature map must have shape (H', W', C)")
        if not np.isfinite(d).all():
            raise ValidationError("feature map has non-finite values")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def dims(self):
        return self.data.shape[:-1]

    @property
    def channels(self):
        return self.data.shape[-1]


def extract_features(image, config: FeatureConfig = FeatureConfig()) -> FeatureMap:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"extract_features expects a 2D slice, got {img.ndim} axes")
    r = config.factor
    if min(img.shape) < r:
        raise SizeError(f"image {img.shape} is smaller than the downsampling factor {r}")
    out_dims = tuple(n // r for n in img.shape)
    img = normalize_intensity(img)

    def pool(x):
        return area_resample(x, out_dims)

    mean = pool(img)
    var = np.clip(pool(img * img) - mean * mean, 0.0, None)
    g_row, g_col = np.gradient(img) if min(img.shape) > 1 else (np.zeros_like(img),) * 2
    channels = [mean, np.sqrt(var), pool(g_row), pool(g_col), pool(np.hypot(g_row, g_col))]
    channels += [pool(ndimage.gaussian_gradient_magnitude(img, s, mode="nearest")) for s in config.sigmas]
    if config.use_coords:
        rows, cols = np.meshgrid(*[(np.arange(n) + 0.5) / n for n in out_dims], indexing="ij")
        channels += [rows, cols]
    return FeatureMap(np.stack(channels, axis=-1))


def standardize_features(fmap: FeatureMap) -> FeatureMap:
    """Z-score each channel over the feature grid; constant channels become 0.

    Raw channels are mostly nonnegative and scale together, so cosine
    similarity between raw prototypes sits near 1 for any two regions.
    Centring makes prototypes of different regions point apart.
    """
    d = fmap.data
    mu = d.mean(axis=(0, 1))
    sd = d.std(axis=(0, 1))
    live = sd > 1e-12
    return FeatureMap(np.where(live, (d - mu) / np.where(live, sd, 1.0), 0.0))


def compute_prototype(mask, fmap: FeatureMap) -> np.ndarray:
    """Mask-weighted mean of feature cells, after area-resampling the mask
    onto the feature grid."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError("mask must be 2D")
    weights = np.asarray(resample_mask(m, fmap.dims))
    total = weights.sum()
    if not total > 0:
        raise EmptyRoiError("mask has no mass on the feature grid")
    return np.tensordot(weights, fmap.data, axes=([0, 1], [0, 1])) / total


def compute_prototypes(masks, fmap: FeatureMap) -> np.ndarray:
    if len(masks) == 0:
        return np.zeros((0, fmap.channels))
    return np.stack([compute_prototype(m, fmap) for m in masks])
