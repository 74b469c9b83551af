"""Grid types, area resampling, multilinear warping and overlap metrics.

Axes are ordered (slice, row, col) everywhere and storage is row-major.
Displacement vectors are stored component-first: ``vectors[a]`` holds the
displacement along axis ``a`` in voxel units.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, EmptyRoiError, ValidationError

DICE_SMOOTH = 1e-7


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridImage:
    data: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim not in (2, 3):
            raise DimensionError(f"GridImage needs 2 or 3 axes, got {data.ndim}")
        if min(data.shape) < 1:
            raise DimensionError(f"empty extent {data.shape}")
        spacing = (1.0,) * data.ndim if self.spacing is None else tuple(float(s) for s in self.spacing)
        if len(spacing) != data.ndim:
            raise DimensionError("spacing length does not match axis count")
        if not all(s > 0 for s in spacing):
            raise ValidationError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != bool:
            if not np.isin(data, (0, 1)).all():
                raise ValidationError("binary mask values must be 0 or 1")
            data = data.astype(bool)
        if data.ndim < 1 or min(data.shape) < 1:
            raise DimensionError(f"bad mask extent {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return self.data.shape

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True)
class SoftMask:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if not np.isfinite(data).all() or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise ValidationError("soft mask values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True)
class DisplacementField:
    vectors: np.ndarray
    provenance: str = "fitted"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim < 2 or v.shape[0] != v.ndim - 1:
            raise DimensionError(f"vectors must have shape (ndim, *dims), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError("displacement field contains non-finite values")
        object.__setattr__(self, "vectors", _frozen(v))

    @property
    def dims(self):
        return self.vectors.shape[1:]

    @property
    def ndim(self):
        return self.vectors.shape[0]

    @classmethod
    def zeros(cls, dims, provenance="identity"):
        dims = tuple(int(d) for d in dims)
        return cls(np.zeros((len(dims),) + dims), provenance)


def _array(x, dtype=np.float64):
    if isinstance(x, DisplacementField):
        return x.vectors
    return np.asarray(x, dtype=dtype)


def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Fraction of output cell i covered by input cell j, both spanning [0, n_in)."""
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    return np.clip(hi - lo, 0.0, None) / (n_in / n_out)


def area_resample(array, target_dims) -> np.ndarray:
    """Separable area-weighted averaging of ``array`` onto ``target_dims``.

    Leading axes beyond ``len(target_dims)`` are not supported; trailing
    axes (e.g. channels) are carried through untouched.
    """
    out = np.asarray(array, dtype=np.float64)
    for axis, n_out in enumerate(target_dims):
        n_in = out.shape[axis]
        if n_in == n_out:
            continue
        w = _overlap_matrix(n_in, int(n_out))
        out = np.moveaxis(np.tensordot(w, out, axes=([1], [axis])), 0, axis)
    return out


def resample_mask(mask, target_dims) -> SoftMask:
    data = _array(mask)
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != data.ndim:
        raise DimensionError(f"cannot resample {data.ndim}-axis mask to {target_dims}")
    if min(target_dims) < 1:
        raise DimensionError(f"bad target extent {target_dims}")
    return SoftMask(np.clip(area_resample(data, target_dims), 0.0, 1.0))


def _product(weights, bits, skip=None):
    w = 1.0
    for a, b in enumerate(bits):
        if a != skip:
            w = w * weights[a][b]
    return w


def _sample(stack, coords, want_grad=False):
    """Multilinear sampling with zero padding.

    ``stack`` has shape (K, *dims); ``coords`` has shape (ndim, *dims_out).
    Returns values of shape (K, *dims_out) and, if requested, the partial
    derivatives with respect to each coordinate, shape (ndim, K, *dims_out).
    At exact lattice coordinates the derivative is the central slope.
    """
    ndim = coords.shape[0]
    dims = stack.shape[1:]
    flat = stack.reshape(stack.shape[0], -1)
    base = np.floor(coords)
    frac = coords - base
    base = base.astype(np.int64)

    def gather(offsets):
        idx = [base[a] + offsets[a] for a in range(ndim)]
        valid = np.ones(coords.shape[1:], dtype=bool)
        for a in range(ndim):
            valid &= (idx[a] >= 0) & (idx[a] < dims[a])
        lin = np.ravel_multi_index([np.clip(idx[a], 0, dims[a] - 1) for a in range(ndim)], dims)
        return np.where(valid, flat[:, lin], 0.0)

    corners = {bits: gather(bits) for bits in itertools.product((0, 1), repeat=ndim)}
    weights = [(1.0 - frac[a], frac[a]) for a in range(ndim)]

    values = 0.0
    for bits, v in corners.items():
        values = values + _product(weights, bits) * v
    if not want_grad:
        return values, None

    grads = []
    for a in range(ndim):
        others = [
            (bits, _product(weights, bits, skip=a)) for bits in corners if not bits[a]
        ]
        g = 0.0
        for bits, w in others:
            up = bits[:a] + (1,) + bits[a + 1:]
            g = g + w * (corners[up] - corners[bits])
        kink = frac[a] == 0.0
        if kink.any():
            left = 0.0
            for bits, w in others:
                below = bits[:a] + (-1,) + bits[a + 1:]
                left = left + w * (corners[bits] - gather(below))
            g = np.where(kink, 0.5 * (g + left), g)
        grads.append(g)
    return values, np.stack(grads)


def identity_coords(dims) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"))


def warp_array(source, vectors, want_grad=False):
    """Pull-back warp of one array or a stack (K, *dims) by ``vectors``.

    Returns (warped, grad) where grad is None unless ``want_grad``.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    dims = vectors.shape[1:]
    src = np.asarray(source, dtype=np.float64)
    single = src.shape == dims
    stack = src[None] if single else src
    if stack.shape[1:] != dims:
        raise DimensionError(f"source dims {src.shape} do not match field dims {dims}")
    vals, grad = _sample(stack, identity_coords(dims) + vectors, want_grad)
    if single:
        vals = vals[0]
        grad = None if grad is None else grad[:, 0]
    return vals, grad


def warp(source, ddf: DisplacementField):
    """Evaluate ``source`` at ``x + d(x)``; outside samples read as zero."""
    if not isinstance(ddf, DisplacementField):
        ddf = DisplacementField(ddf)
    data = _array(source)
    if data.shape != tuple(ddf.dims):
        raise DimensionError(f"source dims {data.shape} do not match field dims {ddf.dims}")
    out, _ = warp_array(data, ddf.vectors)
    if isinstance(source, (SoftMask, BinaryMask)):
        # binary masks are lifted to soft masks by the interpolation
        return SoftMask(np.clip(out, 0.0, 1.0))
    if isinstance(source, GridImage):
        return GridImage(out, source.spacing)
    return out


def mass(mask) -> float:
    return float(_array(mask).sum())


def centroid(mask) -> np.ndarray:
    data = _array(mask)
    total = data.sum()
    if not total > 0:
        raise EmptyRoiError("centroid of an empty mask")
    return np.array(
        [(data.sum(axis=tuple(b for b in range(data.ndim) if b != a)) * np.arange(n)).sum() / total
         for a, n in enumerate(data.shape)]
    )


def dice(a, b, smooth=DICE_SMOOTH) -> float:
    a = _array(a)
    b = _array(b)
    if a.shape != b.shape:
        raise DimensionError(f"dice of mismatched dims {a.shape} vs {b.shape}")
    return float(2.0 * (a * b).sum() / (a.sum() + b.sum() + smooth))


def tre(moving, fixed, spacing=None) -> float:
    """Distance between spacing-scaled centroids of two masks."""
    cm, cf = centroid(moving), centroid(fixed)
    if cm.shape != cf.shape:
        raise DimensionError("masks have different axis counts")
    spacing = np.ones_like(cm) if spacing is None else np.asarray(spacing, dtype=np.float64)
    return float(np.linalg.norm((cm - cf) * spacing))
