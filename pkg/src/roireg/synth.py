"""Synthetic blob images with known deformations and ROI pairings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy import ndimage

from .errors import IdError, PlacementError, ValidationError
from .grid import DisplacementField, GridImage, dice, warp_array

MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple = (128, 128)
    n_blobs: int = 6
    radius_range: tuple = (9.0, 14.0)
    amplitude: float = 5.0
    sigma_d: float = 16.0
    seed: int = 0
    # 3D only: whole-volume shift of the fixed image, in slices
    slice_shift: int = 0
    # 3D only: blob half-extent along the slice axis
    slice_radius: float = 4.0
    # 3D only: intensity change per slice inside a blob, breaks up/down symmetry
    slice_slope: float = 0.03
    gap: float = 4.0

    def __post_init__(self):
        if len(self.dims) not in (2, 3):
            raise ValidationError("dims must have 2 or 3 axes")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ValidationError("need 0 < min radius <= max radius")
        if self.amplitude < 0 or self.sigma_d <= 0:
            raise ValidationError("amplitude must be >= 0 and sigma_d > 0")
        if self.n_blobs < 1:
            raise ValidationError("need at least one blob")
        if self.n_blobs > 1 and 0.8 / (self.n_blobs - 1) < 0.1 - 1e-12:
            raise ValidationError("too many blobs for 0.1 intensity separation")


@dataclass
class SynthCase:
    spec: SynthSpec
    moving: GridImage
    fixed: GridImage
    moving_masks: List[np.ndarray]
    fixed_masks: List[np.ndarray]
    field: DisplacementField
    pairing: Dict[int, int]
    intensities: np.ndarray
    slice_offset: int = 0
    centers: np.ndarray = field(default=None, repr=False)


def _place(spec: SynthSpec, rng):
    ndim = len(spec.dims)
    inplane = spec.dims[-2:]
    centers, radii = [], []
    for _ in range(spec.n_blobs):
        for _ in range(MAX_ATTEMPTS):
            r = rng.uniform(*spec.radius_range)
            c = np.array([rng.uniform(r, n - 1 - r) for n in inplane])
            ok = all(np.linalg.norm(c - c2) >= r + r2 + spec.gap for c2, r2 in zip(centers, radii))
            if ok and all(n - 1 - 2 * r > 0 for n in inplane):
                break
        else:
            raise PlacementError(f"could not place {spec.n_blobs} blobs in {spec.dims}")
        centers.append(c)
        radii.append(r)
    if ndim == 3:
        depth = spec.dims[0]
        lo = spec.slice_radius + max(spec.slice_shift, 0)
        hi = depth - 1 - spec.slice_radius + min(spec.slice_shift, 0)
        if lo > hi:
            raise PlacementError("volume too thin for the requested slice radius and shift")
        zs = [rng.uniform(lo, hi) for _ in centers]
        centers = [np.concatenate([[z], c]) for z, c in zip(zs, centers)]
    return np.array(centers), np.array(radii)


def random_field(dims, amplitude, sigma, rng, components=None) -> np.ndarray:
    """Gaussian-smoothed white noise rescaled so the largest vector norm is ``amplitude``."""
    ndim = len(dims)
    components = ndim if components is None else components
    noise = rng.standard_normal((components,) + tuple(dims))
    if amplitude == 0:
        return np.zeros_like(noise)
    smooth = np.stack([ndimage.gaussian_filter(n, sigma, mode="wrap") for n in noise])
    peak = np.sqrt((smooth ** 2).sum(axis=0)).max()
    return smooth * (amplitude / peak)


def generate(spec: SynthSpec = SynthSpec()) -> SynthCase:
    rng = np.random.default_rng(spec.seed)
    dims = tuple(int(d) for d in spec.dims)
    ndim = len(dims)
    centers, radii = _place(spec, rng)
    levels = np.linspace(0.2, 1.0, spec.n_blobs) if spec.n_blobs > 1 else np.array([1.0])
    levels = rng.permutation(levels)

    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    image = np.zeros(dims)
    masks = []
    for c, r, level in zip(centers, radii, levels):
        if ndim == 2:
            m = (grid[0] - c[0]) ** 2 + (grid[1] - c[1]) ** 2 <= r * r
            image[m] = level
        else:
            m = ((grid[0] - c[0]) / spec.slice_radius) ** 2 + \
                ((grid[1] - c[1]) ** 2 + (grid[2] - c[2]) ** 2) / (r * r) <= 1.0
            image[m] = level + spec.slice_slope * (grid[0][m] - c[0])
        masks.append(m)

    vectors = np.zeros((ndim,) + dims)
    if ndim == 2:
        vectors[:] = random_field(dims, spec.amplitude, spec.sigma_d, rng)
    else:
        vectors[1:] = random_field(dims, spec.amplitude, spec.sigma_d, rng, components=2)
        vectors[0] = -float(spec.slice_shift)
    fixed, _ = warp_array(image, vectors)
    warped = warp_array(np.stack(masks).astype(np.float64), vectors)[0]
    fixed_masks = [w >= 0.5 for w in warped]

    return SynthCase(
        spec=spec,
        moving=GridImage(image),
        fixed=GridImage(fixed),
        moving_masks=masks,
        fixed_masks=fixed_masks,
        field=DisplacementField(vectors, "synthetic"),
        pairing={k: k for k in range(spec.n_blobs)},
        intensities=levels,
        slice_offset=int(spec.slice_shift),
        centers=centers,
    )


def score_pairing(predicted, truth, n_moving=None, n_fixed=None) -> float:
    """Fraction of predicted (moving id, fixed id) pairs present in ``truth``.

    ``truth`` is either a moving->fixed mapping or a collection of allowed
    pairs.  Ids outside [0, n_moving) / [0, n_fixed) raise IdError.
    """
    if hasattr(predicted, "index_pairs"):
        predicted = predicted.index_pairs
    predicted = [(int(i), int(j)) for i, j in predicted]
    allowed = set(truth.items()) if isinstance(truth, dict) else {(int(i), int(j)) for i, j in truth}
    if n_moving is None:
        n_moving = 1 + max((i for i, _ in allowed), default=-1)
    if n_fixed is None:
        n_fixed = 1 + max((j for _, j in allowed), default=-1)
    for i, j in predicted:
        if not (0 <= i < n_moving and 0 <= j < n_fixed):
            raise IdError(f"pair ({i}, {j}) refers to an unknown ROI")
    if not predicted:
        return 0.0
    return sum(p in allowed for p in predicted) / len(predicted)


def label_candidates(candidates, references, min_dice=0.5) -> List:
    """Ground-truth id of each candidate (best Dice >= min_dice), else None."""
    labels = []
    for c in candidates:
        scores = [dice(c, r) if np.any(r) else 0.0 for r in references]
        best = int(np.argmax(scores)) if scores else -1
        labels.append(best if best >= 0 and scores[best] >= min_dice else None)
    return labels


def candidate_oracle(moving_labels, fixed_labels, pairing) -> set:
    """Allowed (candidate i, candidate j) pairs implied by a ground-truth pairing."""
    allowed = set()
    for i, a in enumerate(moving_labels):
        if a is None or a not in pairing:
            continue
        for j, b in enumerate(fixed_labels):
            if b is not None and pairing[a] == b:
                allowed.add((i, j))
    return allowed


def lattice_case(dims=(128, 128), per_axis=8, radius=4.0, amplitude=3.0, sigma_d=16.0, seed=0) -> SynthCase:
    """Many small disks on a regular lattice, displaced by one smooth field.

    Each disk is its own ROI, so the case samples the field densely.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 2:
        raise ValidationError("lattice_case is 2D only")
    steps = [n / per_axis for n in dims]
    if min(steps) < 2 * radius + 2:
        raise PlacementError("lattice too dense for the requested radius")
    rows, cols = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    centers = np.array([((i + 0.5) * steps[0], (j + 0.5) * steps[1])
                        for i in range(per_axis) for j in range(per_axis)])
    masks = [(rows - r) ** 2 + (cols - c) ** 2 <= radius * radius for r, c in centers]
    image = np.zeros(dims)
    for m in masks:
        image[m] = 1.0
    vectors = random_field(dims, amplitude, sigma_d, rng)
    fixed, _ = warp_array(image, vectors)
    warped = warp_array(np.stack(masks).astype(np.float64), vectors)[0]
    return SynthCase(
        spec=SynthSpec(dims=dims, n_blobs=1, radius_range=(radius, radius), amplitude=amplitude,
                       sigma_d=sigma_d, seed=seed),
        moving=GridImage(image),
        fixed=GridImage(fixed),
        moving_masks=masks,
        fixed_masks=[w >= 0.5 for w in warped],
        field=DisplacementField(vectors, "synthetic"),
        pairing={k: k for k in range(len(masks))},
        intensities=np.ones(len(masks)),
        centers=centers,
    )


def split_blob_case(dims=(128, 128), radius=22.0, gap=5, level=0.8, distractor=0.4) -> SynthCase:
    """Fixed image holds one disk; the moving image holds the same disk cut
    into left and right halves by a vertical gap.  A second, dimmer disk is
    present in both images.  Moving ids 0/1 are the halves, 2 the distractor;
    fixed id 0 is the disk, 1 the distractor."""
    dims = tuple(int(d) for d in dims)
    rows, cols = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    cr, cc = dims[0] / 2, dims[1] / 2
    disk = (rows - cr) ** 2 + (cols - cc) ** 2 <= radius * radius
    left = disk & (cols < cc - gap / 2)
    right = disk & (cols > cc + gap / 2)
    dr = dc = min(dims) / 5
    other = (rows - dr) ** 2 + (cols - dc) ** 2 <= (radius / 2) ** 2
    if (other & disk).any():
        raise PlacementError("image too small for the split-blob layout")
    fixed = np.zeros(dims)
    fixed[disk], fixed[other] = level, distractor
    moving = np.zeros(dims)
    moving[left | right], moving[other] = level, distractor
    return SynthCase(
        spec=SynthSpec(dims=dims, n_blobs=2, radius_range=(radius / 2, radius), amplitude=0.0),
        moving=GridImage(moving),
        fixed=GridImage(fixed),
        moving_masks=[left, right, other],
        fixed_masks=[disk, other],
        field=DisplacementField.zeros(dims),
        pairing={0: 0, 1: 0, 2: 1},
        intensities=np.array([level, level, distractor]),
    )


def score_volume_pairing(pairs, case: SynthCase, slice_tolerance=0) -> float:
    """Fraction of volume pairs that join the same blob on corresponding slices.

    A pair is correct when both masks are labelled with paired blobs (via
    label_candidates on their own slices) and the fixed slice equals the
    moving slice plus the case's slice offset, within ``slice_tolerance``.
    """
    pairs = list(pairs)
    if not pairs:
        return 0.0
    good = 0
    for p in pairs:
        a = label_candidates([p.moving_mask], [m[p.moving_slice] for m in case.moving_masks])[0]
        b = label_candidates([p.fixed_mask], [m[p.fixed_slice] for m in case.fixed_masks])[0]
        same = a is not None and b is not None and case.pairing.get(a) == b
        good += same and abs(p.fixed_slice - p.moving_slice - case.slice_offset) <= slice_tolerance
    return good / len(pairs)
