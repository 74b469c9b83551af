"""Slice-wise matching of two volumes within a through-plane search window."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from ._threads import parallel_map
from .errors import DimensionError, ValidationError
from .match import MatchConfig, select_pairs, similarity_matrix
from .pipeline import PipelineConfig, SliceCandidates, prepare_slice


@dataclass(frozen=True)
class VolumeMatchConfig(PipelineConfig):
    slice_range: int = 11

    def __post_init__(self):
        if self.slice_range < 0:
            raise ValidationError("slice_range must be >= 0")


@dataclass(frozen=True)
class VolumePair:
    moving_slice: int
    fixed_slice: int
    moving_id: int
    fixed_id: int
    similarity: float
    moving_mask: np.ndarray = field(repr=False)
    fixed_mask: np.ndarray = field(repr=False)


@dataclass
class VolumePairSet:
    pairs: List[VolumePair]
    config: MatchConfig = field(default_factory=MatchConfig)
    slice_range: int = 0

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, k):
        return self.pairs[k]


def _canonical(pairs):
    return sorted(pairs, key=lambda p: (p.moving_slice, -p.similarity, p.moving_id, p.fixed_slice, p.fixed_id))


def _window(s, depth, delta):
    return range(max(0, s - delta), min(depth - 1, s + delta) + 1)


def _match_slice(s, mov: SliceCandidates, fixed_for, depth, cfg: VolumeMatchConfig):
    if not mov.masks:
        return []
    pool = []  # (fixed slice, candidate id)
    protos = []
    masks = []
    for t in _window(s, depth, cfg.slice_range):
        cand = fixed_for(t)
        for k, m in enumerate(cand.masks):
            pool.append((t, k))
            masks.append(m)
        if len(cand.masks):
            protos.append(cand.prototypes)
    if not pool:
        return []
    S = similarity_matrix(mov.prototypes, np.concatenate(protos))
    out = []
    for i, j, sim in select_pairs(S, cfg.match):
        t, k = pool[j]
        out.append(VolumePair(s, t, i, k, sim, mov.masks[i], masks[j]))
    return out


def match_volume(moving: Sequence[SliceCandidates], fixed: Sequence[SliceCandidates],
                 cfg: VolumeMatchConfig = VolumeMatchConfig()) -> VolumePairSet:
    """Match precomputed per-slice candidates of two equally deep volumes."""
    if len(moving) != len(fixed):
        raise DimensionError(f"slice counts differ: {len(moving)} vs {len(fixed)}")
    depth = len(moving)
    per_slice = parallel_map(lambda s: _match_slice(s, moving[s], fixed.__getitem__, depth, cfg), range(depth))
    return VolumePairSet(_canonical([p for ps in per_slice for p in ps]), cfg.match, cfg.slice_range)


def _check_volumes(moving, fixed):
    mv = np.asarray(moving, dtype=np.float64)
    fv = np.asarray(fixed, dtype=np.float64)
    if mv.ndim != 3 or fv.ndim != 3:
        raise DimensionError("register_volume expects two 3D volumes")
    if mv.shape[0] != fv.shape[0]:
        raise DimensionError(f"slice counts differ: {mv.shape[0]} vs {fv.shape[0]}")
    return mv, fv


def register_volume(moving, fixed, cfg: VolumeMatchConfig = VolumeMatchConfig(),
                    segmenter: Callable | None = None, cache: bool = True) -> VolumePairSet:
    """Segment and embed every slice, then match each moving slice against
    the pooled candidates of fixed slices within ``cfg.slice_range``.

    With ``cache=False`` fixed-slice candidates are recomputed for every
    moving slice; the result is identical, only slower.
    """
    mv, fv = _check_volumes(moving, fixed)
    depth = mv.shape[0]
    moving_c = parallel_map(lambda s: prepare_slice(mv[s], cfg, segmenter), range(depth))
    if cache:
        fixed_c = parallel_map(lambda s: prepare_slice(fv[s], cfg, segmenter), range(depth))
        return match_volume(moving_c, fixed_c, cfg)

    def fresh(t):
        return prepare_slice(fv[t], cfg, segmenter)

    pairs = []
    for s in range(depth):
        pairs.extend(_match_slice(s, moving_c[s], fresh, depth, cfg))
    return VolumePairSet(_canonical(pairs), cfg.match, cfg.slice_range)
