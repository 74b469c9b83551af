"""Prototype similarity and greedy ROI pairing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DegeneratePrototypeError, DimensionError, ValidationError

ONE_TO_ONE = "one-to-one"
ONE_TO_MANY = "one-to-many"


@dataclass(frozen=True)
class MatchConfig:
    epsilon: float = 0.8
    quantity_limit: Optional[int] = None
    mode: str = ONE_TO_ONE

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        if self.quantity_limit is not None and self.quantity_limit < 1:
            raise ValidationError("quantity_limit must be >= 1")
        if self.mode not in (ONE_TO_ONE, ONE_TO_MANY):
            raise ValidationError(f"unknown mapping mode {self.mode!r}")


@dataclass(frozen=True)
class RoiPair:
    moving_id: int
    fixed_id: int
    similarity: float
    moving_mask: np.ndarray = field(repr=False)
    fixed_mask: np.ndarray = field(repr=False)


@dataclass
class RoiPairSet:
    pairs: List[RoiPair]
    config: MatchConfig = field(default_factory=MatchConfig)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, k):
        return self.pairs[k]

    @property
    def index_pairs(self):
        return [(p.moving_id, p.fixed_id) for p in self.pairs]


def _as_matrix(protos):
    p = np.asarray(protos, dtype=np.float64)
    if p.size == 0:
        return p.reshape(0, p.shape[-1] if p.ndim == 2 else 0)
    if p.ndim == 1:
        p = p[None]
    return p


def similarity_matrix(protos_x, protos_y) -> np.ndarray:
    """Absolute cosine similarity between every moving/fixed prototype."""
    px, py = _as_matrix(protos_x), _as_matrix(protos_y)
    if px.shape[0] and py.shape[0] and px.shape[1] != py.shape[1]:
        raise DimensionError(f"channel mismatch: {px.shape[1]} vs {py.shape[1]}")
    nx = np.linalg.norm(px, axis=1)
    ny = np.linalg.norm(py, axis=1)
    if (nx == 0).any() or (ny == 0).any():
        raise DegeneratePrototypeError("zero-norm prototype")
    if not px.shape[0] or not py.shape[0]:
        return np.zeros((px.shape[0], py.shape[0]))
    s = np.abs((px / nx[:, None]) @ (py / ny[:, None]).T)
    return np.clip(s, 0.0, 1.0)


def _rank_key(t):
    i, j, s = t
    return (-s, i, j)


def select_pairs(S, cfg: MatchConfig = MatchConfig()):
    """Return (i, j, similarity) triples with similarity > epsilon.

    one-to-one: greedy on the globally largest remaining entry, removing its
    row and column each time.  one-to-many: each row keeps its best column.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise DimensionError("similarity matrix must be 2D")
    if S.size == 0:
        return []
    if cfg.mode == ONE_TO_ONE:
        ii, jj = np.nonzero(S > cfg.epsilon)
        cands = sorted(((int(i), int(j), float(S[i, j])) for i, j in zip(ii, jj)), key=_rank_key)
        used_i, used_j, picked = set(), set(), []
        for i, j, s in cands:
            if i in used_i or j in used_j:
                continue
            used_i.add(i)
            used_j.add(j)
            picked.append((i, j, s))
    else:
        best = S.argmax(axis=1)
        picked = [(i, int(j), float(S[i, j])) for i, j in enumerate(best) if S[i, j] > cfg.epsilon]
        picked.sort(key=_rank_key)
    if cfg.quantity_limit is not None:
        picked = picked[: cfg.quantity_limit]
    return picked


def build_pair_set(selection, masks_x, masks_y, cfg: MatchConfig = MatchConfig()) -> RoiPairSet:
    pairs = []
    for i, j, s in sorted(selection, key=_rank_key):
        if not (0 <= i < len(masks_x)) or not (0 <= j < len(masks_y)):
            raise IndexError(f"selection ({i}, {j}) out of range")
        if not s > cfg.epsilon:
            raise ValidationError(f"pair ({i}, {j}) similarity {s} does not exceed epsilon")
        pairs.append(RoiPair(i, j, float(s), np.asarray(masks_x[i], dtype=bool),
                             np.asarray(masks_y[j], dtype=bool)))
    if cfg.mode == ONE_TO_ONE:
        ids_x = [p.moving_id for p in pairs]
        ids_y = [p.fixed_id for p in pairs]
        if len(set(ids_x)) != len(ids_x) or len(set(ids_y)) != len(ids_y):
            raise ValidationError("one-to-one pair set repeats an index")
    return RoiPairSet(pairs, cfg)


def match_rois(masks_x, protos_x, masks_y, protos_y, cfg: MatchConfig = MatchConfig()) -> RoiPairSet:
    S = similarity_matrix(protos_x, protos_y)
    return build_pair_set(select_pairs(S, cfg), masks_x, masks_y, cfg)
