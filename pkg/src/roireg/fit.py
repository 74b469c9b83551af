"""Dense displacement field fitting from matched ROI pairs.

The objective is

    L(u) = sum_k [ 0.5 * MSE(F_k, warp(M_k, u)) + 0.5 * (1 - dice(F_k, warp(M_k, u))) ]
           + lam * smoothness(u)

with F_k the fixed-frame mask and M_k the moving mask of pair k.  ``u``
lives on the fixed grid and is applied as a pull-back warp.

For volume pair sets the masks are 2D slices.  A pair (moving slice s_m,
fixed slice s_f) is compared on fixed slice s_f using the in-plane field
components there; the through-plane component is held at the slice offset
s_m - s_f and is not optimised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage

from .errors import DimensionError, DivergenceError, EmptyInputError, ValidationError
from .grid import DICE_SMOOTH, DisplacementField, _sample, centroid, dice, warp_array

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    lam: float = 0.1
    iterations: int = 500
    step_size: float = 0.5
    convergence_tol: float = 1e-5
    convergence_window: int = 10
    max_halvings: int = 20
    # Gaussian width (voxels) of the gradient preconditioner; 0 disables it.
    smoothing_sigma: float = 4.0
    # coarse-to-fine mask blur widths tried before the exact masks
    mask_sigmas: tuple = (2.0,)

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be >= 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not self.step_size > 0:
            raise ValidationError("step_size must be > 0")
        if self.smoothing_sigma < 0:
            raise ValidationError("smoothing_sigma must be >= 0")


@dataclass
class FitReport:
    initial_loss: float
    final_loss: float
    roi_loss: float
    smoothness_loss: float
    iterations: int
    converged: bool
    pair_dice: List[float] = field(default_factory=list)
    pair_tre: List[float] = field(default_factory=list)
    loss_history: List[float] = field(default_factory=list, repr=False)


@dataclass
class _Group:
    """Pairs that share one view of the field."""

    slice_index: Optional[int]  # None: the whole (2D) field
    moving: np.ndarray  # (K, *dims)
    fixed: np.ndarray
    offsets: np.ndarray  # through-plane offsets s_m - s_f, zeros in 2D
    order: list  # position of each pair in the caller's pair list
    boxes: list = None  # moving-mask bounding boxes

    def __post_init__(self):
        self.boxes = [_bbox(m) for m in self.moving]


def _is_volume(pairs):
    return len(pairs) > 0 and hasattr(pairs[0], "moving_slice")


def _groups(pairs, dims) -> List[_Group]:
    if len(pairs) == 0:
        raise EmptyInputError("no ROI pairs to fit")
    dims = tuple(dims)
    if not _is_volume(pairs):
        mov = np.stack([np.asarray(p.moving_mask, dtype=np.float64) for p in pairs])
        fix = np.stack([np.asarray(p.fixed_mask, dtype=np.float64) for p in pairs])
        if mov.shape[1:] != dims or fix.shape[1:] != dims:
            raise DimensionError(f"pair masks {mov.shape[1:]}/{fix.shape[1:]} do not match field dims {dims}")
        return [_Group(None, mov, fix, np.zeros(len(pairs)), list(range(len(pairs))))]
    if len(dims) != 3:
        raise DimensionError("volume pairs need a 3D field")
    by_slice = {}
    for k, p in enumerate(pairs):
        if not (0 <= p.fixed_slice < dims[0] and 0 <= p.moving_slice < dims[0]):
            raise DimensionError(f"slice index out of range in pair {k}")
        by_slice.setdefault(p.fixed_slice, []).append(k)
    groups = []
    for s in sorted(by_slice):
        ks = by_slice[s]
        mov = np.stack([np.asarray(pairs[k].moving_mask, dtype=np.float64) for k in ks])
        fix = np.stack([np.asarray(pairs[k].fixed_mask, dtype=np.float64) for k in ks])
        if mov.shape[1:] != dims[1:] or fix.shape[1:] != dims[1:]:
            raise DimensionError("pair masks do not match the in-plane field dims")
        off = np.array([pairs[k].moving_slice - s for k in ks], dtype=np.float64)
        groups.append(_Group(s, mov, fix, off, ks))
    return groups


def _view(u, g: _Group):
    return u if g.slice_index is None else u[1:, g.slice_index]


def _smoothness(u, want_grad=False):
    ncomp = u.shape[0]
    axes = [a for a in range(u.ndim - 1) if u.shape[a + 1] > 1]
    if not axes:
        return 0.0, (np.zeros_like(u) if want_grad else None)
    n_terms = len(axes) * ncomp
    total = 0.0
    grad = np.zeros_like(u) if want_grad else None
    for a in axes:
        d = np.diff(u, axis=a + 1)
        count = d[0].size
        total += (d * d).sum() / count
        if want_grad:
            c = 2.0 / (n_terms * count)
            lo = [slice(None)] * u.ndim
            hi = [slice(None)] * u.ndim
            lo[a + 1] = slice(0, -1)
            hi[a + 1] = slice(1, None)
            grad[tuple(lo)] -= c * d
            grad[tuple(hi)] += c * d
    return total / n_terms, grad


def smoothness_loss(ddf) -> float:
    """Mean squared forward difference over axes, components and voxels."""
    v = ddf.vectors if isinstance(ddf, DisplacementField) else np.asarray(ddf, dtype=np.float64)
    return float(_smoothness(v)[0])


def _bbox(mask):
    lo, hi = [], []
    for a in range(mask.ndim):
        proj = np.flatnonzero(mask.any(axis=tuple(b for b in range(mask.ndim) if b != a)))
        if not proj.size:
            return None
        lo.append(proj[0])
        hi.append(proj[-1])
    return np.array(lo), np.array(hi)


def _pair_region(coords, moving_box, fixed_k):
    """Bounding box of fixed-grid voxels that can see the moving mask or hold
    fixed-mask mass.  Outside it W, F and dW/du are all zero."""
    region = fixed_k > 0
    if moving_box is not None:
        lo, hi = moving_box
        hit = np.ones(coords.shape[1:], dtype=bool)
        for a in range(coords.shape[0]):
            hit &= (coords[a] >= lo[a] - 1) & (coords[a] <= hi[a] + 1)
        region = region | hit
    box = _bbox(region)
    if box is None:
        return None
    return tuple(slice(l, h + 1) for l, h in zip(*box))


def _warp_pairs(u, g: _Group, want_grad=False):
    """Warp every moving mask of a group, one crop per pair.

    Yields (k, crop, W, dWdu, F) with W/F restricted to the crop."""
    ug = _view(u, g)
    dims = ug.shape[1:]
    coords = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")) + ug
    for k in range(len(g.order)):
        mov = g.moving[k]
        mbox = g.boxes[k]
        crop = _pair_region(coords, mbox, g.fixed[k])
        if crop is None:
            yield k, None, None, None, None
            continue
        if mbox is None:
            shape = tuple(c.stop - c.start for c in crop)
            zero = np.zeros(shape)
            yield k, crop, zero, (np.zeros((len(dims),) + shape) if want_grad else None), g.fixed[k][crop]
            continue
        lo = np.maximum(mbox[0] - 1, 0)
        hi = np.minimum(mbox[1] + 2, dims)
        src = mov[tuple(slice(l, h) for l, h in zip(lo, hi))]
        local = coords[(slice(None),) + crop] - lo.reshape((-1,) + (1,) * len(dims))
        W, dW = _sample(src[None], local, want_grad)
        yield k, crop, W[0], (None if dW is None else dW[:, 0]), g.fixed[k][crop]


def _objective(u, groups, lam, want_grad=False, per_pair=False, use_dice=True):
    roi = 0.0
    grad = np.zeros_like(u) if want_grad else None
    losses = {}
    for g in groups:
        n = np.prod(g.fixed.shape[1:])
        for k, crop, W, dW, F in _warp_pairs(u, g, want_grad):
            if crop is None:
                # both masks empty: MSE 0, dice 0
                losses[g.order[k]] = 0.5
                roi += 0.5
                continue
            diff = W - F
            P = (F * W).sum()
            D = F.sum() + W.sum() + DICE_SMOOTH
            loss = 0.5 * (diff * diff).sum() / n
            if use_dice:
                loss += 0.5 * (1.0 - 2.0 * P / D)
            losses[g.order[k]] = loss
            roi += loss
            if want_grad:
                dLdW = diff / n
                if use_dice:
                    dLdW = dLdW - F / D + P / (D * D)
                gu = dW * dLdW[None]
                if g.slice_index is None:
                    grad[(slice(None),) + crop] += gu
                else:
                    grad[(slice(1, None), g.slice_index) + crop] += gu
    smooth, gs = _smoothness(u, want_grad)
    total = roi + lam * smooth
    if want_grad:
        grad += lam * gs
    if per_pair:
        return total, roi, smooth, grad, losses
    return total, roi, smooth, grad


def _through_plane_init(groups, dims, sigma):
    """Slice offsets on each fixed mask support, filled in smoothly elsewhere."""
    num = np.zeros(dims)
    den = np.zeros(dims)
    for g in groups:
        for k in range(len(g.order)):
            num[g.slice_index] += g.offsets[k] * g.fixed[k]
            den[g.slice_index] += g.fixed[k]
    support = den > 0
    exact = np.where(support, num / np.where(support, den, 1.0), 0.0)
    if not support.any() or not (exact != 0).any():
        return exact
    s = max(sigma, 1.0)
    fill = ndimage.gaussian_filter(num, s) / np.maximum(ndimage.gaussian_filter(den, s), 1e-12)
    fill = np.where(ndimage.gaussian_filter(den, s) > 1e-6, fill, 0.0)
    return np.where(support, exact, fill)


def _free_components(ndim, volume):
    free = np.ones(ndim, dtype=bool)
    if volume:
        free[0] = False
    return free


def _direction(grad, free, sigma):
    d = np.zeros_like(grad)
    for c in np.nonzero(free)[0]:
        d[c] = ndimage.gaussian_filter(grad[c], sigma, mode="constant") if sigma > 0 else grad[c]
    scale = np.abs(d).max()
    return d / scale if scale > 0 else d


def pair_metrics(pairs, ddf, spacing=None):
    """Post-warp Dice and TRE for each pair, in the caller's pair order."""
    u = ddf.vectors if isinstance(ddf, DisplacementField) else np.asarray(ddf, dtype=np.float64)
    groups = _groups(pairs, u.shape[1:])
    ndim = u.shape[0]
    spacing = np.ones(ndim) if spacing is None else np.asarray(spacing, dtype=np.float64)
    dices = [0.0] * len(pairs)
    tres = [float("nan")] * len(pairs)
    for g in groups:
        W, _ = warp_array(g.moving, _view(u, g))
        for k, pos in enumerate(g.order):
            dices[pos] = dice(g.fixed[k], W[k])
            if W[k].sum() <= 0 or g.fixed[k].sum() <= 0:
                continue
            delta = centroid(W[k]) - centroid(g.fixed[k])
            if g.slice_index is not None:
                # through-plane residual: where the samples land vs the moving slice
                dz = u[0, g.slice_index]
                z_res = ((g.slice_index + dz - (g.slice_index + g.offsets[k])) * W[k]).sum() / W[k].sum()
                delta = np.concatenate([[z_res], delta])
            tres[pos] = float(np.linalg.norm(delta * spacing))
    return dices, tres


def roi_loss(pairs, ddf) -> float:
    u = ddf.vectors if isinstance(ddf, DisplacementField) else np.asarray(ddf, dtype=np.float64)
    return float(_objective(u, _groups(pairs, u.shape[1:]), 0.0)[1])


def objective(pairs, ddf, lam):
    """Total objective and its gradient with respect to every field component."""
    u = ddf.vectors if isinstance(ddf, DisplacementField) else np.asarray(ddf, dtype=np.float64)
    total, _, _, grad = _objective(u, _groups(pairs, u.shape[1:]), lam, want_grad=True)
    return float(total), grad


def _blurred(groups, sigma):
    out = []
    for g in groups:
        sig = (0,) + (sigma,) * (g.moving.ndim - 1)
        mov = np.clip(ndimage.gaussian_filter(g.moving, sig, truncate=3.0), 0.0, 1.0)
        fix = np.clip(ndimage.gaussian_filter(g.fixed, sig, truncate=3.0), 0.0, 1.0)
        out.append(_Group(g.slice_index, mov, fix, g.offsets, g.order))
    return out


def _descend(u, groups, cfg: FitConfig, free, max_iters, use_dice=True):
    """Backtracking descent from ``u``; returns (u, loss history, iterations, converged)."""
    loss, _, _, grad = _objective(u, groups, cfg.lam, want_grad=True, use_dice=use_dice)
    history = [loss]
    step = cfg.step_size
    it = 0
    while it < max_iters:
        direction = _direction(grad, free, cfg.smoothing_sigma)
        if not direction.any():
            return u, history, it, True
        for _ in range(cfg.max_halvings + 1):
            trial = u - step * direction
            t_loss = _objective(trial, groups, cfg.lam, use_dice=use_dice)[0]
            if not np.isfinite(t_loss):
                raise DivergenceError(f"non-finite loss at iteration {it + 1}", field=DisplacementField(u))
            if t_loss < loss:
                break
            step *= 0.5
        else:
            return u, history, it, True
        it += 1
        u = trial
        step = min(2.0 * step, cfg.step_size)
        loss, _, _, grad = _objective(u, groups, cfg.lam, want_grad=True, use_dice=use_dice)
        history.append(loss)
        w = cfg.convergence_window
        if len(history) > w and history[-w - 1] - loss <= cfg.convergence_tol * abs(history[-w - 1]):
            return u, history, it, True
    return u, history, it, False


def fit_ddf(pairs, dims, cfg: FitConfig = FitConfig(), spacing=None):
    """Fit a displacement field to ``pairs`` by preconditioned gradient descent.

    Each iteration moves along the Gaussian-smoothed negative gradient,
    scaled so the largest component moves at most ``cfg.step_size`` voxels,
    halving the step until the loss decreases.  When ``cfg.mask_sigmas`` is
    set, the same objective is first minimised on blurred copies of the
    masks (coarse to fine) and the exact masks are used last.

    Returns (DisplacementField, FitReport).
    """
    dims = tuple(int(d) for d in dims)
    groups = _groups(pairs, dims)
    volume = groups[0].slice_index is not None
    ndim = len(dims)
    u0 = np.zeros((ndim,) + dims)
    if volume:
        u0[0] = _through_plane_init(groups, dims, cfg.smoothing_sigma)
    free = _free_components(ndim, volume)

    initial = _objective(u0, groups, cfg.lam)[0]
    if not np.isfinite(initial):
        raise DivergenceError("initial loss is not finite")
    u = u0
    used = 0
    try:
        # blurred stages run to convergence; the exact masks get whatever budget is left
        budget = cfg.iterations
        for sigma in cfg.mask_sigmas:
            # soft Dice is not maximised at W == F for soft masks, so blurred stages use MSE only
            u, _, n, _ = _descend(u, _blurred(groups, sigma), cfg, free, budget - used, use_dice=False)
            used += n
        if _objective(u, groups, cfg.lam)[0] > initial:
            u = u0
        u, history, n, converged = _descend(u, groups, cfg, free, cfg.iterations - used)
    except DivergenceError as err:
        bad = err.field.vectors if err.field is not None else u
        raise DivergenceError(str(err), field=DisplacementField(bad),
                              report=_report(pairs, bad, initial, [initial], used, False, cfg, spacing)) from None
    used += n
    if history[0] != initial:
        history = [initial] + history
    log.debug("fit finished after %d iterations, loss %.6g -> %.6g", used, initial, history[-1])
    return DisplacementField(u, "fitted"), _report(pairs, u, initial, history, used, converged, cfg, spacing)


def _report(pairs, u, initial, history, iterations, converged, cfg, spacing):
    groups = _groups(pairs, u.shape[1:])
    total, roi, smooth, _ = _objective(u, groups, cfg.lam)
    dices, tres = pair_metrics(pairs, u, spacing)
    return FitReport(
        initial_loss=float(initial),
        final_loss=float(total),
        roi_loss=float(roi),
        smoothness_loss=float(smooth),
        iterations=int(iterations),
        converged=bool(converged),
        pair_dice=dices,
        pair_tre=tres,
        loss_history=[float(h) for h in history],
    )
