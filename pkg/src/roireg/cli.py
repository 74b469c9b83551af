"""Command-line entry point: ``roireg <command> ...``.

Exit codes: 0 success, 2 input or format error, 3 nothing to do.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import OrderedDict

import numpy as np

from . import io
from ._threads import parallel_map
from .errors import EmptyInputError, RegistrationError
from .fit import FitConfig, fit_ddf, pair_metrics
from .grid import warp_array
from .match import ONE_TO_MANY, ONE_TO_ONE, MatchConfig, RoiPair, match_rois
from .pipeline import embed_candidates
from .segment import QuantileSegmenter, RoiFilterConfig, SegmenterConfig, candidate_rois
from .synth import SynthSpec, candidate_oracle, generate, label_candidates, score_pairing
from .volume import VolumeMatchConfig, VolumePair, match_volume

EXIT_OK, EXIT_INPUT, EXIT_EMPTY = 0, 2, 3


def _warn(msg):
    print(f"roireg: warning: {msg}", file=sys.stderr)


def _slices(data):
    return [data] if data.ndim == 2 else [data[s] for s in range(data.shape[0])]


def _image(path):
    g = io.read_grid(path)
    if g.channels != 1:
        raise io.FormatError(f"{path}: expected a single-channel image, found {g.channels} channels")
    return g


# -- segment -----------------------------------------------------------------

def cmd_segment(args):
    g = _image(args.image)
    seg = QuantileSegmenter(SegmenterConfig(n_thresholds=args.thresholds))
    filt = RoiFilterConfig(args.min_area, args.max_area, args.max_overlap)
    data = g.data.astype(np.float64)
    per_slice = parallel_map(lambda im: candidate_rois(im, seg, filt), _slices(data))
    io.write_masks(args.out_dir, per_slice, g.spacing[-2:])
    print(f"{sum(len(m) for m in per_slice)} masks written to {args.out_dir}")
    return EXIT_OK


# -- match -------------------------------------------------------------------

def _load_mask_sets(path, depth, plane):
    by_slice = [[] for _ in range(depth)]
    for r in sorted(io.read_masks(path), key=lambda r: (r.slice_index, r.index)):
        if not 0 <= r.slice_index < depth:
            raise io.FormatError(f"{r.path}: slice {r.slice_index} outside [0, {depth})")
        m = io.load_mask(r.path)
        if m.shape != plane:
            raise io.FormatError(f"{r.path}: mask dims {m.shape} != image plane {plane}")
        by_slice[r.slice_index].append((r.path, m))
    return by_slice


def cmd_match(args):
    mg, fg = _image(args.moving_image), _image(args.fixed_image)
    if mg.dims != fg.dims:
        raise io.FormatError(f"image dims differ: {mg.dims} vs {fg.dims}")
    dims = tuple(mg.dims)
    depth = 1 if len(dims) == 2 else dims[0]
    mov = _load_mask_sets(args.moving_masks, depth, dims[-2:])
    fix = _load_mask_sets(args.fixed_masks, depth, dims[-2:])
    mcfg = MatchConfig(args.epsilon, args.quantity_limit, args.mode)

    def cands(image, sets):
        return parallel_map(lambda s: embed_candidates(image[s] if image.ndim == 3 else image,
                                                       [m for _, m in sets[s]]), range(depth))

    mc = cands(mg.data.astype(np.float64), mov)
    fc = cands(fg.data.astype(np.float64), fix)
    records = []
    if len(dims) == 2:
        ps = match_rois(mc[0].masks, mc[0].prototypes, fc[0].masks, fc[0].prototypes, mcfg)
        for p in ps:
            records.append(io.PairRecord(mov[0][p.moving_id][0], fix[0][p.fixed_id][0], 0, 0, p.similarity))
    else:
        ps = match_volume(mc, fc, VolumeMatchConfig(match=mcfg, slice_range=args.slice_range))
        for p in ps:
            records.append(io.PairRecord(mov[p.moving_slice][p.moving_id][0], fix[p.fixed_slice][p.fixed_id][0],
                                         p.moving_slice, p.fixed_slice, p.similarity))
    if not records:
        _warn("no ROI pairs passed the similarity threshold")
    io.write_pairs(args.output, io.PairManifest(records, dims, mg.spacing, args.epsilon))
    print(f"{len(records)} pairs written to {args.output}")
    return EXIT_OK


# -- fit / eval --------------------------------------------------------------

def _load_pairs(path):
    """Read a pair manifest into (pairs, dims, spacing)."""
    man = io.read_pairs(path)
    if not man.records:
        raise EmptyInputError(f"{path}: manifest has no pairs")
    cache = {}

    def mask(p):
        if p not in cache:
            cache[p] = io.load_mask(p)
        return cache[p]

    mids, fids = OrderedDict(), OrderedDict()
    for r in man.records:
        mids.setdefault(r.moving_path, len(mids))
        fids.setdefault(r.fixed_path, len(fids))
    dims = man.dims or mask(man.records[0].moving_path).shape
    pairs = []
    for r in man.records:
        m, f = mask(r.moving_path), mask(r.fixed_path)
        if len(dims) == 2:
            pairs.append(RoiPair(mids[r.moving_path], fids[r.fixed_path], r.similarity, m, f))
        else:
            pairs.append(VolumePair(r.moving_slice, r.fixed_slice, mids[r.moving_path], fids[r.fixed_path],
                                    r.similarity, m, f))
    return pairs, tuple(dims), man.spacing


def _format_report(rep):
    lines = [f"initial_loss\t{rep.initial_loss:.8g}",
             f"final_loss\t{rep.final_loss:.8g}",
             f"roi_loss\t{rep.roi_loss:.8g}",
             f"smoothness_loss\t{rep.smoothness_loss:.8g}",
             f"iterations\t{rep.iterations}",
             f"converged\t{str(rep.converged).lower()}",
             "pair\tdice\ttre"]
    lines += [f"{k}\t{d:.6f}\t{t:.6f}" for k, (d, t) in enumerate(zip(rep.pair_dice, rep.pair_tre))]
    return "\n".join(lines) + "\n"


def cmd_fit(args):
    pairs, dims, spacing = _load_pairs(args.manifest)
    cfg = FitConfig(lam=args.lam, iterations=args.iters, step_size=args.step)
    ddf, rep = fit_ddf(pairs, dims, cfg, spacing)
    report = args.report or os.path.splitext(args.output)[0] + ".report.txt"
    text = _format_report(rep)
    io.write_field(args.output, ddf.vectors, spacing)
    io.atomic_write(report, text.encode())
    print(f"loss {rep.initial_loss:.6g} -> {rep.final_loss:.6g} after {rep.iterations} iterations")
    return EXIT_OK


def _mean_sd(x):
    x = np.asarray([v for v in x if np.isfinite(v)], dtype=np.float64)
    if x.size == 0:
        return "nan±nan"
    return f"{x.mean():.6f}±{x.std(ddof=1) if x.size > 1 else 0.0:.6f}"


def cmd_eval(args):
    pairs, dims, spacing = _load_pairs(args.manifest)
    vectors, _ = io.read_field(args.ddf)
    if vectors.shape[1:] != dims:
        raise io.FormatError(f"field dims {vectors.shape[1:]} != manifest dims {dims}")
    dices, tres = pair_metrics(pairs, vectors, spacing)
    print("pair\tdice\ttre")
    for k, (d, t) in enumerate(zip(dices, tres)):
        print(f"{k}\t{d:.6f}\t{t:.6f}")
    print(f"mean±sd\t{_mean_sd(dices)}\t{_mean_sd(tres)}")
    return EXIT_OK


# -- warp --------------------------------------------------------------------

def cmd_warp(args):
    g = _image(args.image)
    vectors, _ = io.read_field(args.ddf)
    if vectors.shape[1:] != tuple(g.dims):
        raise io.FormatError(f"field dims {vectors.shape[1:]} != image dims {g.dims}")
    out, _ = warp_array(g.data.astype(np.float64), vectors)
    if g.data.dtype == np.uint8:
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    io.write_grid(args.output, out, g.spacing)
    return EXIT_OK


# -- synth / score -----------------------------------------------------------

def _ints(text):
    return tuple(int(t) for t in text.split(","))


def cmd_synth(args):
    spec = SynthSpec(dims=args.dims, n_blobs=args.n_blobs, radius_range=(args.radius_min, args.radius_max),
                     amplitude=args.amplitude, sigma_d=args.sigma_d, seed=args.seed, slice_shift=args.slice_shift)
    case = generate(spec)
    d = args.out_dir
    truth = os.path.join(d, "truth")
    for k, (m, f) in enumerate(zip(case.moving_masks, case.fixed_masks)):
        io.write_grid(os.path.join(truth, f"moving_{k}.rgrd"), m.astype(np.uint8))
        io.write_grid(os.path.join(truth, f"fixed_{k}.rgrd"), f.astype(np.uint8))
    lines = "".join(f"{a}\t{b}\n" for a, b in sorted(case.pairing.items()))
    io.atomic_write(os.path.join(truth, "pairing.tsv"), lines.encode())
    io.write_field(os.path.join(d, "field.rgrd"), case.field.vectors)
    io.write_grid(os.path.join(d, "moving.rgrd"), case.moving.data.astype(np.float32))
    io.write_grid(os.path.join(d, "fixed.rgrd"), case.fixed.data.astype(np.float32))
    print(f"case written to {d}")
    return EXIT_OK


def _truth(case_dir):
    pairing = {}
    path = os.path.join(case_dir, "truth", "pairing.tsv")
    try:
        with open(path) as f:
            for line in f:
                if line.strip():
                    a, b = line.split("\t")
                    pairing[int(a)] = int(b)
    except (OSError, ValueError) as e:
        raise io.FormatError(f"{path}: {e}") from None
    mov = [io.load_mask(os.path.join(case_dir, "truth", f"moving_{k}.rgrd")) for k in sorted(pairing)]
    fix = [io.load_mask(os.path.join(case_dir, "truth", f"fixed_{k}.rgrd")) for k in sorted(pairing.values())]
    return pairing, mov, fix


def cmd_score(args):
    pairing, gt_mov, gt_fix = _truth(args.case_dir)
    man = io.read_pairs(args.manifest)
    if not man.records:
        print("score\t0.000000")
        return EXIT_OK

    def labels(paths_slices, refs):
        out = []
        for p, s in paths_slices:
            m = io.load_mask(p)
            r = [ref if ref.ndim == 2 else ref[s] for ref in refs]
            out.append(label_candidates([m], r)[0])
        return out

    mkeys = list(OrderedDict.fromkeys((r.moving_path, r.moving_slice) for r in man.records))
    fkeys = list(OrderedDict.fromkeys((r.fixed_path, r.fixed_slice) for r in man.records))
    oracle = candidate_oracle(labels(mkeys, gt_mov), labels(fkeys, gt_fix), pairing)
    pred = [(mkeys.index((r.moving_path, r.moving_slice)), fkeys.index((r.fixed_path, r.fixed_slice)))
            for r in man.records]
    print(f"score\t{score_pairing(pred, oracle, len(mkeys), len(fkeys)):.6f}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="roireg", description="ROI-pair image registration")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="candidate ROI masks for an image")
    p.add_argument("image")
    p.add_argument("out_dir")
    p.add_argument("--min-area", type=int, default=200)
    p.add_argument("--max-area", type=int, default=7000)
    p.add_argument("--max-overlap", type=float, default=0.8)
    p.add_argument("--thresholds", type=int, default=8)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("match", help="pair moving and fixed ROI masks")
    p.add_argument("moving_masks", help="mask manifest or directory")
    p.add_argument("fixed_masks")
    p.add_argument("moving_image")
    p.add_argument("fixed_image")
    p.add_argument("-o", "--output", default="pairs.tsv")
    p.add_argument("--epsilon", type=float, default=0.8)
    p.add_argument("--quantity-limit", type=int, default=None)
    p.add_argument("--mode", choices=[ONE_TO_ONE, ONE_TO_MANY], default=ONE_TO_ONE)
    p.add_argument("--slice-range", type=int, default=11)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("fit", help="fit a displacement field to a pair manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", default="ddf.rgrd")
    p.add_argument("--report", default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--step", type=float, default=0.5)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("warp", help="pull-back warp an image by a field")
    p.add_argument("image")
    p.add_argument("ddf")
    p.add_argument("-o", "--output", default="warped.rgrd")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("eval", help="per-pair Dice and TRE under a field")
    p.add_argument("manifest")
    p.add_argument("ddf")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic case with ground truth")
    p.add_argument("out_dir")
    p.add_argument("--dims", type=_ints, default=(128, 128))
    p.add_argument("--n-blobs", type=int, default=6)
    p.add_argument("--radius-min", type=float, default=9.0)
    p.add_argument("--radius-max", type=float, default=14.0)
    p.add_argument("--amplitude", type=float, default=5.0)
    p.add_argument("--sigma-d", type=float, default=16.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slice-shift", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="pairing score of a manifest against a synthetic case")
    p.add_argument("manifest")
    p.add_argument("case_dir")
    p.set_defaults(func=cmd_score)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EmptyInputError as e:
        print(f"roireg: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except (RegistrationError, OSError, ValueError) as e:
        print(f"roireg: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
