"""Pair count and pairing score against the similarity threshold, both mapping modes."""

import argparse

import numpy as np

from roireg.match import ONE_TO_MANY, ONE_TO_ONE, MatchConfig, build_pair_set, select_pairs, similarity_matrix
from roireg.pipeline import prepare_slice
from roireg.synth import SynthSpec, candidate_oracle, generate, label_candidates, score_pairing


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.7, 0.8, 0.9, 0.95, 0.99])
    ap.add_argument("--amplitude", type=float, default=5.0)
    args = ap.parse_args()

    counts = {(m, e): [] for m in (ONE_TO_ONE, ONE_TO_MANY) for e in args.eps}
    scores = {k: [] for k in counts}
    for seed in range(args.seeds):
        case = generate(SynthSpec(amplitude=args.amplitude, seed=seed))
        cx, cy = prepare_slice(case.moving.data), prepare_slice(case.fixed.data)
        S = similarity_matrix(cx.prototypes, cy.prototypes)
        oracle = candidate_oracle(label_candidates(cx.masks, case.moving_masks),
                                  label_candidates(cy.masks, case.fixed_masks), case.pairing)
        for mode, eps in counts:
            cfg = MatchConfig(epsilon=eps, mode=mode)
            ps = build_pair_set(select_pairs(S, cfg), cx.masks, cy.masks, cfg)
            counts[mode, eps].append(len(ps))
            if len(ps):
                scores[mode, eps].append(score_pairing(ps, oracle, len(cx.masks), len(cy.masks)))
    print("mode\tepsilon\tmean_pairs\tmean_score")
    for mode, eps in counts:
        sc = np.mean(scores[mode, eps]) if scores[mode, eps] else float("nan")
        print(f"{mode}\t{eps}\t{np.mean(counts[mode, eps]):.2f}\t{sc:.3f}")


if __name__ == "__main__":
    main()
