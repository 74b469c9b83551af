import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roireg.errors import DegeneratePrototypeError, DimensionError, ValidationError
from roireg.match import (ONE_TO_MANY, ONE_TO_ONE, MatchConfig, build_pair_set, match_rois, select_pairs,
                          similarity_matrix)


def brute_one_to_one(S, eps):
    """Injective selection whose descending similarity list is lexicographically largest."""
    n, m = S.shape
    cells = [(i, j) for i in range(n) for j in range(m) if S[i, j] > eps]
    best, best_key = [], ()
    for r in range(1, min(n, m) + 1):
        for combo in itertools.combinations(cells, r):
            if len({i for i, _ in combo}) < r or len({j for _, j in combo}) < r:
                continue
            key = tuple(sorted((S[i, j] for i, j in combo), reverse=True))
            if key > best_key:
                best, best_key = combo, key
    return set(best)


class TestSimilarity:
    def test_parallel(self):
        assert similarity_matrix([[1.0, 2.0]], [[2.0, 4.0]])[0, 0] == pytest.approx(1.0)

    def test_orthogonal(self):
        assert similarity_matrix([[1.0, 0.0]], [[0.0, 3.0]])[0, 0] == 0.0

    def test_hand_value(self):
        assert similarity_matrix([[1.0, 0.0]], [[1.0, 1.0]])[0, 0] == pytest.approx(1 / np.sqrt(2))

    def test_absolute_value(self):
        assert similarity_matrix([[1.0, 0.0]], [[-1.0, 0.0]])[0, 0] == pytest.approx(1.0)

    def test_errors(self):
        with pytest.raises(DegeneratePrototypeError):
            similarity_matrix([[0.0, 0.0]], [[1.0, 0.0]])
        with pytest.raises(DimensionError):
            similarity_matrix([[1.0, 0.0]], [[1.0, 0.0, 1.0]])

    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 100))
    def test_scale_invariance(self, seed, scale):
        r = np.random.default_rng(seed)
        px, py = r.normal(size=(4, 5)), r.normal(size=(3, 5))
        px2 = px.copy()
        px2[1] *= scale
        cfg = MatchConfig(epsilon=0.3)
        a = select_pairs(similarity_matrix(px, py), cfg)
        b = select_pairs(similarity_matrix(px2, py), cfg)
        assert [(i, j) for i, j, _ in a] == [(i, j) for i, j, _ in b]


class TestSelect:
    def test_diagonal(self):
        S = np.full((3, 3), 0.1) + np.eye(3) * 0.8
        assert [(i, j) for i, j, _ in select_pairs(S)] == [(0, 0), (1, 1), (2, 2)]

    def test_greedy_consumes_column(self):
        S = np.array([[0.9, 0.85], [0.87, 0.2]])
        assert select_pairs(S, MatchConfig(epsilon=0.8)) == [(0, 0, 0.9)]
        assert brute_one_to_one(S, 0.8) == {(0, 0)}

    def test_below_threshold_empty(self):
        assert select_pairs(np.full((3, 4), 0.5)) == []

    def test_strict_threshold(self):
        assert select_pairs(np.array([[0.8]]), MatchConfig(epsilon=0.8)) == []

    def test_ties_break_on_indices(self):
        S = np.full((2, 2), 0.9)
        assert select_pairs(S) == [(0, 0, 0.9), (1, 1, 0.9)]

    def test_one_to_many_repeats_columns(self):
        S = np.array([[0.95, 0.1], [0.9, 0.85], [0.2, 0.3]])
        out = select_pairs(S, MatchConfig(mode=ONE_TO_MANY))
        assert out == [(0, 0, 0.95), (1, 0, 0.9)]

    def test_quantity_limit(self):
        S = np.diag([0.85, 0.99, 0.9])
        out = select_pairs(S, MatchConfig(quantity_limit=2))
        assert out == [(1, 1, 0.99), (2, 2, 0.9)]

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            MatchConfig(epsilon=1.5)
        with pytest.raises(ValidationError):
            MatchConfig(mode="many-to-many")
        with pytest.raises(ValidationError):
            MatchConfig(quantity_limit=0)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 4), st.integers(1, 4), st.floats(0.0, 0.9))
    def test_matches_brute_force(self, seed, n, m, eps):
        S = np.random.default_rng(seed).random((n, m))
        got = {(i, j) for i, j, _ in select_pairs(S, MatchConfig(epsilon=eps))}
        assert got == brute_one_to_one(S, eps)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6), st.integers(1, 6))
    def test_one_to_many_oracle(self, seed, n, m):
        S = np.random.default_rng(seed).random((n, m))
        got = {(i, j) for i, j, _ in select_pairs(S, MatchConfig(epsilon=0.5, mode=ONE_TO_MANY))}
        want = {(i, int(S[i].argmax())) for i in range(n) if S[i].max() > 0.5}
        assert got == want

    @given(st.integers(0, 2 ** 31 - 1), st.floats(0, 1), st.floats(0, 1),
           st.sampled_from([ONE_TO_ONE, ONE_TO_MANY]))
    def test_monotone_in_epsilon(self, seed, e1, e2, mode):
        lo, hi = sorted((e1, e2))
        S = np.random.default_rng(seed).random((6, 5))
        a = select_pairs(S, MatchConfig(epsilon=lo, mode=mode))
        b = select_pairs(S, MatchConfig(epsilon=hi, mode=mode))
        assert len(a) >= len(b)
        if mode == ONE_TO_ONE:
            # greedy visits entries in descending order, so the high-threshold
            # run is the low-threshold run truncated at hi
            assert b == [t for t in a if t[2] > hi]

    @given(st.integers(0, 2 ** 31 - 1))
    def test_injective(self, seed):
        S = np.random.default_rng(seed).random((7, 4))
        out = select_pairs(S, MatchConfig(epsilon=0.1))
        assert len({i for i, _, _ in out}) == len(out) == len({j for _, j, _ in out}) <= 4

    @given(st.integers(0, 2 ** 31 - 1))
    def test_permutation_equivariance(self, seed):
        r = np.random.default_rng(seed)
        px, py = r.normal(size=(5, 6)), r.normal(size=(5, 6))
        masks_x = [np.full((2, 2), k) for k in range(5)]
        perm = r.permutation(5)
        cfg = MatchConfig(epsilon=0.2)
        a = match_rois(masks_x, px, masks_x, py, cfg)
        b = match_rois([masks_x[k] for k in perm], px[perm], masks_x, py, cfg)
        key = lambda ps: sorted((int(p.moving_mask[0, 0]), p.fixed_id) for p in ps)
        assert key(a) == key(b)

    @given(st.integers(0, 2 ** 31 - 1))
    def test_self_matching_identity(self, seed):
        p = np.random.default_rng(seed).normal(size=(5, 8))
        out = select_pairs(similarity_matrix(p, p))
        assert sorted((i, j) for i, j, _ in out) == [(k, k) for k in range(5)]
        assert all(s == pytest.approx(1.0, abs=1e-12) for _, _, s in out)


class TestBuild:
    def test_empty(self):
        assert len(build_pair_set([], [], [])) == 0

    def test_direct_indexing(self):
        mx = [np.zeros((2, 2), bool), np.ones((2, 2), bool)]
        my = [np.eye(2, dtype=bool), np.ones((2, 2), bool)]
        ps = build_pair_set([(0, 1, 0.9)], mx, my)
        assert len(ps) == 1
        assert np.array_equal(ps[0].moving_mask, mx[0]) and np.array_equal(ps[0].fixed_mask, my[1])

    def test_sorted_by_similarity(self):
        m = [np.zeros((1, 1), bool)] * 3
        ps = build_pair_set([(0, 0, 0.95), (1, 1, 0.85), (2, 2, 0.90)], m, m)
        assert [p.similarity for p in ps] == [0.95, 0.90, 0.85]

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            build_pair_set([(3, 0, 0.9)], [np.zeros(1)], [np.zeros(1)])

    def test_threshold_and_injectivity_enforced(self):
        m = [np.zeros((1, 1), bool)] * 2
        with pytest.raises(ValidationError):
            build_pair_set([(0, 0, 0.5)], m, m)
        with pytest.raises(ValidationError):
            build_pair_set([(0, 0, 0.9), (1, 0, 0.85)], m, m)
