import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import disk
from roireg.errors import DimensionError, ValidationError
from roireg.grid import dice
from roireg.segment import (PosteriorGrid, QuantileSegmenter, RoiFilterConfig, SegmenterConfig, candidate_rois,
                            filter_rois, fuse_posteriors, overlap_ratio, posteriors_to_pairs, segment_everything)


def test_quantiles_default():
    assert np.allclose(SegmenterConfig().quantiles, np.linspace(0.1, 0.9, 8))


def test_non_2d_rejected():
    with pytest.raises(DimensionError):
        segment_everything(np.zeros((3, 4, 4)))


def test_constant_image_gives_no_candidates():
    assert candidate_rois(np.full((64, 64), 3.0)) == []


def test_single_disk_recovered():
    m = disk((64, 64), (30, 33), 9.8)
    assert 290 <= m.sum() <= 310
    img = np.where(m, 1.0, 0.1)
    cands = candidate_rois(img)
    assert max(dice(c, m) for c in cands) >= 0.95


def test_two_blobs_give_disjoint_candidates():
    a = disk((64, 64), (16, 16), 10)
    b = disk((64, 64), (44, 44), 10)
    img = np.where(a, 0.9, 0.0) + np.where(b, 0.5, 0.0)
    cands = candidate_rois(img)
    assert len(cands) >= 2
    hit_a = [c for c in cands if dice(c, a) > 0.9]
    hit_b = [c for c in cands if dice(c, b) > 0.9]
    assert hit_a and hit_b and not (hit_a[0] & hit_b[0]).any()


def test_components_are_four_connected():
    img = np.zeros((8, 8))
    img[2, 2] = img[3, 3] = 1.0  # diagonal neighbours only
    masks = segment_everything(img, SegmenterConfig(n_thresholds=1, q_low=0.5, q_high=0.5))
    assert len(masks) == 2


def test_candidate_order_threshold_then_discovery():
    img = np.zeros((10, 10))
    img[1, 1] = 1.0
    img[8, 8] = 0.5
    # thresholds at the 0.5 quantile (0.0) and the max (1.0 is excluded by >)
    masks = segment_everything(img, SegmenterConfig(n_thresholds=2, q_low=0.5, q_high=0.995))
    assert [tuple(np.argwhere(m)[0]) for m in masks][:2] == [(1, 1), (8, 8)]


class TestFilter:
    def test_small_dropped(self):
        m = np.zeros((30, 30), bool)
        m[:10, :15] = True  # 150 voxels
        assert filter_rois([m]) == []

    def test_duplicate_dropped(self):
        m = np.zeros((40, 40), bool)
        m[:20, :20] = True
        out = filter_rois([m, m.copy()])
        assert len(out) == 1

    def test_disjoint_kept(self):
        a = np.zeros((60, 60), bool)
        b = a.copy()
        a[:20, :20] = True
        b[30:50, 30:50] = True
        assert len(filter_rois([a, b])) == 2

    def test_overlap_ratio_uses_smaller_area(self):
        a = np.zeros((10, 10), bool)
        b = a.copy()
        a[:, :] = True
        b[:2, :2] = True
        assert overlap_ratio(a, b) == 1.0

    def test_bad_config(self):
        with pytest.raises(ValidationError):
            RoiFilterConfig(min_area=10, max_area=5)

    @given(st.integers(0, 2 ** 31 - 1))
    def test_outputs_respect_limits(self, seed):
        r = np.random.default_rng(seed)
        cands = []
        for _ in range(8):
            m = np.zeros((40, 40), bool)
            r0, c0 = r.integers(0, 30, 2)
            h, w = r.integers(3, 25, 2)
            m[r0:r0 + h, c0:c0 + w] = True
            cands.append(m)
        cfg = RoiFilterConfig(20, 400, 0.5)
        out = filter_rois(cands, cfg)
        assert all(20 <= m.sum() <= 400 for m in out)
        for i in range(len(out)):
            for j in range(i):
                assert overlap_ratio(out[i], out[j]) <= 0.5

    @given(st.integers(0, 2 ** 31 - 1))
    def test_segmentation_is_deterministic(self, seed):
        img = np.random.default_rng(seed).random((24, 24))
        a = segment_everything(img)
        b = segment_everything(img.copy())
        assert len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_callable_segmenter(self):
        seg = QuantileSegmenter()
        img = np.where(disk((32, 32), (16, 16), 6), 1.0, 0.0)
        assert len(seg(img)) == len(segment_everything(img))


def _random_posterior(r, shape=(8, 8), k=4):
    p = r.random(shape + (k,))
    return PosteriorGrid(p / p.sum(axis=-1, keepdims=True))


class TestFusion:
    def test_uniform_is_identity(self):
        r = np.random.default_rng(0)
        py = _random_posterior(r)
        px = PosteriorGrid(np.full((8, 8, 4), 0.25))
        assert np.allclose(fuse_posteriors(px, py).probs, py.probs, atol=1e-12)

    def test_one_hot_agreement(self):
        p = np.zeros((2, 2, 3))
        p[..., 2] = 1.0
        out = fuse_posteriors(PosteriorGrid(p), PosteriorGrid(p)).probs
        assert np.array_equal(out, p)

    def test_hand_normalised(self):
        px = PosteriorGrid(np.array([[[0.6, 0.4]]]))
        py = PosteriorGrid(np.array([[[0.5, 0.5]]]))
        # product (0.30, 0.20) over 0.50
        assert np.allclose(fuse_posteriors(px, py).probs, [[[0.6, 0.4]]])

    def test_contradiction_falls_back_to_uniform(self):
        px = PosteriorGrid(np.array([[[1.0, 0.0, 0.0]]]))
        py = PosteriorGrid(np.array([[[0.0, 1.0, 0.0]]]))
        assert np.allclose(fuse_posteriors(px, py).probs, 1 / 3)

    def test_mismatch(self):
        r = np.random.default_rng(0)
        with pytest.raises(DimensionError):
            fuse_posteriors(_random_posterior(r, k=3), _random_posterior(r, k=4))

    def test_posterior_validation(self):
        with pytest.raises(ValidationError):
            PosteriorGrid(np.array([[[0.5, 0.6]]]))

    @given(st.integers(0, 2 ** 31 - 1))
    def test_symmetric_and_normalised(self, seed):
        r = np.random.default_rng(seed)
        px, py = _random_posterior(r), _random_posterior(r)
        a = fuse_posteriors(px, py).probs
        b = fuse_posteriors(py, px).probs
        assert np.allclose(a, b, atol=1e-12)
        assert np.allclose(a.sum(axis=-1), 1.0, atol=1e-6)


class TestPosteriorPairs:
    def test_self_pairs(self):
        r = np.random.default_rng(3)
        p = _random_posterior(r)
        ps = posteriors_to_pairs(p, p)
        labels = p.probs.argmax(-1)
        assert len(ps) == len(np.unique(labels))
        for pair in ps:
            assert pair.similarity == 1.0
            assert np.array_equal(pair.moving_mask, pair.fixed_mask)

    def test_class_absent_in_one(self):
        px = np.zeros((2, 2, 4))
        px[..., 3] = 1.0
        px[0, 0] = [1, 0, 0, 0]
        py = np.zeros((2, 2, 4))
        py[..., 0] = 1.0
        ps = posteriors_to_pairs(PosteriorGrid(px), PosteriorGrid(py))
        assert [p.moving_id for p in ps] == [0]

    def test_explicit_argmax(self):
        px = np.array([[[0.9, 0.1], [0.2, 0.8]], [[0.4, 0.6], [0.7, 0.3]]])
        py = np.array([[[0.1, 0.9], [0.6, 0.4]], [[0.3, 0.7], [0.55, 0.45]]])
        ps = posteriors_to_pairs(PosteriorGrid(px), PosteriorGrid(py))
        assert np.array_equal(ps[0].moving_mask, [[True, False], [False, True]])
        assert np.array_equal(ps[0].fixed_mask, [[False, True], [False, True]])
        assert np.array_equal(ps[1].moving_mask, [[False, True], [True, False]])
        assert np.array_equal(ps[1].fixed_mask, [[True, False], [True, False]])

    def test_k_mismatch(self):
        r = np.random.default_rng(0)
        with pytest.raises(DimensionError):
            posteriors_to_pairs(_random_posterior(r, k=2), _random_posterior(r, k=3))
