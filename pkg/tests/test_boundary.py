import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zbdetect.boundary import (
    BoundaryModelSet,
    ClassBoundary,
    DetectorBounds,
    compute_bounds,
    detect,
    detect_inputs,
    embed,
    fit_boundaries,
    mahalanobis,
    mahalanobis_many,
    reduced_features,
)
from zbdetect.errors import DegenerateClass, DimensionMismatch, DomainError
from zbdetect.head import FeatureExtractor, LabeledDataset, Layer, TrainConfig, ZeroBiasHead, classify, init_model, train
from zbdetect.hypersphere import McConfig, uniform_sphere_sample
from zbdetect.synthetic import SyntheticSpec, gen_clusters


@pytest.fixture(scope="module")
def trained():
    spec = SyntheticSpec(n0=16, known_classes=4, abnormal_classes=2, samples_per_class=300, seed=1)
    tr, va, ab = gen_clusters(spec)
    ex, head = init_model(16, [16], 6, 4, 0)
    res = train(ex, head, tr, va, TrainConfig(epochs=10, lr=0.05))
    return res.extractor, res.head, tr, va, ab


class TestReducedFeatures:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 5))
        head = ZeroBiasHead(np.eye(3), np.zeros(3), np.eye(3))
        np.testing.assert_array_equal(reduced_features(FeatureExtractor(), head, x), x)

    def test_bias_only(self):
        b = np.array([1.0, -2.0, 0.5])
        head = ZeroBiasHead(np.eye(3), b, np.eye(3))
        np.testing.assert_array_equal(reduced_features(FeatureExtractor(), head, np.zeros((3, 4))), np.tile(b[:, None], 4))

    def test_matches_recomputation(self, rng):
        layer = Layer(rng.normal(size=(5, 4)), rng.normal(size=5), "relu")
        head = ZeroBiasHead(rng.normal(size=(3, 5)), rng.normal(size=3), rng.normal(size=(2, 3)))
        x = rng.normal(size=(4, 10))
        expect = head.w0 @ np.maximum(layer.weight @ x + layer.bias[:, None], 0) + head.b[:, None]
        got = reduced_features(FeatureExtractor([layer]), head, x)
        np.testing.assert_allclose(got, expect, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        head = ZeroBiasHead(np.eye(3), np.zeros(3), np.eye(3))
        with pytest.raises(DimensionMismatch):
            reduced_features(FeatureExtractor(), head, np.ones((4, 2)))


class TestMahalanobis:
    def test_at_centroid(self):
        b = ClassBoundary(0, [1.0, 2.0], np.eye(2), 1.0)
        assert mahalanobis([1.0, 2.0], b) == 0.0

    def test_identity_is_euclidean(self, rng):
        c, x = rng.normal(size=4), rng.normal(size=4)
        b = ClassBoundary(0, c, np.eye(4), 1.0)
        assert mahalanobis(x, b) == pytest.approx(np.linalg.norm(x - c), rel=1e-12)

    def test_diagonal(self):
        b = ClassBoundary(0, [0.0, 0.0], np.diag([4.0, 1.0]), 1.0)
        assert mahalanobis([2.0, 0.0], b) == pytest.approx(1.0, abs=1e-15)

    def test_dimension_mismatch(self):
        b = ClassBoundary(0, [0.0, 0.0], np.eye(2), 1.0)
        with pytest.raises(DimensionMismatch):
            mahalanobis([1.0, 2.0, 3.0], b)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            ClassBoundary(0, [0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], 1.0)
        with pytest.raises(DegenerateClass):
            ClassBoundary(0, [0.0, 0.0], np.zeros((2, 2)), 1.0)
        with pytest.raises(DegenerateClass):
            ClassBoundary(0, [0.0, 0.0], np.eye(2), 1.0, precision=2 * np.eye(2))
        with pytest.raises(ValueError):
            ClassBoundary(0, [0.0, 0.0], np.eye(2), -1.0)

    def test_precision_invariant(self, rng):
        a = rng.normal(size=(3, 3))
        b = ClassBoundary(0, np.zeros(3), a @ a.T, 1.0, ridge=0.1)
        np.testing.assert_allclose(b.precision @ (b.covariance + 0.1 * np.eye(3)), np.eye(3), atol=1e-6)


class TestDetect:
    def test_centroid_normal(self, rng):
        cents = rng.normal(size=(3, 4))
        bset = BoundaryModelSet(4, [ClassBoundary(i, c, np.eye(4), 0.5) for i, c in enumerate(cents)])
        for c in cents:
            assert detect(bset, c) == 0

    def test_far_point_abnormal(self):
        c = np.array([0.3, 0.4])
        bset = BoundaryModelSet(2, [ClassBoundary(0, c, np.eye(2), 1.0)])
        assert detect(bset, 1e6 * c) == 1

    def test_empty_set_flags_everything(self):
        assert detect(BoundaryModelSet(2, []), np.zeros(2)) == 1

    def test_dimension_checks(self):
        bset = BoundaryModelSet(2, [ClassBoundary(0, np.zeros(2), np.eye(2), 1.0)])
        with pytest.raises(DimensionMismatch):
            detect(bset, np.zeros(3))
        with pytest.raises(DimensionMismatch):
            BoundaryModelSet(3, [ClassBoundary(0, np.zeros(2), np.eye(2), 1.0)])
        with pytest.raises(ValueError):
            BoundaryModelSet(2, [ClassBoundary(0, np.zeros(2), np.eye(2), 1.0)] * 2)

    @given(st.integers(0, 10_000), st.floats(1.0, 5.0))
    def test_larger_cutoff_never_flips_normal(self, seed, grow):
        r = np.random.default_rng(seed)
        c = r.normal(size=3)
        y = c[:, None] + r.normal(size=(3, 200))
        small = BoundaryModelSet(3, [ClassBoundary(0, c, np.eye(3), 1.5)])
        large = BoundaryModelSet(3, [ClassBoundary(0, c, np.eye(3), 1.5 * grow)])
        assert not np.any((small.detect_many(y) == 0) & (large.detect_many(y) == 1))

    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_covariance_scaling_homogeneity(self, seed, lam):
        r = np.random.default_rng(seed)
        a = r.normal(size=(3, 3))
        cov = a @ a.T + 0.1 * np.eye(3)
        c = r.normal(size=3)
        y = c[:, None] + 2 * r.normal(size=(3, 300))
        base = BoundaryModelSet(3, [ClassBoundary(0, c, cov, 2.0)])
        scaled = BoundaryModelSet(3, [ClassBoundary(0, c, lam * cov, 2.0 / math.sqrt(lam))])
        d = mahalanobis_many(y, base.boundaries[0])
        clear = np.abs(d - 2.0) > 1e-9  # ignore points numerically on the boundary
        np.testing.assert_array_equal(base.detect_many(y)[clear], scaled.detect_many(y)[clear])


def brute_force_cutoffs(ex, head, data, space):
    """Per-class cut-offs recomputed with an explicit loop and a fresh inverse."""
    feats = embed(ex, head, data.x, space)
    labels = classify(head, ex.forward(data.x))
    out = {}
    for k in range(head.c):
        pts = [feats[:, j] for j in range(data.n) if labels[j] == k and data.y[j] == k]
        if not pts:
            continue
        p = np.array(pts).T
        mean = p.mean(axis=1)
        cov = sum(np.outer(v - mean, v - mean) for v in pts) / (len(pts) - 1)
        ridge = 1e-6 * np.trace(cov) / head.n1
        prec = np.linalg.inv(cov + ridge * np.eye(head.n1))
        out[k] = max(math.sqrt((v - mean) @ prec @ (v - mean)) for v in pts)
    return out


class TestFit:
    def test_two_points_single_class(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0]])
        head = ZeroBiasHead(np.eye(2), np.zeros(2), [[1.0, 1.0]])
        bset = fit_boundaries(FeatureExtractor(), head, LabeledDataset(x, [0, 0]), space="raw")
        assert bset.boundaries[0].cutoff > 0
        np.testing.assert_array_equal(bset.detect_many(x), [0, 0])

    @pytest.mark.parametrize("space", ["sphere", "raw"])
    def test_fitting_set_inside(self, trained, space):
        ex, head, tr, _, _ = trained
        bset = fit_boundaries(ex, head, tr, space=space)
        correct = classify(head, ex.forward(tr.x)) == tr.y
        assert np.all(detect_inputs(ex, head, bset, tr.x)[correct] == 0)
        # one sample at a time gives the same answers
        for j in np.flatnonzero(correct)[:50]:
            assert detect_inputs(ex, head, bset, tr.x[:, j])[0] == 0

    @pytest.mark.parametrize("space", ["sphere", "raw"])
    def test_cutoffs_match_brute_force(self, trained, space):
        ex, head, tr, _, _ = trained
        bset = fit_boundaries(ex, head, tr, space=space)
        expect = brute_force_cutoffs(ex, head, tr, space)
        assert sorted(expect) == [b.class_id for b in bset.boundaries]
        for b in bset.boundaries:
            assert b.cutoff == pytest.approx(expect[b.class_id], abs=1e-9, rel=1e-9)

    def test_training_fpr_at_most_alpha(self, trained):
        ex, head, tr, _, _ = trained
        bset = fit_boundaries(ex, head, tr)
        alpha_train = 1 - np.mean(classify(head, ex.forward(tr.x)) == tr.y)
        assert detect_inputs(ex, head, bset, tr.x).mean() <= alpha_train

    def test_validation_fpr_close_to_alpha(self, trained):
        ex, head, tr, va, _ = trained
        bset = fit_boundaries(ex, head, tr)
        alpha = 1 - np.mean(classify(head, ex.forward(va.x)) == va.y)
        assert detect_inputs(ex, head, bset, va.x).mean() <= alpha + 0.02

    def test_uniform_miss_rate_matches_estimate(self, trained):
        ex, head, tr, _, _ = trained
        bset = fit_boundaries(ex, head, tr)
        bounds = compute_bounds(bset, 0.05, McConfig(20000, seed=11))
        pts = uniform_sphere_sample(20000, head.n1, 999)
        miss = 1 - bset.detect_many(pts.T).mean()
        hw = 1.96 * math.sqrt(miss * (1 - miss) / 20000)
        assert abs(miss - bounds.ru_fnr) <= 3 * math.hypot(hw, bounds.ru_fnr_halfwidth)

    def test_ridge_zero_needs_enough_samples(self):
        x = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 0.5], [0.2, 0.1, 0.3]])
        head = ZeroBiasHead(np.eye(3), np.zeros(3), [[1.0, 1.0, 1.0]])
        with pytest.raises(DegenerateClass):
            fit_boundaries(FeatureExtractor(), head, LabeledDataset(x, [0, 0, 0]), ridge=0.0, space="raw")

    def test_class_without_correct_samples_skipped(self, caplog):
        head = ZeroBiasHead(np.eye(2), np.zeros(2), [[1.0, 0.0], [0.0, 1.0]])
        x = np.array([[1.0, 2.0], [0.1, 0.2]])
        bset = fit_boundaries(FeatureExtractor(), head, LabeledDataset(x, [0, 1]), space="raw")
        assert [b.class_id for b in bset.boundaries] == [0]
        assert "class 1" in caplog.text

    def test_quantile_mode(self, trained):
        ex, head, tr, _, _ = trained
        full = fit_boundaries(ex, head, tr)
        q = fit_boundaries(ex, head, tr, cutoff_quantile=0.9)
        for a, b in zip(full.boundaries, q.boundaries):
            assert b.cutoff < a.cutoff
        with pytest.raises(DomainError):
            fit_boundaries(ex, head, tr, cutoff_quantile=0.0)


class TestBounds:
    def test_perfect(self):
        b = compute_bounds(BoundaryModelSet(3, []), 0.0)
        assert (b.ru_fnr, b.tpr_lower, b.detectable) == (0.0, 1.0, True)

    def test_boundary_case_not_detectable(self):
        b = DetectorBounds(0.5, 0.5)
        assert b.tpr_lower == 0.5 == b.fpr_upper and not b.detectable

    def test_fields(self):
        b = DetectorBounds(0.1, 0.3)
        assert (b.fpr_upper, b.fnr_upper, b.tpr_lower) == (0.1, 0.3, 0.7)
        assert b.to_dict()["detectable"] is True

    def test_domain(self):
        with pytest.raises(DomainError):
            DetectorBounds(1.5, 0.1)
        with pytest.raises(DomainError):
            compute_bounds(BoundaryModelSet(2, []), -0.1)
