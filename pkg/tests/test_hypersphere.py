import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import betainc

from zbdetect.boundary import BoundaryModelSet, ClassBoundary
from zbdetect.errors import DimensionMismatch, DomainError
from zbdetect.hypersphere import (
    CapSpec,
    McConfig,
    capacity_table,
    estimate_ru_fnr,
    max_classes,
    reg_inc_beta,
    sigma_cap_ratio,
    uniform_sphere_sample,
)

SIGMAS = np.linspace(math.pi / 100, math.pi / 2, 50)


class TestRegIncBeta:
    def test_endpoints(self):
        assert reg_inc_beta(0.0, 2.5, 0.7) == 0.0
        assert reg_inc_beta(1.0, 2.5, 0.7) == 1.0

    def test_symmetric_midpoint(self):
        assert reg_inc_beta(0.5, 0.5, 0.5) == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("x", [0.1, 0.25, 0.9])
    def test_arcsine_closed_form(self, x):
        assert reg_inc_beta(x, 0.5, 0.5) == pytest.approx(2 / math.pi * math.asin(math.sqrt(x)), abs=1e-10)

    @given(st.floats(0, 1), st.floats(0.05, 200), st.floats(0.05, 200))
    def test_matches_reference(self, x, a, b):
        assert reg_inc_beta(x, a, b) == pytest.approx(float(betainc(a, b, x)), abs=1e-10)

    @given(st.floats(0, 1), st.floats(0.05, 100), st.floats(0.05, 100))
    def test_reflection(self, x, a, b):
        assert reg_inc_beta(x, a, b) + reg_inc_beta(1 - x, b, a) == pytest.approx(1.0, abs=1e-10)

    def test_monotone_in_x(self):
        values = [reg_inc_beta(x, 3.5, 0.5) for x in np.linspace(0, 1, 201)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("args", [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -2), (0.5, math.inf, 1)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            reg_inc_beta(*args)


class TestCapRatio:
    @pytest.mark.parametrize("m", range(2, 65))
    def test_hemisphere(self, m):
        assert sigma_cap_ratio(m, math.pi / 2) == 0.5
        assert max_classes(m, math.pi / 2) == 2

    def test_circle(self):
        for s in SIGMAS:
            assert sigma_cap_ratio(2, s) == pytest.approx(s / math.pi, abs=1e-10)
        assert sigma_cap_ratio(2, math.pi / 4) == pytest.approx(0.25, abs=1e-12)

    def test_sphere(self):
        for s in SIGMAS:
            assert sigma_cap_ratio(3, s) == pytest.approx((1 - math.cos(s)) / 2, abs=1e-10)

    def test_m3_sixty_degrees(self):
        assert sigma_cap_ratio(3, math.pi / 3) == pytest.approx(0.25, abs=1e-12)
        assert max_classes(3, math.pi / 3) == 4

    def test_strictly_increasing_in_sigma(self):
        for m in (2, 5, 16, 64):
            r = [sigma_cap_ratio(m, s) for s in SIGMAS]
            assert all(b > a for a, b in zip(r, r[1:]))

    def test_strictly_decreasing_in_m(self):
        for s in SIGMAS[:-1]:
            r = [sigma_cap_ratio(m, s) for m in range(2, 65)]
            assert all(b < a for a, b in zip(r, r[1:]))

    def test_max_classes_nondecreasing_in_m(self):
        for s in SIGMAS:
            caps = [max_classes(m, s) for m in range(2, 65)]
            assert all(b >= a for a, b in zip(caps, caps[1:]))
            assert min(caps) >= 2

    def test_ratio_range(self):
        for m in (2, 8, 128):
            for s in SIGMAS:
                assert 0 < sigma_cap_ratio(m, s) <= 0.5

    @pytest.mark.parametrize("m,sigma", [(1, 0.5), (3, 0.0), (3, 2.0), (2.5, 0.3)])
    def test_spec_validation(self, m, sigma):
        with pytest.raises(DomainError):
            CapSpec(m, sigma)

    def test_underflow_reported(self):
        with pytest.raises(DomainError):
            max_classes(4096, 0.01)

    def test_capacity_table(self):
        rows = capacity_table([2, 3], [math.pi / 3])
        assert rows[1] == (3, math.pi / 3, sigma_cap_ratio(3, math.pi / 3), 4)


class TestSphereSampling:
    def test_unit_norms(self):
        pts = uniform_sphere_sample(5000, 7, 0)
        assert np.abs(np.linalg.norm(pts, axis=1) - 1).max() <= 1e-12

    def test_coordinate_means(self):
        pts = uniform_sphere_sample(20000, 3, 1)
        assert np.abs(pts.mean(axis=0)).max() <= 0.02

    def test_quadrant_fraction(self):
        pts = uniform_sphere_sample(20000, 2, 2)
        angle = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * np.pi)
        assert abs(np.mean(angle < np.pi / 2) - 0.25) <= 0.01

    def test_deterministic(self):
        np.testing.assert_array_equal(uniform_sphere_sample(10, 4, 9), uniform_sphere_sample(10, 4, 9))

    def test_domain(self):
        with pytest.raises(DomainError):
            uniform_sphere_sample(0, 3, 0)
        with pytest.raises(DomainError):
            uniform_sphere_sample(3, 1, 0)


def ball(centroid, cutoff, class_id=0):
    d = len(centroid)
    return ClassBoundary(class_id, centroid, np.eye(d), cutoff)


class TestRuFnr:
    def test_empty_set(self):
        assert estimate_ru_fnr(BoundaryModelSet(4, [])) == (0.0, 0.0)

    def test_everything_captured(self):
        ratio, hw = estimate_ru_fnr(BoundaryModelSet(4, [ball(np.zeros(4), 1e9)]), McConfig(2000))
        assert ratio == 1.0 and hw == 0.0

    def test_euclidean_ball_is_a_cap(self):
        m, sigma = 8, math.pi / 4
        centroid = np.zeros(m)
        centroid[0] = 1.0
        cutoff = math.sqrt(2 - 2 * math.cos(sigma))
        ratio, hw = estimate_ru_fnr(BoundaryModelSet(m, [ball(centroid, cutoff)]), McConfig(20000, seed=3))
        assert abs(ratio - sigma_cap_ratio(m, sigma)) <= 3 * hw

    def test_adding_class_never_decreases(self, rng):
        classes = [ball(c / np.linalg.norm(c), 0.8, i) for i, c in enumerate(rng.normal(size=(4, 5)))]
        previous = 0.0
        for k in range(1, 5):
            ratio, _ = estimate_ru_fnr(BoundaryModelSet(5, classes[:k]), McConfig(5000, seed=1))
            assert 0 <= ratio <= 1 and ratio >= previous
            previous = ratio

    def test_seed_determinism_and_workers(self, rng):
        bset = BoundaryModelSet(3, [ball(np.array([1.0, 0, 0]), 1.0)])
        a = estimate_ru_fnr(bset, McConfig(9000, seed=5, workers=3))
        b = estimate_ru_fnr(bset, McConfig(9000, seed=5, workers=3))
        assert a == b
        serial = estimate_ru_fnr(bset, McConfig(9000, seed=5, workers=1))
        assert abs(serial[0] - a[0]) <= 3 * math.hypot(serial[1], a[1])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            estimate_ru_fnr(BoundaryModelSet(3, [ball(np.ones(3), 1.0)]), McConfig(10), dim=4)
