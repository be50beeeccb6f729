import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_set
from gradcheck import analytic, max_relative_error, numeric, random_config
from quadricmix.field import (
    NumericalError,
    all_pairs,
    backward_pairs,
    evaluate_field,
    field_gradients,
    forward_pairs,
    gaussian_occupancy,
    local_coords,
    mixture_occupancy,
    mixture_semantics,
    quadric_occupancy,
    sample,
)
from quadricmix.primitives import GaussianPrimitive, PrimitiveSet, Superquadric

IDENT = [1.0, 0.0, 0.0, 0.0]
QZ90 = [math.sqrt(0.5), 0.0, 0.0, math.sqrt(0.5)]


def sq(position=(0, 0, 0), scale=(1, 1, 1), rot=IDENT, opacity=1.0, sem=(1.0, 0.0), e=(1.0, 1.0)):
    return Superquadric(position, scale, rot, opacity, list(sem), eps1=e[0], eps2=e[1])


def blob_with_alpha(alpha, sem=(1.0, 0.0), opacity=1.0):
    """Sphere at the origin whose occupancy at (1, 0, 0) is ``alpha``."""
    # exp(-f) = alpha at distance 1 along x  =>  f = (1/s)^2 = -ln(alpha)
    s = 1.0 / math.sqrt(-math.log(alpha))
    return sq(scale=(s, s, s), sem=sem, opacity=opacity)


class TestLocalCoords:
    def test_center(self):
        np.testing.assert_array_equal(local_coords([1, 2, 3], [1, 2, 3], QZ90), [0, 0, 0])

    def test_identity(self):
        np.testing.assert_array_equal(local_coords([1, 2, 3], [0, 0, 0], IDENT), [1, 2, 3])

    def test_quarter_turn(self):
        np.testing.assert_allclose(local_coords([1, 0, 0], [0, 0, 0], QZ90), [0, 1, 0], atol=1e-15)


class TestPrimitiveOccupancy:
    def test_quadric_center(self):
        assert quadric_occupancy([0.5, 1, 2], sq(position=(0.5, 1, 2), e=(0.3, 1.7))) == 1.0

    def test_quadric_surface(self):
        assert quadric_occupancy([1, 0, 0], sq()) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_quadric_small_exponent(self):
        # exp(-3 * 0.9**20), extended-precision oracle
        a = quadric_occupancy([0.9, 0.9, 0.9], sq(e=(0.1, 0.1)))
        assert a == pytest.approx(0.694384134435812, rel=1e-12)

    def test_gaussian_values(self):
        g = GaussianPrimitive([0, 0, 0], [1, 1, 1], IDENT, 1.0, [1.0])
        assert gaussian_occupancy([0, 0, 0], g) == 1.0
        for axis in np.eye(3):
            assert gaussian_occupancy(axis, g) == pytest.approx(math.exp(-0.5), rel=1e-15)

    def test_ellipsoid_equals_gaussian(self, rng):
        s = np.array([0.7, 1.3, 2.1])
        q = rng.normal(size=4)
        Q = Superquadric([1, -1, 0.5], s, q, 1.0, [1.0], eps1=1.0, eps2=1.0)
        G = GaussianPrimitive([1, -1, 0.5], s / math.sqrt(2), q, 1.0, [1.0])
        x = rng.normal(size=(2000, 3)) * 2
        np.testing.assert_allclose(quadric_occupancy(x, Q), gaussian_occupancy(x, G),
                                   rtol=0, atol=1e-12)


class TestMixture:
    def test_single_primitive_identity(self, rng):
        Q = sq(position=(0.2, 0, 0), e=(0.6, 1.4))
        x = rng.normal(size=(50, 3))
        np.testing.assert_allclose(mixture_occupancy(x, [Q]), quadric_occupancy(x, Q),
                                   rtol=0, atol=1e-15)

    def test_two_halves(self):
        p = mixture_occupancy(np.array([[1.0, 0, 0]]), [blob_with_alpha(0.5), blob_with_alpha(0.5)])
        assert p[0] == pytest.approx(0.75, abs=1e-12)

    def test_absorbing(self, rng):
        prims = [sq(position=(0, 0, 0)), sq(position=(5, 5, 5))]
        # alpha is clamped just below 1 to keep log(1 - alpha) finite
        assert mixture_occupancy(np.zeros((1, 3)), prims)[0] == pytest.approx(1.0, abs=1e-12)

    @given(st.integers(0, 10_000))
    def test_monotone_under_addition(self, seed):
        rng = np.random.default_rng(seed)
        ps = random_set(rng, n=4, spread=1.5)
        x = rng.normal(size=(40, 3)) * 2
        prev = np.zeros(len(x))
        for k in range(1, 5):
            cur = mixture_occupancy(x, ps.subset(np.arange(k)))
            assert np.all(cur >= prev - 1e-12)
            prev = cur

    @given(st.integers(0, 10_000))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        ps = random_set(rng, n=5, spread=1.5)
        x = rng.normal(size=(40, 3)) * 2
        perm = rng.permutation(5)
        a = evaluate_field(x, ps)
        b = evaluate_field(x, ps.subset(perm))
        np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-12)

    @given(st.integers(0, 10_000))
    def test_outputs_are_probabilities(self, seed):
        rng = np.random.default_rng(seed)
        ps = random_set(rng, n=3, spread=2.0)
        p_occ, p_sem = evaluate_field(rng.normal(size=(30, 3)) * 3, ps)
        assert np.all((p_occ >= 0) & (p_occ <= 1))
        np.testing.assert_allclose(p_sem.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(p_sem >= 0)


class TestSemantics:
    def test_one_primitive_gives_its_distribution(self):
        Q = sq(sem=(0.2, 0.8), opacity=0.3)
        np.testing.assert_allclose(mixture_semantics(np.array([[0.3, 0, 0]]), [Q])[0], [0.2, 0.8])

    def test_symmetric_average(self):
        prims = [blob_with_alpha(0.4, sem=(1, 0)), blob_with_alpha(0.4, sem=(0, 1))]
        np.testing.assert_allclose(mixture_semantics(np.array([[1.0, 0, 0]]), prims)[0], [0.5, 0.5])

    def test_weighted_average(self):
        prims = [blob_with_alpha(0.3, sem=(1, 0)), blob_with_alpha(0.1, sem=(0, 1))]
        np.testing.assert_allclose(mixture_semantics(np.array([[1.0, 0, 0]]), prims)[0],
                                   [0.75, 0.25], atol=1e-14)

    def test_uniform_far_away(self):
        prims = [sq(sem=(1.0, 0.0))]
        np.testing.assert_array_equal(mixture_semantics(np.array([[50.0, 0, 0]]), prims)[0],
                                      [0.5, 0.5])

    def test_opacity_weights_semantics_not_occupancy(self):
        a = [blob_with_alpha(0.5, sem=(1, 0), opacity=1.0), blob_with_alpha(0.5, sem=(0, 1), opacity=0.25)]
        p_occ, p_sem = evaluate_field(np.array([[1.0, 0, 0]]), a)
        assert p_occ[0] == pytest.approx(0.75, abs=1e-12)
        np.testing.assert_allclose(p_sem[0], [0.8, 0.2], atol=1e-12)

    def test_sample_single_point(self):
        s = sample([1.0, 0, 0], [blob_with_alpha(0.5), blob_with_alpha(0.5)])
        assert s.p_occ == pytest.approx(0.75)


class TestPairEngine:
    @pytest.mark.parametrize("kind", ["superquadric", "gaussian"])
    @pytest.mark.parametrize("opacity_scaled", [False, True])
    def test_all_pairs_match_reference(self, rng, kind, opacity_scaled):
        ps = random_set(rng, n=6, kind=kind, spread=2)
        x = rng.normal(size=(100, 3)) * 2
        cache = forward_pairs(x, ps, *all_pairs(100, 6), opacity_scaled=opacity_scaled)
        p_occ, p_sem = evaluate_field(x, ps, opacity_scaled)
        np.testing.assert_allclose(cache.p_occ, p_occ, rtol=0, atol=1e-14)
        np.testing.assert_allclose(cache.p_sem, p_sem, rtol=0, atol=1e-14)

    def test_unsorted_pairs_accepted(self, rng):
        ps = random_set(rng, n=3)
        x = rng.normal(size=(10, 3))
        pt, prim = all_pairs(10, 3)
        order = rng.permutation(len(pt))
        a = forward_pairs(x, ps, pt[order], prim[order])
        b = forward_pairs(x, ps, pt, prim)
        np.testing.assert_array_equal(a.p_occ, b.p_occ)

    def test_cutoff_drops_far_pairs(self, rng):
        ps = random_set(rng, n=3)
        x = rng.normal(size=(50, 3)) * 3
        cache = forward_pairs(x, ps, *all_pairs(50, 3), f_cut=12.0)
        assert np.all(cache.f < 12.0)
        assert len(cache.pt) < 150

    def test_nonfinite_upstream_gradient(self, rng):
        ps = random_set(rng, n=2)
        x = rng.normal(size=(4, 3))
        cache = forward_pairs(x, ps, *all_pairs(4, 2))
        with pytest.raises(NumericalError):
            backward_pairs(cache, np.array([np.nan, 0, 0, 0]), np.zeros((4, 3)))


class TestGradients:
    def test_center_position_gradient_vanishes(self):
        Q = sq(position=(0.3, -0.2, 0.1), e=(0.7, 1.3))
        x = np.array([[0.3, -0.2, 0.1]])
        g = field_gradients(x, np.ones(1), np.zeros((1, 2)), [Q])
        np.testing.assert_allclose(g.position, 0.0, atol=1e-15)

    def test_opacity_absent_from_occupancy(self, rng):
        ps = random_set(rng, n=3)
        x = rng.normal(size=(20, 3))
        g = field_gradients(x, np.ones(20), np.zeros((20, 3)), ps)
        np.testing.assert_array_equal(g.opacity, 0.0)

    def test_opacity_enters_occupancy_when_scaled(self, rng):
        ps = random_set(rng, n=3)
        x = rng.normal(size=(20, 3))
        g = field_gradients(x, np.ones(20), np.zeros((20, 3)), ps, opacity_scaled=True)
        assert np.all(g.opacity > 0)

    @pytest.mark.parametrize("seed", range(12))
    def test_total_loss_gradient(self, seed):
        ps, logits, x, y, scaled = random_config(seed)
        err = max_relative_error(analytic(ps, logits, x, y, scaled),
                                 numeric(ps, logits, x, y, scaled))
        assert err < 1e-4

    def test_gradient_with_culled_pairs(self, rng):
        """Gradients through a subset of pairs match the full computation on that subset."""
        ps = random_set(rng, n=4, spread=3)
        x = rng.normal(size=(30, 3)) * 3
        go, gs = rng.normal(size=30), rng.normal(size=(30, 3))
        pairs = all_pairs(30, 4)
        full = field_gradients(x, go, gs, ps, pairs=pairs)
        cut = backward_pairs(forward_pairs(x, ps, *pairs, f_cut=80.0), go, gs)
        for k, v in full.as_dict().items():
            np.testing.assert_allclose(cut.as_dict()[k], v, rtol=1e-12, atol=1e-15)
