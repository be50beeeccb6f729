import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadricmix.losses import (
    cross_entropy,
    full_class_probs,
    inverse_frequency_weights,
    lovasz_softmax,
    occupancy_loss,
)


def jaccard_loss_of_set(fg, mistakes):
    """Set-function Jaccard loss for one class given the mispredicted voxel set."""
    gt = {i for i, f in enumerate(fg) if f}
    union = gt | mistakes
    if not union:
        return Fraction(0)
    return 1 - Fraction(len(gt - mistakes), len(union))


def lovasz_by_threshold_integral(probs, labels):
    """Lovász extension as the integral over thresholds of the set function.

    For errors ``m`` in [0, 1], the extension equals the integral from 0 to 1
    of ``Delta({i : m_i >= t}) dt``; with finitely many distinct errors the
    integral is an exact finite sum.  Averaged over classes present in
    ``labels``.
    """
    n, C = len(labels), len(probs[0])
    terms = []
    for k in sorted(set(labels)):
        fg = [lab == k for lab in labels]
        err = [abs(Fraction(int(fg[i])) - probs[i][k]) for i in range(n)]
        levels = sorted(set(err) | {Fraction(0)})
        total = Fraction(0)
        for a, b in zip(levels[:-1], levels[1:]):
            # on (a, b] the superlevel set {m_i >= t} is {m_i >= b}
            mistakes = {i for i in range(n) if err[i] >= b}
            total += (b - a) * jaccard_loss_of_set(fg, mistakes)
        terms.append(total)
    return sum(terms) / len(terms)


class TestFullClassProbs:
    def test_examples(self):
        np.testing.assert_array_equal(full_class_probs(0.0, [0.6, 0.4]), [1, 0, 0])
        np.testing.assert_array_equal(full_class_probs(1.0, [0, 1]), [0, 0, 1])
        np.testing.assert_allclose(full_class_probs(0.5, [0.6, 0.4]), [0.5, 0.3, 0.2])

    @given(st.floats(0, 1), st.lists(st.floats(0.01, 1), min_size=1, max_size=6))
    def test_sums_to_one(self, p, w):
        sem = np.array(w) / np.sum(w)
        assert full_class_probs(p, sem).sum() == pytest.approx(1.0, abs=1e-12)


class TestCrossEntropy:
    def test_perfect(self):
        v, _ = cross_entropy(np.eye(3), [0, 1, 2])
        assert v == 0.0

    def test_uniform_over_17(self):
        v, _ = cross_entropy(np.full((4, 17), 1 / 17), [0, 3, 16, 5])
        assert v == pytest.approx(2.833213344056216, rel=1e-12)

    def test_two_voxels(self):
        probs = np.array([[0.5, 0.5, 0.0], [0.25, 0.0, 0.75]])
        v, _ = cross_entropy(probs, [1, 0])
        assert v == pytest.approx(1.039720770839918, rel=1e-12)

    def test_zero_probability_is_floored(self):
        v, g = cross_entropy(np.array([[1.0, 0.0]]), [1])
        assert v == pytest.approx(-math.log(1e-12))
        assert np.all(np.isfinite(g))

    def test_gradient(self, rng):
        p = rng.dirichlet(np.ones(4), size=6)
        y = rng.integers(0, 4, size=6)
        w = rng.uniform(0.5, 2, size=4)
        _, g = cross_entropy(p, y, w)
        h = 1e-7
        for i, k in itertools.product(range(6), range(4)):
            d = np.zeros_like(p)
            d[i, k] = h
            fd = (cross_entropy(p + d, y, w)[0] - cross_entropy(p - d, y, w)[0]) / (2 * h)
            assert g[i, k] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.eye(2), [0, 2])

    def test_inverse_frequency_weights(self):
        w = inverse_frequency_weights(np.array([0, 0, 0, 1]), 3)
        np.testing.assert_allclose(w, [4 / 6, 2.0, 0.0])


class TestLovasz:
    def test_perfect(self):
        v, _ = lovasz_softmax(np.eye(3)[[0, 2, 1]], [0, 2, 1])
        assert v == 0.0

    def test_total_miss(self):
        v, _ = lovasz_softmax(np.array([[1.0, 0.0]]), [1])
        assert v == 1.0

    def test_crafted_case(self):
        probs = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4], [0.1, 0.9]])
        labels = [0, 1, 1, 0]
        exact = lovasz_by_threshold_integral(
            [[Fraction(x).limit_denominator(100) for x in row] for row in probs], labels)
        assert lovasz_softmax(probs, labels)[0] == pytest.approx(float(exact), abs=1e-12)

    @given(st.integers(0, 10_000))
    def test_matches_integral_definition(self, seed):
        rng = np.random.default_rng(seed)
        n, C = int(rng.integers(1, 7)), int(rng.integers(2, 5))
        q = rng.integers(1, 9, size=(n, C))
        probs_f = [[Fraction(int(v), int(row.sum())) for v in row] for row in q]
        labels = rng.integers(0, C, size=n).tolist()
        probs = np.array([[float(v) for v in row] for row in probs_f])
        assert lovasz_softmax(probs, labels)[0] == pytest.approx(
            float(lovasz_by_threshold_integral(probs_f, labels)), abs=1e-12)

    def test_gradient_is_piecewise_slope(self, rng):
        p = rng.dirichlet(np.ones(3), size=5)
        y = np.array([0, 1, 2, 1, 0])
        v, g = lovasz_softmax(p, y)
        d = rng.normal(size=p.shape) * 1e-7
        assert lovasz_softmax(p + d, y)[0] - v == pytest.approx(np.sum(g * d), rel=1e-5)

    def test_all_classes_option(self):
        p = np.array([[0.7, 0.2, 0.1], [0.4, 0.5, 0.1]])
        present, _ = lovasz_softmax(p, [0, 1])
        every, _ = lovasz_softmax(p, [0, 1], present_classes_only=False)
        assert every != present


class TestOccupancyLoss:
    def test_chain_rule(self, rng):
        p_occ = rng.uniform(0.05, 0.95, size=7)
        p_sem = rng.dirichlet(np.ones(3), size=7)
        y = rng.integers(0, 4, size=7)
        rep = occupancy_loss(p_occ, p_sem, y)
        assert rep.total == pytest.approx(rep.ce + rep.lovasz)
        h = 1e-7
        for i in range(7):
            d = np.zeros(7)
            d[i] = h
            fd = (occupancy_loss(p_occ + d, p_sem, y).total
                  - occupancy_loss(p_occ - d, p_sem, y).total) / (2 * h)
            assert rep.grad_occ[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)
