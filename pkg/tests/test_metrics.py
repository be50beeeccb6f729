import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadricmix.metrics import ConfusionMatrix, confusion, evaluate, iou_binary, miou, per_class_iou
from quadricmix.rasterizer import GridSpec, OccupancyGrid
from quadricmix.scenegen import ShapeSpec, generate_scene


def brute_force(pred, gt, n):
    """Per-voxel tallies in plain Python."""
    counts = [[0] * n for _ in range(n)]
    for p, g in zip(pred.tolist(), gt.tolist()):
        counts[g][p] += 1
    ious = []
    for k in range(1, n):
        tp = counts[k][k]
        fp = sum(counts[g][k] for g in range(n)) - tp
        fn = sum(counts[k]) - tp
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
    occ_tp = sum(counts[g][p] for g in range(1, n) for p in range(1, n))
    occ_fp = sum(counts[0][1:])
    occ_fn = sum(counts[g][0] for g in range(1, n))
    union = occ_tp + occ_fp + occ_fn
    return counts, (math.fsum(ious) / len(ious) if ious else float("nan")), \
        (occ_tp / union if union else float("nan"))


def grid(labels, dims, class_count=4):
    return OccupancyGrid(GridSpec(dims, (0, 0, 0), (1, 1, 1)), np.asarray(labels), class_count)


class TestConfusion:
    def test_perfect_is_diagonal(self, rng):
        g = grid(rng.integers(0, 5, size=27), (3, 3, 3))
        c = confusion(g, g).counts
        assert np.count_nonzero(c - np.diag(np.diag(c))) == 0

    def test_single_off_diagonal(self):
        pred = grid(np.zeros(8, int), (2, 2, 2))
        gt = grid(np.ones(8, int), (2, 2, 2))
        c = confusion(pred, gt).counts
        assert c[1, 0] == 8 and c.sum() == 8

    def test_spec_mismatch(self):
        with pytest.raises(ValueError):
            confusion(grid(np.zeros(8, int), (2, 2, 2)), grid(np.zeros(8, int), (8, 1, 1)))

    @given(st.integers(0, 10_000))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        p, g = rng.integers(0, 5, size=(2, 64))
        counts, m, b = brute_force(p, g, 5)
        cm = confusion(grid(p, (4, 4, 4)), grid(g, (4, 4, 4)))
        np.testing.assert_array_equal(cm.counts, counts)
        assert miou(cm)[0] == pytest.approx(m, abs=0)
        assert iou_binary(cm) == pytest.approx(b, abs=0)


class TestIoU:
    def test_perfect(self, rng):
        g = grid(rng.integers(0, 5, size=27), (3, 3, 3))
        r = evaluate(g, g)
        assert r["iou"] == 1.0 and r["miou"] == 1.0

    def test_never_predicted_class(self):
        gt = grid([0, 1, 2, 2], (4, 1, 1))
        pred = grid([0, 1, 1, 1], (4, 1, 1))
        assert per_class_iou(confusion(pred, gt))[2] == 0.0

    def test_toy_matrix(self):
        c = np.zeros((3, 3), int)
        c[1:, 1:] = [[2, 1], [1, 2]]
        value, per_class = miou(ConfusionMatrix(c))
        np.testing.assert_allclose(per_class, [0.5, 0.5])
        assert value == 0.5

    def test_absent_classes_excluded(self):
        gt = grid([0, 1, 1, 0], (4, 1, 1))
        value, per_class = miou(confusion(gt, gt))
        assert value == 1.0
        assert np.isnan(per_class[1])

    def test_binary_ignores_semantics(self):
        gt = grid([0, 1, 2, 3], (4, 1, 1))
        pred = grid([0, 2, 3, 1], (4, 1, 1))
        assert iou_binary(confusion(pred, gt)) == 1.0

    def test_binary_no_overlap(self):
        assert iou_binary(confusion(grid([1, 0], (2, 1, 1)), grid([0, 1], (2, 1, 1)))) == 0.0

    def test_half_overlapping_cubes(self):
        spec = GridSpec((16, 8, 8), (0, 0, 0), (1, 1, 1))
        a = generate_scene([ShapeSpec("box", [4, 4, 4], [2, 2, 2], 1)], spec)
        b = generate_scene([ShapeSpec("box", [6, 4, 4], [2, 2, 2], 1)], spec)
        # 4x4x4 cubes shifted by half their width: |A n B| = 32, |A u B| = 96
        assert a.occupied.sum() == 64
        assert iou_binary(confusion(a, b)) == pytest.approx(32 / 96)
