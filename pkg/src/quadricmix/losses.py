"""Cross-entropy and Lovász-softmax losses on mixture probabilities.

All losses take per-voxel ``(C+1)``-way class probabilities (column 0 is the
empty class) and integer labels, and return ``(value, grad)`` with ``grad``
the derivative w.r.t. the probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass
class LossReport:
    ce: float
    lovasz: float
    total: float
    grad_occ: np.ndarray
    grad_sem: np.ndarray


def full_class_probs(p_occ, p_sem):
    """``[1 - p_occ, p_occ * p_sem]`` along the last axis."""
    p_occ = np.asarray(p_occ, dtype=np.float64)
    p_sem = np.asarray(p_sem, dtype=np.float64)
    return np.concatenate([(1.0 - p_occ)[..., None], p_occ[..., None] * p_sem], axis=-1)


def _check(probs, labels):
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(getattr(labels, "labels", labels)).reshape(-1).astype(np.int64)
    if len(labels) != len(probs):
        raise ValueError(f"{len(probs)} probability rows but {len(labels)} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError(f"label out of range 0..{probs.shape[1] - 1}")
    return probs, labels


def inverse_frequency_weights(labels, n_classes):
    counts = np.bincount(np.asarray(labels).reshape(-1), minlength=n_classes).astype(np.float64)
    w = np.zeros(n_classes)
    present = counts > 0
    w[present] = counts.sum() / (present.sum() * counts[present])
    return w


def cross_entropy(probs, labels, class_weights=None):
    """Mean negative log-probability of the true label, floored at 1e-12."""
    probs, labels = _check(probs, labels)
    rows = np.arange(len(labels))
    p = probs[rows, labels]
    grad = np.zeros_like(probs)
    if len(labels) == 0:
        return 0.0, grad
    w = np.ones(len(labels)) if class_weights is None else np.asarray(class_weights)[labels]
    total_w = w.sum()
    if total_w <= 0:
        return 0.0, grad
    value = float(np.sum(w * -np.log(np.maximum(p, PROB_FLOOR))) / total_w)
    live = p > PROB_FLOOR
    grad[rows[live], labels[live]] = -w[live] / (total_w * p[live])
    return value, grad


def lovasz_grad(fg_sorted):
    """Discrete gradient of the Jaccard loss along an error-sorted ordering."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs, labels, present_classes_only=True):
    """Lovász-softmax loss averaged over classes.

    Ties in the error ordering are broken by voxel index.
    """
    probs, labels = _check(probs, labels)
    grad = np.zeros_like(probs)
    if len(labels) == 0:
        return 0.0, grad
    classes = range(probs.shape[1])
    if present_classes_only:
        classes = np.unique(labels)
    classes = list(classes)
    terms = []
    for k in classes:
        fg = (labels == k).astype(np.float64)
        err = np.abs(fg - probs[:, k])
        order = np.argsort(-err, kind="stable")
        g = lovasz_grad(fg[order])
        terms.append(float(np.dot(err[order], g)))
        dk = np.empty(len(labels))
        dk[order] = g
        grad[:, k] = dk * np.where(fg > 0, -1.0, 1.0)
    grad /= len(classes)
    return float(np.mean(terms)), grad


def occupancy_loss(p_occ, p_sem, labels, w_ce=1.0, w_lov=1.0, class_weights=None):
    """Total loss ``w_ce * CE + w_lov * Lovász`` with gradients on ``p_occ``/``p_sem``."""
    probs = full_class_probs(p_occ, p_sem)
    ce, g_ce = cross_entropy(probs, labels, class_weights)
    lov, g_lov = lovasz_softmax(probs, labels)
    G = w_ce * g_ce + w_lov * g_lov
    p_sem = np.asarray(p_sem, dtype=np.float64)
    grad_occ = -G[:, 0] + np.sum(G[:, 1:] * p_sem, axis=1)
    grad_sem = G[:, 1:] * np.asarray(p_occ, dtype=np.float64)[:, None]
    return LossReport(ce, lov, w_ce * ce + w_lov * lov, grad_occ, grad_sem)
