"""scikit-learn style wrapper around per-scene fitting."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_grid, check_points, check_tau
from .field import evaluate_field
from .losses import full_class_probs
from .metrics import evaluate
from .optimizer import FitConfig, fit
from .rasterizer import GridSpec, discretize, rasterize


class QuadricSceneModel(BaseEstimator):
    """Represent one occupancy grid with a fixed number of primitives.

    ``fit`` takes an :class:`OccupancyGrid`; after fitting, ``predict_proba``
    and ``predict`` evaluate the mixture at arbitrary points and
    ``predict_grid`` re-voxelizes it.

    Attributes set by ``fit``: ``primitives_``, ``history_``, ``spec_``,
    ``n_classes_``, ``config_``.
    """

    def __init__(self, kind="superquadric", count=1600, iterations=2000, learning_rate=0.05,
                 weight_decay=0.01, eps_lo=0.1, eps_hi=2.0, prune_split=None,
                 batch_points=16384, cutoff_f=12.0, tau=0.5, random_state=0,
                 literal_z=False, opacity_scaled=False):
        self.kind = kind
        self.count = count
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.eps_lo = eps_lo
        self.eps_hi = eps_hi
        self.prune_split = prune_split
        self.batch_points = batch_points
        self.cutoff_f = cutoff_f
        self.tau = tau
        self.random_state = random_state
        self.literal_z = literal_z
        self.opacity_scaled = opacity_scaled

    def _config(self):
        return FitConfig(
            primitive_count=self.count, primitive_kind=self.kind, iterations=self.iterations,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            eps_bounds=(self.eps_lo, self.eps_hi), prune_split_count=self.prune_split,
            batch_points=self.batch_points, cutoff_f=self.cutoff_f, tau=check_tau(self.tau),
            rng_seed=self.random_state, literal_z=self.literal_z,
            opacity_scaled_geometry=self.opacity_scaled,
        )

    def fit(self, X, y=None, init=None):
        X = check_grid(X)
        config = self._config()
        result = fit(X, config, init=init)
        self.config_ = config
        self.primitives_ = result.primitives
        self.history_ = result.history
        self.spec_ = X.spec
        self.n_classes_ = X.class_count
        self.fit_seconds_ = result.seconds
        return self

    def predict_proba(self, X):
        """``(n, n_classes + 1)`` class probabilities; column 0 is empty."""
        check_is_fitted(self, "primitives_")
        p_occ, p_sem = evaluate_field(check_points(X), self.primitives_, self.opacity_scaled)
        return full_class_probs(p_occ, p_sem)

    def predict(self, X):
        """Label per point: 0 below ``tau`` occupancy, otherwise the best class."""
        check_is_fitted(self, "primitives_")
        p_occ, p_sem = evaluate_field(check_points(X), self.primitives_, self.opacity_scaled)
        labels = 1 + np.argmax(p_sem, axis=1)
        labels[p_occ < check_tau(self.tau)] = 0
        return labels

    def predict_grid(self, spec: GridSpec | None = None):
        check_is_fitted(self, "primitives_")
        prob = rasterize(self.primitives_, spec or self.spec_, self.cutoff_f, self.opacity_scaled)
        return discretize(prob, check_tau(self.tau))

    def score(self, X, y=None):
        """mIoU of the re-voxelized fit against grid ``X``."""
        X = check_grid(X)
        return evaluate(self.predict_grid(X.spec), X)["miou"]
