"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .rasterizer import OccupancyGrid


def check_points(X):
    """``(n, 3)`` finite float64 array of world-space points."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] != 3:
        raise ValueError(f"points must have 3 columns, got {X.shape[1]}")
    return X


def check_grid(X, name="X"):
    if not isinstance(X, OccupancyGrid):
        raise TypeError(f"{name} must be an OccupancyGrid, got {type(X).__name__}")
    if not X.occupied.any():
        raise ValueError(f"{name} has no occupied voxels")
    return X


def check_tau(tau):
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return tau
