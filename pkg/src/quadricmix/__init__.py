"""Superquadric and Gaussian primitive mixtures for semantic occupancy grids."""

import os as _os

# QUADRICMIX_DETERMINISTIC=1 pins BLAS/OpenMP to one thread so reductions are
# reproducible run to run.  Must happen before numpy is imported.
if _os.environ.get("QUADRICMIX_DETERMINISTIC", "") not in ("", "0"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ[_var] = "1"

from .estimator import QuadricSceneModel  # noqa: E402
from .field import evaluate_field, field_gradients, sample  # noqa: E402
from .io import load_grid, load_primitives, save_grid, save_primitives  # noqa: E402
from .losses import cross_entropy, lovasz_softmax, occupancy_loss  # noqa: E402
from .mesh import export_mesh  # noqa: E402
from .metrics import confusion, evaluate, iou_binary, miou  # noqa: E402
from .optimizer import FitConfig, fit, prune_and_split  # noqa: E402
from .primitives import GaussianPrimitive, PrimitiveSet, Superquadric  # noqa: E402
from .rasterizer import GridSpec, OccupancyGrid, discretize, rasterize  # noqa: E402
from .scenegen import generate_scene, preset_grid  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "QuadricSceneModel", "evaluate_field", "field_gradients", "sample", "load_grid",
    "load_primitives", "save_grid", "save_primitives", "cross_entropy", "lovasz_softmax",
    "occupancy_loss", "export_mesh", "confusion", "evaluate", "iou_binary", "miou",
    "FitConfig", "fit", "prune_and_split", "GaussianPrimitive", "PrimitiveSet", "Superquadric",
    "GridSpec", "OccupancyGrid", "discretize", "rasterize", "generate_scene", "preset_grid",
]
