"""Per-scene fitting of a fixed-size primitive set to an occupancy grid.

The primitives are optimized directly (no image network): every step samples
voxel centers, evaluates the mixture on culled (point, primitive) pairs,
computes cross-entropy + Lovász-softmax, back-propagates analytically and
applies an AdamW update on unconstrained parameters.  Part-way through, a
prune-and-split event moves the smallest primitives onto the largest ones.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .field import NumericalError, backward_pairs, forward_pairs
from .losses import inverse_frequency_weights, occupancy_loss
from .metrics import evaluate
from .primitives import (
    DEFAULT_EPS_BOUNDS,
    GAUSSIAN,
    KINDS,
    SUPERQUADRIC,
    ConfigurationError,
    PrimitiveSet,
    check_eps_bounds,
    quat_to_rotmat,
)
from .rasterizer import (
    DEFAULT_CUTOFF_F,
    DEFAULT_TAU,
    GridSpec,
    OccupancyGrid,
    candidate_pairs,
    discretize,
    rasterize,
    support_boxes,
    voxel_centers,
)

log = logging.getLogger(__name__)

MIN_SCALE = 1e-3

# learning-rate multipliers per parameter group; position is further scaled by voxel size
GROUP_LR = {
    "position": 1.0,
    "log_scale": 1.0,
    "quat": 0.5,
    "opacity_logit": 2.0,
    "eps_raw": 2.0,
    "logits": 4.0,
}
DECAYED_GROUPS = ("opacity_logit", "eps_raw", "logits")


@dataclass
class FitConfig:
    primitive_count: int = 1600
    primitive_kind: str = SUPERQUADRIC
    iterations: int = 2000
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    eps_bounds: tuple = DEFAULT_EPS_BOUNDS
    prune_split_count: int | None = None
    prune_split_at: object = None
    w_ce: float = 1.0
    w_lov: float = 1.0
    class_weighting: bool = False
    rng_seed: int = 0
    batch_points: int = 16384
    cutoff_f: float = DEFAULT_CUTOFF_F
    lr_schedule: str = "cosine"
    lr_min_ratio: float = 0.05
    opacity_scaled_geometry: bool = False
    literal_z: bool = False
    tau: float = DEFAULT_TAU
    eval_every: int = 0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.primitive_kind in ("quadric", "sq"):
            self.primitive_kind = SUPERQUADRIC
        if self.primitive_kind not in KINDS:
            raise ConfigurationError(f"primitive_kind must be one of {KINDS}")
        if self.primitive_count < 1 or self.iterations < 0 or self.batch_points < 1:
            raise ConfigurationError("primitive_count, batch_points must be >= 1 and iterations >= 0")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning_rate and weight_decay must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("moment decay rates must lie in (0, 1)")
        self.eps_bounds = check_eps_bounds(self.eps_bounds)
        if self.prune_split_count is None:
            self.prune_split_count = self.primitive_count // 2
        if not 0 <= 2 * self.prune_split_count <= self.primitive_count:
            raise ConfigurationError("prune_split_count must satisfy 0 <= 2n <= primitive_count")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigurationError("lr_schedule must be 'cosine' or 'constant'")

    @property
    def prune_steps(self):
        if self.prune_split_count == 0:
            return []
        at = self.prune_split_at
        if at is None:
            at = int(0.6 * self.iterations)
        steps = [at] if np.isscalar(at) else list(at)
        return sorted(int(s) for s in steps if 0 <= int(s) < self.iterations)

    def to_dict(self):
        d = asdict(self)
        d["eps_bounds"] = list(self.eps_bounds)
        return d


# ---------------------------------------------------------------------------
# reparameterization
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


@dataclass
class ParamVector:
    """Unconstrained per-primitive parameters, one array per group."""

    kind: str
    groups: dict
    eps_bounds: tuple
    scale_bounds: tuple
    literal_z: bool = False

    @classmethod
    def from_primitives(cls, pset: PrimitiveSet, scale_max=np.inf):
        lo, hi = pset.eps_bounds
        g = {
            "position": pset.position.copy(),
            "log_scale": np.log(np.clip(pset.scale, MIN_SCALE, scale_max)),
            "quat": pset.rotation.copy(),
            "opacity_logit": _logit(pset.opacity),
            "logits": np.log(np.maximum(pset.semantics, 1e-12)),
        }
        if pset.kind == SUPERQUADRIC:
            g["eps_raw"] = _logit((pset.eps - lo) / (hi - lo))
        return cls(pset.kind, g, (lo, hi), (MIN_SCALE, scale_max), pset.literal_z)

    def to_primitives(self) -> PrimitiveSet:
        g = self.groups
        lo, hi = self.eps_bounds
        logits = g["logits"] - g["logits"].max(axis=1, keepdims=True)
        sem = np.exp(logits)
        sem /= sem.sum(axis=1, keepdims=True)
        return PrimitiveSet(
            kind=self.kind,
            position=g["position"],
            scale=np.exp(g["log_scale"]),
            rotation=g["quat"],
            opacity=_sigmoid(g["opacity_logit"]),
            semantics=sem,
            eps=lo + (hi - lo) * _sigmoid(g["eps_raw"]) if self.kind == SUPERQUADRIC else None,
            eps_bounds=self.eps_bounds,
            literal_z=self.literal_z,
        )

    def chain(self, pset: PrimitiveSet, grad) -> dict:
        """Map attribute gradients (:class:`ParamGradient`) onto parameter groups."""
        lo, hi = self.eps_bounds
        out = {
            "position": grad.position,
            "log_scale": grad.scale * pset.scale,
            "quat": grad.rotation,
            "opacity_logit": grad.opacity * pset.opacity * (1.0 - pset.opacity),
            "logits": grad.logits,
        }
        if self.kind == SUPERQUADRIC:
            sig = (pset.eps - lo) / (hi - lo)
            out["eps_raw"] = grad.eps * (hi - lo) * sig * (1.0 - sig)
        return out

    def project(self):
        """Keep scales inside their bounds and quaternions at unit norm."""
        g = self.groups
        np.clip(g["log_scale"], np.log(self.scale_bounds[0]), np.log(self.scale_bounds[1]),
                out=g["log_scale"])
        norm = np.linalg.norm(g["quat"], axis=1, keepdims=True)
        g["quat"] /= np.where(norm > 0, norm, 1.0)

    def copy(self):
        return ParamVector(self.kind, {k: v.copy() for k, v in self.groups.items()},
                           self.eps_bounds, self.scale_bounds, self.literal_z)


class AdamW:
    """Adam with decoupled weight decay over a dict of parameter arrays."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: dict, weight_decay: dict):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if weight_decay.get(k, 0.0):
                p *= 1.0 - lr[k] * weight_decay[k]
            p -= (lr[k] / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def reset(self, rows):
        """Zero the moments of the given primitive rows."""
        for k in self.m:
            self.m[k][rows] = 0.0
            self.v[k][rows] = 0.0


@dataclass
class FitState:
    params: ParamVector
    adam: AdamW
    rng: np.random.Generator
    step: int = 0
    history: dict = field(default_factory=lambda: {"step": [], "loss": [], "ce": [], "lovasz": []})
    checkpoints: list = field(default_factory=list)


@dataclass
class FitResult:
    primitives: PrimitiveSet
    history: dict
    checkpoints: list
    config: FitConfig
    spec: GridSpec
    seconds: float = 0.0


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def init_primitives(config: FitConfig, spec: GridSpec, n_classes=16) -> PrimitiveSet:
    """Random start: uniform positions, ellipsoids of 0.5-2 voxel diagonals, uniform semantics."""
    rng = np.random.default_rng(config.rng_seed)
    N = config.primitive_count
    pos = rng.uniform(spec.lower, spec.upper, size=(N, 3))
    scale = rng.uniform(0.5, 2.0, size=(N, 3)) * spec.voxel_diagonal
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (N, 1))
    lo, hi = config.eps_bounds
    eps = np.full((N, 2), 1.0) if config.primitive_kind == SUPERQUADRIC else None
    if eps is not None and not lo < 1.0 < hi:
        eps[:] = 0.5 * (lo + hi)
    return PrimitiveSet(
        kind=config.primitive_kind,
        position=pos,
        scale=scale,
        rotation=rot,
        opacity=np.full(N, 0.5),
        semantics=np.full((N, n_classes), 1.0 / n_classes),
        eps=eps,
        eps_bounds=config.eps_bounds,
        literal_z=config.literal_z,
    )


def prune_and_split(primitives: PrimitiveSet, n: int, spec: GridSpec | None = None):
    """Drop the ``n`` smallest primitives and split the ``n`` largest in two.

    Size is ranked by ``opacity * prod(scale)``.  A split halves the parent's
    longest local axis and places the two children at ``+-scale/2`` along it,
    so together they tile the parent's extent.  Returns the new set and the
    slot indices whose contents changed.
    """
    N = len(primitives)
    if n < 0 or 2 * n > N:
        raise ValueError(f"cannot prune and split {n} of {N} primitives (need 2n <= count)")
    out = primitives.copy()
    if n == 0:
        return out, np.zeros(0, dtype=np.int64)
    vol = primitives.opacity * np.prod(primitives.scale, axis=1)
    order = np.argsort(vol, kind="stable")
    small = order[:n]
    large = order[::-1][:n]
    R = quat_to_rotmat(primitives.rotation[large])
    k = np.argmax(primitives.scale[large], axis=1)
    rows = np.arange(n)
    half = primitives.scale[large, k] / 2.0
    # local axis k in world coordinates is row k of R
    offset = R[rows, k, :] * half[:, None]
    child_scale = primitives.scale[large].copy()
    child_scale[rows, k] = half
    for name in ("rotation", "opacity", "semantics", "eps"):
        arr = getattr(out, name)
        if arr is not None:
            arr[small] = getattr(primitives, name)[large]
    out.scale[large] = child_scale
    out.scale[small] = child_scale
    out.position[large] = primitives.position[large] + offset
    out.position[small] = primitives.position[large] - offset
    if spec is not None:
        out.position = np.clip(out.position, spec.lower, spec.upper)
    return out, np.concatenate([large, small])


def _learning_rates(config: FitConfig, spec: GridSpec, step: int):
    base = config.learning_rate
    if config.lr_schedule == "cosine" and config.iterations > 0:
        lo = base * config.lr_min_ratio
        base = lo + (base - lo) * 0.5 * (1.0 + math.cos(math.pi * step / config.iterations))
    lr = {k: base * m for k, m in GROUP_LR.items()}
    lr["position"] *= float(np.mean(spec.voxel_size))
    wd = {k: config.weight_decay for k in DECAYED_GROUPS}
    return lr, wd


def sample_batch(rng, n_voxels, batch):
    if batch >= n_voxels:
        return np.arange(n_voxels)
    return np.sort(rng.choice(n_voxels, size=batch, replace=False))


def fit_step(state: FitState, scene: OccupancyGrid, config: FitConfig, centers=None,
             class_weights=None):
    """One optimization step; updates ``state`` in place and returns the LossReport."""
    spec = scene.spec
    if centers is None:
        centers = voxel_centers(spec)
    params = state.params
    pset = params.to_primitives()
    if not all(np.all(np.isfinite(g)) for g in params.groups.values()):
        raise NumericalError(_diagnose(state.step, pset, "non-finite parameters"))
    idx = sample_batch(state.rng, spec.n_voxels, config.batch_points)
    pts = centers[idx]
    labels = scene.labels[idx]
    lo, hi = support_boxes(pset, config.cutoff_f)
    pt, prim = candidate_pairs(pts, lo, hi)
    cache = forward_pairs(pts, pset, pt, prim, opacity_scaled=config.opacity_scaled_geometry,
                          f_cut=config.cutoff_f)
    report = occupancy_loss(cache.p_occ, cache.p_sem, labels, config.w_ce, config.w_lov,
                            class_weights)
    if not np.isfinite(report.total):
        raise NumericalError(_diagnose(state.step, pset, "non-finite loss"))
    grad = backward_pairs(cache, report.grad_occ, report.grad_sem)
    grads = params.chain(pset, grad)
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericalError(_diagnose(state.step, pset, f"non-finite gradient in {bad}", grads))
    lr, wd = _learning_rates(config, spec, state.step)
    state.adam.step(params.groups, grads, lr, wd)
    params.project()
    h = state.history
    h["step"].append(state.step)
    h["loss"].append(report.total)
    h["ce"].append(report.ce)
    h["lovasz"].append(report.lovasz)
    state.step += 1
    return report


def _diagnose(step, pset, what, grads=None):
    bad = set()
    for name in ("position", "scale", "rotation", "opacity", "semantics", "eps"):
        arr = getattr(pset, name)
        if arr is not None:
            bad.update(np.nonzero(~np.all(np.isfinite(arr.reshape(len(pset), -1)), axis=1))[0])
    for g in (grads or {}).values():
        bad.update(np.nonzero(~np.all(np.isfinite(g.reshape(len(pset), -1)), axis=1))[0])
    return f"{what} at step {step}; offending primitive indices: {sorted(int(i) for i in bad)}"


def new_state(pset: PrimitiveSet, config: FitConfig, spec: GridSpec) -> FitState:
    params = ParamVector.from_primitives(pset, scale_max=spec.diagonal)
    return FitState(params, AdamW(config.beta1, config.beta2),
                    np.random.default_rng([config.rng_seed, 1]))


def apply_prune_split(state: FitState, config: FitConfig, spec: GridSpec):
    pset = state.params.to_primitives()
    new, changed = prune_and_split(pset, config.prune_split_count, spec)
    fresh = ParamVector.from_primitives(new, scale_max=spec.diagonal)
    for k, arr in state.params.groups.items():
        arr[changed] = fresh.groups[k][changed]
    state.adam.reset(changed)
    log.info("prune/split at step %d: %d slots reassigned", state.step, len(changed))
    return changed


def predict_grid(pset, spec, config: FitConfig):
    prob = rasterize(pset, spec, config.cutoff_f, config.opacity_scaled_geometry)
    return discretize(prob, config.tau)


def checkpoint_metrics(state: FitState, scene: OccupancyGrid, config: FitConfig):
    pred = predict_grid(state.params.to_primitives(), scene.spec, config)
    m = evaluate(pred, scene)
    loss = state.history["loss"][-1] if state.history["loss"] else float("nan")
    entry = {"step": state.step, "loss": loss, "iou": m["iou"], "miou": m["miou"]}
    state.checkpoints.append(entry)
    return entry


def fit(scene: OccupancyGrid, config: FitConfig, init: PrimitiveSet | None = None,
        callback=None) -> FitResult:
    """Fit ``config.primitive_count`` primitives to ``scene``."""
    t0 = time.perf_counter()
    spec = scene.spec
    if init is None:
        init = init_primitives(config, spec, scene.class_count)
    if init.n_classes != scene.class_count:
        raise ValueError("initial primitives and scene disagree on the class count")
    state = new_state(init, config, spec)
    centers = voxel_centers(spec)
    weights = None
    if config.class_weighting:
        weights = inverse_frequency_weights(scene.labels, scene.class_count + 1)
    prune_steps = set(config.prune_steps)
    for it in range(config.iterations):
        if it in prune_steps:
            apply_prune_split(state, config, spec)
        fit_step(state, scene, config, centers, weights)
        if len(state.params.groups["position"]) != config.primitive_count:
            raise AssertionError("primitive count changed during fitting")
        if config.eval_every and state.step % config.eval_every == 0:
            entry = checkpoint_metrics(state, scene, config)
            log.info("step %d loss %.4f iou %.4f miou %.4f", entry["step"], entry["loss"],
                     entry["iou"], entry["miou"])
        if config.checkpoint_every and config.checkpoint_path and \
                state.step % config.checkpoint_every == 0:
            from .io import save_primitives
            save_primitives(config.checkpoint_path, state.params.to_primitives(), config)
        if callback is not None:
            callback(state)
    final = state.params.to_primitives()
    if not state.checkpoints or state.checkpoints[-1]["step"] != state.step:
        checkpoint_metrics(state, scene, config)
    return FitResult(final, state.history, state.checkpoints, config, spec,
                     time.perf_counter() - t0)
