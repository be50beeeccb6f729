"""Primitive types, quaternion utilities and the superquadric implicit function.

Primitives are stored as a struct-of-arrays :class:`PrimitiveSet` so that the
field, rasterizer and optimizer can work on whole sets at once.  The scalar
dataclasses :class:`Superquadric` and :class:`GaussianPrimitive` are the
user-facing record types and convert to and from a set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

F_CLAMP = 80.0
DEFAULT_EPS_BOUNDS = (0.1, 2.0)
SUPPORT_INFLATION = 1.05

SUPERQUADRIC = "superquadric"
GAUSSIAN = "gaussian"
KINDS = (SUPERQUADRIC, GAUSSIAN)


class ConfigurationError(ValueError):
    """Raised for invalid configuration values (bounds, counts, flags)."""


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------


def normalize_quaternion(q):
    """Return ``q / |q|`` along the last axis.  Raises on all-zero input."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("quaternion must be finite")
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("quaternion must not be all zeros")
    return q / norm


def quat_to_rotmat(q):
    """Rotation matrix of a (w, x, y, z) quaternion, normalizing it first.

    Accepts a single quaternion ``(4,)`` or a batch ``(..., 4)`` and returns
    ``(3, 3)`` or ``(..., 3, 3)``.
    """
    w, x, y, z = np.moveaxis(normalize_quaternion(q), -1, 0)
    R = np.empty(w.shape + (3, 3))
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def rotmat_grad_to_quat(q, grad_R):
    """Pull a gradient w.r.t. ``R(q/|q|)`` back onto the raw quaternion ``q``.

    ``q`` is ``(N, 4)`` and ``grad_R`` is ``(N, 3, 3)``; a single ``(4,)``
    quaternion with a ``(3, 3)`` gradient also works.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1:
        return rotmat_grad_to_quat(q[None], np.asarray(grad_R)[None])[0]
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qh = q / norm
    w, x, y, z = qh.T
    G = grad_R
    g00, g01, g02 = G[:, 0, 0], G[:, 0, 1], G[:, 0, 2]
    g10, g11, g12 = G[:, 1, 0], G[:, 1, 1], G[:, 1, 2]
    g20, g21, g22 = G[:, 2, 0], G[:, 2, 1], G[:, 2, 2]
    gw = 2.0 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    gx = 2.0 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12
                + z * g20 + w * g21 - 2 * x * g22)
    gy = 2.0 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12
                - w * g20 + z * g21 - 2 * y * g22)
    gz = 2.0 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11
                + y * g12 + x * g20 + y * g21)
    g_hat = np.stack([gw, gx, gy, gz], axis=-1)
    # project through the normalization map
    radial = np.sum(g_hat * qh, axis=-1, keepdims=True)
    return (g_hat - radial * qh) / norm


# ---------------------------------------------------------------------------
# implicit function
# ---------------------------------------------------------------------------


def _log_abs_power(u, p):
    """``p * ln|u|`` with ``-inf`` where ``u == 0``."""
    with np.errstate(divide="ignore"):
        return p * np.log(np.abs(u))


def canonical_implicit(x_local, s, eps1, eps2, *, literal_z=False, f_clamp=F_CLAMP):
    """Superquadric inside-outside function in the primitive's local frame.

    ``f = (|x/sx|^(2/e2) + |y/sy|^(2/e2))^(e2/e1) + |z/sz|^(2/e1)``.  The value is
    0 at the origin, 1 on the surface and clamped to ``[0, f_clamp]``.  With
    ``literal_z`` the z term uses ``2/e2`` instead of ``2/e1``.

    Broadcasts over leading axes: ``x_local`` is ``(..., 3)``; ``s`` is
    ``(..., 3)``; ``eps1``/``eps2`` broadcast against ``x_local[..., 0]``.
    """
    x_local = np.asarray(x_local, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("scale must be strictly positive")
    eps1 = np.asarray(eps1, dtype=np.float64)
    eps2 = np.asarray(eps2, dtype=np.float64)
    n = x_local / s
    p2 = 2.0 / eps2
    pz = 2.0 / (eps2 if literal_z else eps1)
    lt_x = _log_abs_power(n[..., 0], p2)
    lt_y = _log_abs_power(n[..., 1], p2)
    lt_z = _log_abs_power(n[..., 2], pz)
    with np.errstate(invalid="ignore"):
        ln_a = np.logaddexp(lt_x, lt_y)
    cap = np.log(f_clamp) + 1.0
    ln_b = np.minimum((eps2 / eps1) * ln_a, cap)
    f = np.exp(ln_b) + np.exp(np.minimum(lt_z, cap))
    return np.minimum(f, f_clamp)


def gaussian_implicit(x_local, s, f_clamp=F_CLAMP):
    """Half squared Mahalanobis distance ``0.5 * sum((x/s)^2)``, clamped."""
    n = np.asarray(x_local, dtype=np.float64) / np.asarray(s, dtype=np.float64)
    return np.minimum(0.5 * np.sum(n * n, axis=-1), f_clamp)


def support_radii(s, eps1=1.0, eps2=1.0, f_max=12.0, *, kind=SUPERQUADRIC, literal_z=False):
    """Local half-extents of the region ``f <= f_max``, inflated by 5%.

    For a superquadric every axis is bounded by ``s * f_max^(e1/2)`` (the z
    axis uses ``e2`` under ``literal_z``); a Gaussian by ``s * sqrt(2 f_max)``.
    Broadcasts over a leading primitive axis.
    """
    s = np.asarray(s, dtype=np.float64)
    if f_max <= 0:
        raise ValueError("f_max must be positive")
    if kind == GAUSSIAN:
        r = np.sqrt(2.0 * f_max) * np.ones_like(s)
    else:
        e1 = np.asarray(eps1, dtype=np.float64)
        e2 = np.asarray(eps2, dtype=np.float64)
        rxy = f_max ** (e1 / 2.0)
        rz = f_max ** ((e2 if literal_z else e1) / 2.0)
        r = np.stack(np.broadcast_arrays(rxy, rxy, rz), axis=-1)
    return SUPPORT_INFLATION * s * r


def check_eps_bounds(bounds):
    lo, hi = (float(b) for b in bounds)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0 or hi <= lo:
        raise ConfigurationError(f"invalid eps bounds ({lo}, {hi}): need 0 < lo < hi")
    return lo, hi


def clamp_exponents(eps, bounds=DEFAULT_EPS_BOUNDS):
    lo, hi = check_eps_bounds(bounds)
    return np.clip(eps, lo, hi)


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------


def _vec3(v, name):
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector")
    return a


def _check_simplex(c, name="semantics", tol=1e-6):
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0 or np.any(c < 0) or np.any(np.abs(c.sum(axis=-1) - 1.0) > tol):
        raise ValueError(f"{name} must be a non-empty probability vector")
    return c


@dataclass
class GaussianPrimitive:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    semantics: np.ndarray

    def __post_init__(self):
        self.position = _vec3(self.position, "position")
        self.scale = _vec3(self.scale, "scale")
        if np.any(self.scale <= 0):
            raise ValueError("scale entries must be > 0")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError("opacity must lie in [0, 1]")
        self.opacity = float(self.opacity)
        self.semantics = _check_simplex(self.semantics)


@dataclass
class Superquadric(GaussianPrimitive):
    eps1: float = 1.0
    eps2: float = 1.0
    eps_bounds: tuple = DEFAULT_EPS_BOUNDS

    def __post_init__(self):
        super().__post_init__()
        lo, hi = check_eps_bounds(self.eps_bounds)
        for name in ("eps1", "eps2"):
            v = float(getattr(self, name))
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v} outside bounds ({lo}, {hi})")
            setattr(self, name, v)


@dataclass
class PrimitiveSet:
    """A homogeneous set of N primitives stored as arrays.

    ``rotation`` holds raw (possibly unnormalized) quaternions; they are
    normalized whenever a rotation matrix is needed.  ``eps`` is ``(N, 2)``
    for superquadrics and ``None`` for Gaussians.
    """

    kind: str
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: np.ndarray
    semantics: np.ndarray
    eps: np.ndarray | None = None
    eps_bounds: tuple = DEFAULT_EPS_BOUNDS
    literal_z: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.position = np.asarray(self.position, dtype=np.float64).reshape(-1, 3)
        n = len(self.position)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(n, 3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(n, 4)
        self.opacity = np.asarray(self.opacity, dtype=np.float64).reshape(n)
        self.semantics = np.asarray(self.semantics, dtype=np.float64).reshape(n, -1)
        if self.kind == SUPERQUADRIC:
            if self.eps is None:
                raise ValueError("superquadric sets need eps")
            self.eps = np.asarray(self.eps, dtype=np.float64).reshape(n, 2)
        else:
            self.eps = None
        self.eps_bounds = check_eps_bounds(self.eps_bounds)

    def __len__(self):
        return len(self.position)

    @property
    def n_classes(self):
        return self.semantics.shape[1]

    def rotation_matrices(self):
        return quat_to_rotmat(self.rotation)

    def copy(self):
        return PrimitiveSet(
            kind=self.kind,
            position=self.position.copy(),
            scale=self.scale.copy(),
            rotation=self.rotation.copy(),
            opacity=self.opacity.copy(),
            semantics=self.semantics.copy(),
            eps=None if self.eps is None else self.eps.copy(),
            eps_bounds=self.eps_bounds,
            literal_z=self.literal_z,
            meta=dict(self.meta),
        )

    def subset(self, index):
        index = np.asarray(index)
        return PrimitiveSet(
            kind=self.kind,
            position=self.position[index],
            scale=self.scale[index],
            rotation=self.rotation[index],
            opacity=self.opacity[index],
            semantics=self.semantics[index],
            eps=None if self.eps is None else self.eps[index],
            eps_bounds=self.eps_bounds,
            literal_z=self.literal_z,
            meta=dict(self.meta),
        )

    def validate(self, tol=1e-6):
        """Raise ``ValueError`` if any attribute violates its invariant."""
        if len(self) == 0:
            raise ValueError("primitive set is empty")
        for name in ("position", "scale", "rotation", "opacity", "semantics"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(self.scale <= 0):
            raise ValueError("scale entries must be > 0")
        if np.any(np.linalg.norm(self.rotation, axis=1) == 0):
            raise ValueError("rotation quaternion is all zeros")
        if np.any((self.opacity < 0) | (self.opacity > 1)):
            raise ValueError("opacity outside [0, 1]")
        _check_simplex(self.semantics, tol=tol)
        if self.eps is not None:
            lo, hi = self.eps_bounds
            if np.any((self.eps < lo) | (self.eps > hi)):
                raise ValueError(f"eps outside bounds ({lo}, {hi})")
        return self

    def implicit(self, x_local, index=slice(None)):
        """Implicit value of primitives ``index`` at local points ``x_local``."""
        if self.kind == GAUSSIAN:
            return gaussian_implicit(x_local, self.scale[index])
        e = self.eps[index]
        return canonical_implicit(
            x_local, self.scale[index], e[..., 0], e[..., 1], literal_z=self.literal_z
        )

    def support_radii(self, f_max):
        if self.kind == GAUSSIAN:
            return support_radii(self.scale, f_max=f_max, kind=GAUSSIAN)
        return support_radii(
            self.scale, self.eps[:, 0], self.eps[:, 1], f_max, literal_z=self.literal_z
        )

    def to_list(self):
        out = []
        for i in range(len(self)):
            common = dict(
                position=self.position[i],
                scale=self.scale[i],
                rotation=self.rotation[i],
                opacity=float(self.opacity[i]),
                semantics=self.semantics[i],
            )
            if self.kind == SUPERQUADRIC:
                out.append(Superquadric(**common, eps1=self.eps[i, 0], eps2=self.eps[i, 1],
                                        eps_bounds=self.eps_bounds))
            else:
                out.append(GaussianPrimitive(**common))
        return out

    @classmethod
    def from_list(cls, primitives: Sequence, literal_z=False):
        primitives = list(primitives)
        if not primitives:
            raise ValueError("primitive list is empty")
        is_sq = [isinstance(p, Superquadric) for p in primitives]
        if any(is_sq) and not all(is_sq):
            raise ValueError("cannot mix superquadrics and Gaussians in one set")
        kind = SUPERQUADRIC if is_sq[0] else GAUSSIAN
        return cls(
            kind=kind,
            position=np.stack([p.position for p in primitives]),
            scale=np.stack([p.scale for p in primitives]),
            rotation=np.stack([p.rotation for p in primitives]),
            opacity=np.array([p.opacity for p in primitives]),
            semantics=np.stack([p.semantics for p in primitives]),
            eps=np.array([[p.eps1, p.eps2] for p in primitives]) if kind == SUPERQUADRIC else None,
            eps_bounds=primitives[0].eps_bounds if kind == SUPERQUADRIC else DEFAULT_EPS_BOUNDS,
            literal_z=literal_z,
        )


def as_primitive_set(primitives) -> PrimitiveSet:
    if isinstance(primitives, PrimitiveSet):
        if len(primitives) == 0:
            raise ValueError("primitive set is empty")
        return primitives
    if isinstance(primitives, GaussianPrimitive):
        primitives = [primitives]
    return PrimitiveSet.from_list(primitives)


def concat(sets: Iterable[PrimitiveSet]) -> PrimitiveSet:
    sets = list(sets)
    first = sets[0]
    return PrimitiveSet(
        kind=first.kind,
        position=np.concatenate([s.position for s in sets]),
        scale=np.concatenate([s.scale for s in sets]),
        rotation=np.concatenate([s.rotation for s in sets]),
        opacity=np.concatenate([s.opacity for s in sets]),
        semantics=np.concatenate([s.semantics for s in sets]),
        eps=None if first.eps is None else np.concatenate([s.eps for s in sets]),
        eps_bounds=first.eps_bounds,
        literal_z=first.literal_z,
    )
