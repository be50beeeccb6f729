"""Occupancy and semantic probability fields of primitive mixtures.

Two evaluation paths live here:

* the reference path (:func:`mixture_occupancy`, :func:`mixture_semantics`,
  :func:`evaluate_field`) loops over primitives in list order and evaluates
  every point against every primitive;
* the pair engine (:func:`forward_pairs` / :func:`backward_pairs`) works on an
  explicit list of (point, primitive) pairs, which lets callers cull far-away
  pairs, and provides analytic parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .primitives import (
    F_CLAMP,
    GAUSSIAN,
    GaussianPrimitive,
    PrimitiveSet,
    Superquadric,
    as_primitive_set,
    canonical_implicit,
    gaussian_implicit,
    quat_to_rotmat,
    rotmat_grad_to_quat,
)

ALPHA_MAX = 1.0 - 1e-12
DENOM_MIN = 1e-12


class NumericalError(FloatingPointError):
    """A non-finite value appeared where the computation requires finite input."""


@dataclass
class FieldSample:
    p_occ: float
    p_sem: np.ndarray


@dataclass
class ParamGradient:
    """Per-primitive gradients of a scalar objective.

    Scale, opacity and shape exponents are gradients w.r.t. the attribute
    values; ``rotation`` is w.r.t. the raw (unnormalized) quaternion and
    ``logits`` w.r.t. semantic logits whose softmax gives the semantics.
    """

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: np.ndarray
    eps: np.ndarray | None
    logits: np.ndarray

    def as_dict(self):
        d = {
            "position": self.position,
            "scale": self.scale,
            "rotation": self.rotation,
            "opacity": self.opacity,
            "logits": self.logits,
        }
        if self.eps is not None:
            d["eps"] = self.eps
        return d


# ---------------------------------------------------------------------------
# reference path
# ---------------------------------------------------------------------------


def local_coords(x, m, r):
    """``R(r) (x - m)`` for points ``x`` of shape ``(..., 3)``."""
    R = quat_to_rotmat(r)
    return (np.asarray(x, dtype=np.float64) - np.asarray(m, dtype=np.float64)) @ R.T


def quadric_occupancy(x, Q: Superquadric, literal_z=False):
    u = local_coords(x, Q.position, Q.rotation)
    return np.exp(-canonical_implicit(u, Q.scale, Q.eps1, Q.eps2, literal_z=literal_z))


def gaussian_occupancy(x, G: GaussianPrimitive):
    u = local_coords(x, G.position, G.rotation)
    return np.exp(-gaussian_implicit(u, G.scale))


def _points(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def primitive_alpha(points, pset: PrimitiveSet, i, R=None):
    """Geometric occupancy ``exp(-f)`` of primitive ``i`` at ``points``."""
    if R is None:
        R = quat_to_rotmat(pset.rotation[i])
    u = (points - pset.position[i]) @ R.T
    return np.exp(-pset.implicit(u, i))


def _occupancy_alpha(alpha_geo, opacity, opacity_scaled):
    a = alpha_geo * opacity if opacity_scaled else alpha_geo
    return np.minimum(a, ALPHA_MAX)


def evaluate_field(points, primitives, opacity_scaled=False):
    """Reference evaluation of ``(p_occ, p_sem)`` at ``(B, 3)`` points.

    Accumulates ``log(1 - alpha_i)`` and the semantic numerator and
    denominator sequentially in primitive order.
    """
    pset = as_primitive_set(primitives)
    pts, single = _points(points)
    Rs = pset.rotation_matrices()
    log_empty = np.zeros(len(pts))
    num = np.zeros((len(pts), pset.n_classes))
    den = np.zeros(len(pts))
    for i in range(len(pset)):
        ag = primitive_alpha(pts, pset, i, Rs[i])
        log_empty += np.log1p(-_occupancy_alpha(ag, pset.opacity[i], opacity_scaled))
        w = ag * pset.opacity[i]
        den += w
        num += w[:, None] * pset.semantics[i]
    p_occ, p_sem = finalize(log_empty, num, den)
    if single:
        return p_occ[0], p_sem[0]
    return p_occ, p_sem


def finalize(log_empty, num, den):
    """Turn accumulated mixture terms into ``(p_occ, p_sem)``."""
    p_occ = -np.expm1(log_empty)
    p_sem = np.full(num.shape, 1.0 / num.shape[1])
    ok = den >= DENOM_MIN
    p_sem[ok] = num[ok] / den[ok, None]
    return p_occ, p_sem


def mixture_occupancy(x, primitives, opacity_scaled=False):
    """``1 - prod_i (1 - alpha_i(x))`` computed in log space."""
    return evaluate_field(x, primitives, opacity_scaled)[0]


def mixture_semantics(x, primitives):
    """Opacity- and occupancy-weighted average of primitive semantics."""
    return evaluate_field(x, primitives)[1]


def sample(x, primitives, opacity_scaled=False) -> FieldSample:
    p_occ, p_sem = evaluate_field(np.asarray(x, dtype=np.float64).reshape(3), primitives,
                                  opacity_scaled)
    return FieldSample(float(p_occ), p_sem)


# ---------------------------------------------------------------------------
# pair engine
# ---------------------------------------------------------------------------


def all_pairs(n_points, n_prims):
    pt = np.repeat(np.arange(n_points), n_prims)
    prim = np.tile(np.arange(n_prims), n_points)
    return pt, prim


def _segsum(idx, vals, n):
    """Sum rows of ``vals`` into ``n`` buckets given by ``idx``."""
    if vals.ndim == 1:
        return np.bincount(idx, weights=vals, minlength=n)
    return np.stack([np.bincount(idx, weights=vals[:, k], minlength=n)
                     for k in range(vals.shape[1])], axis=1)


def _pair_matrix(pt, prim, values, shape):
    """CSR matrix (points x primitives) from pairs grouped by point."""
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(pt, minlength=shape[0]), out=indptr[1:])
    return sparse.csr_matrix((values, prim, indptr), shape=shape)


@dataclass
class PairCache:
    pset: PrimitiveSet
    n_points: int
    pt: np.ndarray
    prim: np.ndarray
    opacity_scaled: bool
    R: np.ndarray
    d: np.ndarray
    n: np.ndarray
    f: np.ndarray
    clamped: np.ndarray
    alpha_geo: np.ndarray
    alpha_occ: np.ndarray
    W: sparse.csr_matrix
    p_occ: np.ndarray
    p_sem: np.ndarray
    den: np.ndarray
    sq: dict | None


def forward_pairs(points, primitives, pt, prim, opacity_scaled=False, f_cut=None) -> PairCache:
    """Evaluate the mixture at ``points`` using only the listed pairs.

    Pairs whose implicit value is ``>= f_cut`` are dropped before the mixture
    is formed.  Points that appear in no pair get ``p_occ = 0`` and uniform
    semantics.
    """
    pset = as_primitive_set(primitives)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pt = np.asarray(pt, dtype=np.int64)
    prim = np.asarray(prim, dtype=np.int64)
    if len(pt) > 1 and np.any(pt[1:] < pt[:-1]):
        order = np.lexsort((prim, pt))
        pt, prim = pt[order], prim[order]
    B, N = len(points), len(pset)
    R = pset.rotation_matrices()
    d = points[pt] - pset.position[prim]
    u = np.einsum("pjk,pk->pj", R[prim], d)
    n = u / pset.scale[prim]
    sq = None
    if pset.kind == GAUSSIAN:
        f_raw = 0.5 * np.sum(n * n, axis=1)
    else:
        e1 = pset.eps[prim, 0]
        e2 = pset.eps[prim, 1]
        ez = e2 if pset.literal_z else e1
        with np.errstate(divide="ignore", invalid="ignore"):
            ln_n = np.log(np.abs(n))
            lt_x = (2.0 / e2) * ln_n[:, 0]
            lt_y = (2.0 / e2) * ln_n[:, 1]
            lt_z = (2.0 / ez) * ln_n[:, 2]
            ln_a = np.logaddexp(lt_x, lt_y)
        r = e2 / e1
        cap = np.log(F_CLAMP) + 1.0
        Bv = np.exp(np.minimum(r * ln_a, cap))
        Tz = np.exp(np.minimum(lt_z, cap))
        f_raw = Bv + Tz
        sq = dict(e1=e1, e2=e2, ez=ez, r=r, lt_x=lt_x, lt_y=lt_y, lt_z=lt_z,
                  ln_a=ln_a, B=Bv, T=Tz)
    if f_cut is not None:
        keep = f_raw < f_cut
        if not keep.all():
            pt, prim, d, n, f_raw = pt[keep], prim[keep], d[keep], n[keep], f_raw[keep]
            if sq is not None:
                sq = {k: v[keep] for k, v in sq.items()}
    clamped = f_raw >= F_CLAMP
    f = np.minimum(f_raw, F_CLAMP)
    alpha_geo = np.exp(-f)
    op = pset.opacity[prim]
    alpha_occ = _occupancy_alpha(alpha_geo, op, opacity_scaled)
    log_empty = np.bincount(pt, weights=np.log1p(-alpha_occ), minlength=B)
    w = alpha_geo * op
    W = _pair_matrix(pt, prim, w, (B, N))
    den = np.asarray(W.sum(axis=1)).ravel()
    num = np.asarray(W @ pset.semantics)
    p_occ, p_sem = finalize(log_empty, num, den)
    return PairCache(pset, B, pt, prim, opacity_scaled, R, d, n, f, clamped,
                     alpha_geo, alpha_occ, W, p_occ, p_sem, den, sq)


def _implicit_partials(cache: PairCache):
    """``df/dn`` (P, 3) and, for superquadrics, ``df/d(eps1, eps2)`` (P, 2)."""
    n = cache.n
    if cache.sq is None:
        return n.copy(), None
    q = cache.sq
    e1, e2, ez, r = q["e1"], q["e2"], q["ez"], q["r"]
    B, T, ln_a = q["B"], q["T"], q["ln_a"]
    lt_x, lt_y, lt_z = q["lt_x"], q["lt_y"], q["lt_z"]
    has_a = np.isfinite(ln_a)
    has_z = n[:, 2] != 0.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        wx = np.where(has_a, np.exp(lt_x - ln_a), 0.0)
        wy = np.where(has_a, np.exp(lt_y - ln_a), 0.0)
        rbp = r * B * (2.0 / e2)
        dfdn = np.empty_like(n)
        # symmetric subgradient 0 where a coordinate vanishes
        dfdn[:, 0] = np.where(n[:, 0] != 0, rbp * wx / n[:, 0], 0.0)
        dfdn[:, 1] = np.where(n[:, 1] != 0, rbp * wy / n[:, 1], 0.0)
        dfdn[:, 2] = np.where(has_z, (2.0 / ez) * T / n[:, 2], 0.0)
        b_ln_a = np.where(has_a, B * ln_a, 0.0)
        wlt = np.where(wx > 0, wx * lt_x, 0.0) + np.where(wy > 0, wy * lt_y, 0.0)
        b_wlt = np.where(has_a, B * wlt, 0.0)
        t_lt = np.where(has_z, T * lt_z, 0.0)
    dfde = np.empty((len(n), 2))
    dfde[:, 0] = -r * b_ln_a / e1
    dfde[:, 1] = (b_ln_a - b_wlt) / e1
    if cache.pset.literal_z:
        dfde[:, 1] -= t_lt / e2
    else:
        dfde[:, 0] -= t_lt / e1
    return dfdn, dfde


def _pair_dots(A, Bm, pt, prim, chunk_entries=1 << 22):
    """``sum_k A[pt, k] * Bm[prim, k]`` for every pair, via blocked dense products."""
    out = np.empty(len(pt))
    if len(pt) == 0:
        return out
    rows = max(1, chunk_entries // max(1, len(Bm)))
    bounds = np.searchsorted(pt, np.arange(0, len(A) + rows, rows))
    for j, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        if a == b:
            continue
        r0 = j * rows
        block = A[r0:r0 + rows] @ Bm.T
        out[a:b] = block[pt[a:b] - r0, prim[a:b]]
    return out


def backward_pairs(cache: PairCache, grad_occ, grad_sem) -> ParamGradient:
    """Chain ``dJ/dp_occ`` (B,) and ``dJ/dp_sem`` (B, C) down to parameters."""
    grad_occ = np.asarray(grad_occ, dtype=np.float64).reshape(cache.n_points)
    grad_sem = np.asarray(grad_sem, dtype=np.float64).reshape(cache.n_points, -1)
    if not (np.all(np.isfinite(grad_occ)) and np.all(np.isfinite(grad_sem))):
        raise NumericalError("non-finite upstream gradient")
    pset, pt, prim = cache.pset, cache.pt, cache.prim
    N = len(pset)
    op = pset.opacity[prim]
    sem = pset.semantics

    # occupancy mixture
    g_empty = grad_occ * (1.0 - cache.p_occ)
    active = cache.alpha_occ < ALPHA_MAX
    g_aocc = np.where(active, g_empty[pt] / (1.0 - cache.alpha_occ), 0.0)
    # semantic mixture: dJ/dw_i = g_sem . (c_i - p_sem) / den
    ok = cache.den >= DENOM_MIN
    inv_den = np.where(ok, 1.0 / np.where(ok, cache.den, 1.0), 0.0)
    g_sem_scaled = grad_sem * inv_den[:, None]
    g_w = _pair_dots(g_sem_scaled, sem, pt, prim) - np.sum(g_sem_scaled * cache.p_sem, axis=1)[pt]
    g_c = np.asarray(cache.W.T @ g_sem_scaled)

    if cache.opacity_scaled:
        g_ageo = (g_aocc + g_w) * op
        g_op = _segsum(prim, (g_aocc + g_w) * cache.alpha_geo, N)
    else:
        g_ageo = g_aocc + g_w * op
        g_op = _segsum(prim, g_w * cache.alpha_geo, N)
    g_f = np.where(cache.clamped, 0.0, -cache.alpha_geo * g_ageo)

    dfdn, dfde = _implicit_partials(cache)
    s = pset.scale[prim]
    g_u = g_f[:, None] * dfdn / s
    cols = [-g_u * cache.n, g_u, (g_u[:, :, None] * cache.d[:, None, :]).reshape(-1, 9)]
    if dfde is not None:
        cols.append(g_f[:, None] * dfde)
    sums = _segsum(prim, np.concatenate(cols, axis=1), N)
    g_scale = sums[:, 0:3]
    gu_sum = sums[:, 3:6]
    g_R = sums[:, 6:15].reshape(N, 3, 3)
    g_eps = sums[:, 15:17] if dfde is not None else None
    g_pos = -np.einsum("nji,nj->ni", cache.R, gu_sum)
    g_rot = rotmat_grad_to_quat(pset.rotation, g_R)
    g_logits = sem * (g_c - np.sum(g_c * sem, axis=1, keepdims=True))
    return ParamGradient(g_pos, g_scale, g_rot, g_op, g_eps, g_logits)


def field_gradients(points, grad_occ, grad_sem, primitives, opacity_scaled=False, pairs=None):
    """Gradients of ``J`` given per-point ``dJ/dp_occ`` and ``dJ/dp_sem``.

    Uses every (point, primitive) pair unless ``pairs = (pt, prim)`` is given.
    """
    pset = as_primitive_set(primitives)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    grad_occ = np.asarray(grad_occ, dtype=np.float64)
    if grad_occ.shape[0] != len(points):
        raise ValueError("gradient count does not match point count")
    if pairs is None:
        pairs = all_pairs(len(points), len(pset))
    cache = forward_pairs(points, pset, *pairs, opacity_scaled=opacity_scaled)
    return backward_pairs(cache, grad_occ, grad_sem)
