"""Dense voxel grids and rasterization of primitive mixtures onto them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field import finalize, primitive_alpha, _occupancy_alpha
from .primitives import as_primitive_set, PrimitiveSet

DEFAULT_CUTOFF_F = 12.0
DEFAULT_TAU = 0.5
N_SEMANTIC_CLASSES = 16


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel grid.  ``origin`` is the minimum corner."""

    dims: tuple = (200, 200, 16)
    origin: tuple = (-50.0, -50.0, -5.0)
    voxel_size: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        origin = tuple(float(o) for o in self.origin)
        voxel = tuple(float(v) for v in self.voxel_size)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"grid dims must be three positive integers, got {self.dims}")
        if len(voxel) != 3 or min(voxel) <= 0 or len(origin) != 3:
            raise ValueError("voxel_size must be three positive numbers")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "voxel_size", voxel)

    @property
    def n_voxels(self):
        X, Y, Z = self.dims
        return X * Y * Z

    @property
    def lower(self):
        return np.asarray(self.origin)

    @property
    def upper(self):
        return self.lower + np.asarray(self.dims) * np.asarray(self.voxel_size)

    @property
    def voxel_diagonal(self):
        return float(np.linalg.norm(self.voxel_size))

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def flat_index(self, ix, iy, iz):
        X, Y, _ = self.dims
        return ix + X * (iy + Y * iz)

    def unravel(self, idx):
        X, Y, _ = self.dims
        idx = np.asarray(idx)
        return idx % X, (idx // X) % Y, idx // (X * Y)

    def centers(self, idx=None):
        """Voxel centers for flat indices ``idx`` (all voxels if ``None``)."""
        if idx is None:
            idx = np.arange(self.n_voxels)
        ijk = np.stack(self.unravel(idx), axis=-1)
        return self.lower + (ijk + 0.5) * np.asarray(self.voxel_size)


def voxel_centers(spec: GridSpec):
    """All voxel centers as a ``(X*Y*Z, 3)`` array in x-fastest order."""
    return spec.centers()


@dataclass
class OccupancyGrid:
    """Per-voxel labels: 0 is empty, 1..class_count are semantic classes.

    ``labels`` is flat in x-fastest order; :meth:`volume` gives an
    ``(X, Y, Z)`` view.
    """

    spec: GridSpec
    labels: np.ndarray
    class_count: int = N_SEMANTIC_CLASSES

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim == 3:
            if labels.shape != self.spec.dims:
                raise ValueError(f"label volume shape {labels.shape} != dims {self.spec.dims}")
            labels = labels.transpose(2, 1, 0).ravel()
        labels = labels.reshape(-1)
        if labels.size != self.spec.n_voxels:
            raise ValueError(f"expected {self.spec.n_voxels} labels, got {labels.size}")
        if labels.size and (labels.min() < 0 or labels.max() > self.class_count):
            raise ValueError(f"labels must lie in 0..{self.class_count}")
        if not 1 <= self.class_count <= 255:
            raise ValueError("class_count must lie in 1..255")
        self.labels = labels.astype(np.uint8)

    def volume(self):
        X, Y, Z = self.spec.dims
        return self.labels.reshape(Z, Y, X).transpose(2, 1, 0)

    @property
    def occupied(self):
        return self.labels > 0

    def __eq__(self, other):
        return (isinstance(other, OccupancyGrid) and self.spec == other.spec
                and self.class_count == other.class_count
                and np.array_equal(self.labels, other.labels))


@dataclass
class ProbabilityGrid:
    spec: GridSpec
    p_occ: np.ndarray
    p_sem: np.ndarray
    n_evaluations: int = 0
    box_voxels: list = field(default_factory=list)


def support_boxes(pset: PrimitiveSet, cutoff_f):
    """World-space AABBs ``(lo, hi)`` enclosing each primitive's ``f <= cutoff_f`` region."""
    R = pset.rotation_matrices()
    H = pset.support_radii(cutoff_f)
    # x = m + R^T u, so world half-extent j is sum_k |R_kj| H_k
    half = np.einsum("nkj,nk->nj", np.abs(R), H)
    return pset.position - half, pset.position + half


def _box_voxel_ranges(spec: GridSpec, lo, hi):
    o = spec.lower
    v = np.asarray(spec.voxel_size)
    dims = np.asarray(spec.dims)
    i0 = np.ceil((lo - o) / v - 0.5)
    i1 = np.floor((hi - o) / v - 0.5)
    empty = np.any((i1 < 0) | (i0 > dims - 1) | (i0 > i1), axis=-1)
    i0 = np.clip(i0, 0, dims - 1).astype(np.int64)
    i1 = np.clip(i1, 0, dims - 1).astype(np.int64)
    return i0, i1, empty


def box_voxel_indices(spec: GridSpec, i0, i1):
    ix = np.arange(i0[0], i1[0] + 1)
    iy = np.arange(i0[1], i1[1] + 1)
    iz = np.arange(i0[2], i1[2] + 1)
    return spec.flat_index(ix[None, None, :], iy[None, :, None], iz[:, None, None]).ravel()


def rasterize(primitives, spec: GridSpec, cutoff_f=DEFAULT_CUTOFF_F, opacity_scaled=False):
    """Evaluate the mixture at every voxel center, visiting only support boxes.

    With ``cutoff_f = inf`` every primitive visits every voxel and the result
    is bitwise identical to :func:`quadricmix.field.evaluate_field` on
    :func:`voxel_centers`.
    """
    pset = as_primitive_set(primitives)
    V, C = spec.n_voxels, pset.n_classes
    centers = voxel_centers(spec)
    Rs = pset.rotation_matrices()
    log_empty = np.zeros(V)
    num = np.zeros((V, C))
    den = np.zeros(V)
    n_eval = 0
    box_voxels = []
    exhaustive = math.isinf(cutoff_f)
    if not exhaustive:
        lo, hi = support_boxes(pset, cutoff_f)
        i0, i1, empty = _box_voxel_ranges(spec, lo, hi)
    for i in range(len(pset)):
        if exhaustive:
            idx = slice(None)
            pts = centers
            count = V
        else:
            if empty[i]:
                box_voxels.append(0)
                continue
            idx = box_voxel_indices(spec, i0[i], i1[i])
            pts = centers[idx]
            count = len(idx)
        ag = primitive_alpha(pts, pset, i, Rs[i])
        log_empty[idx] += np.log1p(-_occupancy_alpha(ag, pset.opacity[i], opacity_scaled))
        w = ag * pset.opacity[i]
        den[idx] += w
        num[idx] += w[:, None] * pset.semantics[i]
        n_eval += count
        box_voxels.append(count)
    p_occ, p_sem = finalize(log_empty, num, den)
    return ProbabilityGrid(spec, p_occ, p_sem, n_eval, box_voxels)


def discretize(grid: ProbabilityGrid, tau=DEFAULT_TAU) -> OccupancyGrid:
    """Label voxels empty where ``p_occ < tau``, else ``1 + argmax(p_sem)``."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    labels = np.where(grid.p_occ < tau, 0, 1 + np.argmax(grid.p_sem, axis=1))
    return OccupancyGrid(grid.spec, labels, class_count=grid.p_sem.shape[1])


def candidate_pairs(points, lo, hi, cell_size=None):
    """(point, primitive) index pairs with the point inside the primitive's box.

    Bins the boxes into a uniform cell grid over the points' bounding box so
    the cost scales with the number of overlaps rather than points times
    primitives.  Pairs come out grouped by point, primitives ascending.
    """
    points = np.asarray(points, dtype=np.float64)
    B = len(points)
    if B == 0 or len(lo) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    pmin = points.min(axis=0)
    pmax = points.max(axis=0)
    if cell_size is None:
        ext = np.median(hi - lo, axis=0)
        span = np.maximum(pmax - pmin, 1e-9)
        cell_size = np.clip(ext / 2.0, span / 256.0, None)
        cell_size = np.maximum(cell_size, 1e-6)
    cell = np.broadcast_to(np.asarray(cell_size, dtype=np.float64), (3,))
    G = np.floor((pmax - pmin) / cell).astype(np.int64) + 1
    valid = np.all(hi >= pmin, axis=1) & np.all(lo <= pmax, axis=1)
    ids = np.nonzero(valid)[0]
    c0 = np.clip(np.floor((lo[ids] - pmin) / cell), 0, G - 1).astype(np.int64)
    c1 = np.clip(np.floor((hi[ids] - pmin) / cell), 0, G - 1).astype(np.int64)
    ext = c1 - c0 + 1
    counts = np.prod(ext, axis=1)
    total = int(counts.sum())
    starts = np.cumsum(counts) - counts
    rep = np.repeat(np.arange(len(ids)), counts)
    offs = np.arange(total) - starts[rep]
    ex, ey = ext[rep, 0], ext[rep, 1]
    cx = c0[rep, 0] + offs % ex
    cy = c0[rep, 1] + (offs // ex) % ey
    cz = c0[rep, 2] + offs // (ex * ey)
    keys = cx + G[0] * (cy + G[1] * cz)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    cell_prims = ids[rep[order]]

    pc = np.minimum(np.floor((points - pmin) / cell).astype(np.int64), G - 1)
    pkeys = pc[:, 0] + G[0] * (pc[:, 1] + G[1] * pc[:, 2])
    start = np.searchsorted(keys, pkeys, side="left")
    end = np.searchsorted(keys, pkeys, side="right")
    cnt = end - start
    pt = np.repeat(np.arange(B), cnt)
    first = np.cumsum(cnt) - cnt
    pos = np.arange(len(pt)) - first[pt] + start[pt]
    prim = cell_prims[pos]
    p = points[pt]
    inside = np.all((p >= lo[prim]) & (p <= hi[prim]), axis=1)
    return pt[inside], prim[inside]
