"""Binary grid files and JSON primitive-set files.

Grid file layout (little-endian)::

    offset  size  field
    0       4     magic b"OCCG"
    4       4     u32 format version (1)
    8       12    u32 dims X, Y, Z
    20      12    f32 origin
    32      12    f32 voxel size
    44      4     u32 class count
    48      X*Y*Z u8 labels, x fastest

The primitive file is a JSON object with the primitive kind, eps bounds, class
count, a snapshot of the fit configuration and one record per primitive.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .primitives import KINDS, SUPERQUADRIC, PrimitiveSet
from .rasterizer import GridSpec, OccupancyGrid

GRID_MAGIC = b"OCCG"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sI3I3f3fI")
HEADER_SIZE = _HEADER.size  # 48

PRIMITIVE_FORMAT = "quadricmix-primitives"
PRIMITIVE_VERSION = 1


class FormatError(ValueError):
    """Malformed file.  ``offset`` is the byte offset of the problem, if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def grid_to_bytes(grid: OccupancyGrid) -> bytes:
    spec = grid.spec
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, *spec.dims, *spec.origin,
                          *spec.voxel_size, grid.class_count)
    return header + np.ascontiguousarray(grid.labels, dtype=np.uint8).tobytes()


def grid_from_bytes(data: bytes) -> OccupancyGrid:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"truncated header: {len(data)} of {HEADER_SIZE} bytes", len(data))
    fields = _HEADER.unpack_from(data, 0)
    magic, version = fields[0], fields[1]
    if magic != GRID_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GRID_MAGIC!r}", 0)
    if version != GRID_VERSION:
        raise FormatError(f"unsupported version {version}, expected {GRID_VERSION}", 4)
    dims = tuple(int(d) for d in fields[2:5])
    # float32 values widened to float64 exactly
    origin = tuple(float(v) for v in fields[5:8])
    voxel = tuple(float(v) for v in fields[8:11])
    class_count = int(fields[11])
    if min(dims) < 1:
        raise FormatError(f"grid dims must be positive, got {dims}", 8)
    if min(voxel) <= 0:
        raise FormatError(f"voxel size must be positive, got {voxel}", 32)
    n = dims[0] * dims[1] * dims[2]
    payload = len(data) - HEADER_SIZE
    if payload < n:
        raise FormatError(f"truncated payload: {payload} of {n} label bytes", len(data))
    if payload > n:
        raise FormatError(f"{payload - n} trailing bytes after payload", HEADER_SIZE + n)
    labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=HEADER_SIZE).copy()
    bad = np.flatnonzero(labels > class_count)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} exceeds class count {class_count}",
                          HEADER_SIZE + int(bad[0]))
    spec = GridSpec(dims=dims, origin=origin, voxel_size=voxel)
    return OccupancyGrid(spec, labels, class_count)


def save_grid(path, grid: OccupancyGrid):
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(grid))


def load_grid(path) -> OccupancyGrid:
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# primitive sets
# ---------------------------------------------------------------------------


def primitives_to_dict(pset: PrimitiveSet, config=None) -> dict:
    if config is not None and hasattr(config, "to_dict"):
        config = config.to_dict()
    records = []
    for i in range(len(pset)):
        rec = {
            "position": pset.position[i].tolist(),
            "scale": pset.scale[i].tolist(),
            "rotation": pset.rotation[i].tolist(),
            "opacity": float(pset.opacity[i]),
            "semantics": pset.semantics[i].tolist(),
        }
        if pset.kind == SUPERQUADRIC:
            rec["eps1"] = float(pset.eps[i, 0])
            rec["eps2"] = float(pset.eps[i, 1])
        records.append(rec)
    return {
        "format": PRIMITIVE_FORMAT,
        "version": PRIMITIVE_VERSION,
        "kind": pset.kind,
        "eps_bounds": list(pset.eps_bounds),
        "class_count": int(pset.n_classes),
        "literal_z": bool(pset.literal_z),
        "config": config,
        "primitives": records,
    }


def _field(obj, name, where):
    if not isinstance(obj, dict) or name not in obj:
        raise ValueError(f"{where}: missing field '{name}'")
    return obj[name]


def _array(value, shape, name, where):
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValueError(f"{where}: field '{name}' is not numeric") from None
    if arr.shape != shape:
        raise ValueError(f"{where}: field '{name}' has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{where}: field '{name}' has non-finite values")
    return arr


def primitives_from_dict(doc: dict) -> PrimitiveSet:
    kind = _field(doc, "kind", "file")
    if kind not in KINDS:
        raise ValueError(f"file: field 'kind' must be one of {KINDS}, got {kind!r}")
    lo, hi = _array(_field(doc, "eps_bounds", "file"), (2,), "eps_bounds", "file")
    if not 0 < lo < hi:
        raise ValueError(f"file: field 'eps_bounds' must satisfy 0 < lo < hi, got ({lo}, {hi})")
    n_classes = int(_field(doc, "class_count", "file"))
    if n_classes < 1:
        raise ValueError("file: field 'class_count' must be >= 1")
    records = _field(doc, "primitives", "file")
    if not isinstance(records, list) or not records:
        raise ValueError("file: field 'primitives' must be a non-empty list")
    n = len(records)
    pos = np.empty((n, 3))
    scale = np.empty((n, 3))
    rot = np.empty((n, 4))
    opa = np.empty(n)
    sem = np.empty((n, n_classes))
    eps = np.empty((n, 2)) if kind == SUPERQUADRIC else None
    for i, rec in enumerate(records):
        where = f"primitive {i}"
        pos[i] = _array(_field(rec, "position", where), (3,), "position", where)
        scale[i] = _array(_field(rec, "scale", where), (3,), "scale", where)
        if np.any(scale[i] <= 0):
            raise ValueError(f"{where}: field 'scale' must be > 0")
        rot[i] = _array(_field(rec, "rotation", where), (4,), "rotation", where)
        if not np.any(rot[i]):
            raise ValueError(f"{where}: field 'rotation' is the zero quaternion")
        opa[i] = _array(_field(rec, "opacity", where), (), "opacity", where)
        if not 0 <= opa[i] <= 1:
            raise ValueError(f"{where}: field 'opacity' must lie in [0, 1]")
        sem[i] = _array(_field(rec, "semantics", where), (n_classes,), "semantics", where)
        if np.any(sem[i] < 0) or abs(sem[i].sum() - 1) > 1e-6:
            raise ValueError(f"{where}: field 'semantics' must be a probability vector")
        if eps is not None:
            for j, name in enumerate(("eps1", "eps2")):
                eps[i, j] = _array(_field(rec, name, where), (), name, where)
                if not lo <= eps[i, j] <= hi:
                    raise ValueError(f"{where}: field '{name}' outside eps bounds ({lo}, {hi})")
    meta = {}
    if doc.get("config") is not None:
        meta["config"] = doc["config"]
    return PrimitiveSet(kind, pos, scale, rot, opa, sem, eps, (lo, hi),
                        literal_z=bool(doc.get("literal_z", False)), meta=meta)


def save_primitives(path, pset: PrimitiveSet, config=None):
    doc = primitives_to_dict(pset, config)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_primitives(path) -> PrimitiveSet:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", e.pos) from None
    return primitives_from_dict(doc)


__all__ = [
    "FormatError", "GRID_MAGIC", "GRID_VERSION", "HEADER_SIZE",
    "grid_to_bytes", "grid_from_bytes", "save_grid", "load_grid",
    "primitives_to_dict", "primitives_from_dict", "save_primitives", "load_primitives",
]
