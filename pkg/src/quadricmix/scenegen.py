"""Synthetic semantic occupancy scenes with analytically known geometry.

Manifest schema (JSON), either a preset reference::

    {"preset": "street", "seed": 3}

or an explicit shape list::

    {"grid": {"dims": [64, 64, 16], "origin": [-16, -16, -4], "voxel_size": [0.5, 0.5, 0.5]},
     "class_count": 16,
     "shapes": [{"kind": "box", "center": [0, 0, 0], "rotation": [1, 0, 0, 0],
                 "size": [2, 1, 0.75], "class_id": 4}, ...]}

``size`` holds half-extents for boxes, semi-axes for ellipsoids, scales for
superquadrics (which also take ``"eps": [e1, e2]``), ``(rx, ry, half_height)``
for cylinders and ``(_, _, half_thickness)`` for ground planes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .primitives import canonical_implicit, quat_to_rotmat
from .rasterizer import (
    N_SEMANTIC_CLASSES,
    GridSpec,
    OccupancyGrid,
    _box_voxel_ranges,
    box_voxel_indices,
)

SHAPE_KINDS = ("box", "cylinder", "ellipsoid", "superquadric", "ground-plane")

CLASS_NAMES = (
    "empty", "barrier", "bicycle", "bus", "car", "construction_vehicle", "motorcycle",
    "pedestrian", "traffic_cone", "trailer", "truck", "driveable_surface", "other_flat",
    "sidewalk", "terrain", "manmade", "vegetation",
)
CLASS_ID = {name: i for i, name in enumerate(CLASS_NAMES)}

IDENTITY = (1.0, 0.0, 0.0, 0.0)


@dataclass
class ShapeSpec:
    kind: str
    center: np.ndarray
    size: np.ndarray
    class_id: int
    rotation: np.ndarray = field(default_factory=lambda: np.array(IDENTITY))
    eps: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if np.any(self.size <= 0):
            raise ValueError("shape sizes must be positive")
        if not 1 <= int(self.class_id) <= 255:
            raise ValueError("class_id must be at least 1")
        self.class_id = int(self.class_id)
        self.eps = tuple(float(e) for e in self.eps)

    def to_dict(self):
        d = {"kind": self.kind, "center": self.center.tolist(), "size": self.size.tolist(),
             "rotation": self.rotation.tolist(), "class_id": self.class_id}
        if self.kind == "superquadric":
            d["eps"] = list(self.eps)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], center=d["center"], size=d["size"], class_id=d["class_id"],
                   rotation=d.get("rotation", IDENTITY), eps=d.get("eps", (1.0, 1.0)))

    def bounding_box(self):
        """World AABB, or ``None`` for unbounded ground planes."""
        if self.kind == "ground-plane":
            return None
        R = quat_to_rotmat(self.rotation)
        half = np.abs(R).T @ self.size
        return self.center - half, self.center + half


def analytic_inside(shape: ShapeSpec, point):
    """Exact containment of ``point`` (``(3,)`` or ``(..., 3)``) in ``shape``."""
    p = np.asarray(point, dtype=np.float64)
    if shape.kind == "ground-plane":
        return np.abs(p[..., 2] - shape.center[2]) <= shape.size[2]
    u = (p - shape.center) @ quat_to_rotmat(shape.rotation).T
    s = shape.size
    if shape.kind == "box":
        return np.all(np.abs(u) <= s, axis=-1)
    if shape.kind == "cylinder":
        radial = (u[..., 0] / s[0]) ** 2 + (u[..., 1] / s[1]) ** 2
        return (radial <= 1.0) & (np.abs(u[..., 2]) <= s[2])
    if shape.kind == "ellipsoid":
        return np.sum((u / s) ** 2, axis=-1) <= 1.0
    return canonical_implicit(u, s, shape.eps[0], shape.eps[1]) <= 1.0


def generate_scene(shapes, spec: GridSpec, class_count=N_SEMANTIC_CLASSES) -> OccupancyGrid:
    """Label each voxel with the last shape (in list order) containing its center."""
    shapes = list(shapes)
    if not shapes:
        raise ValueError("shape list is empty")
    labels = np.zeros(spec.n_voxels, dtype=np.uint8)
    for shape in shapes:
        if shape.class_id > class_count:
            raise ValueError(f"class_id {shape.class_id} exceeds class_count {class_count}")
        box = shape.bounding_box()
        if box is None:
            lo = np.array([-np.inf, -np.inf, shape.center[2] - shape.size[2]])
            hi = np.array([np.inf, np.inf, shape.center[2] + shape.size[2]])
            lo[:2], hi[:2] = spec.lower[:2], spec.upper[:2]
        else:
            lo, hi = box
        i0, i1, empty = _box_voxel_ranges(spec, lo, hi)
        if empty:
            continue
        idx = box_voxel_indices(spec, i0, i1)
        inside = analytic_inside(shape, spec.centers(idx))
        labels[idx[inside]] = shape.class_id
    return OccupancyGrid(spec, labels, class_count=class_count)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

SMALL_SPEC = GridSpec((64, 64, 16), (-16.0, -16.0, -4.0), (0.5, 0.5, 0.5))
SINGLE_BOX_SPEC = GridSpec((32, 32, 16), (-8.0, -8.0, -4.0), (0.5, 0.5, 0.5))


def yaw_quat(theta):
    return np.array([np.cos(theta / 2), 0.0, 0.0, np.sin(theta / 2)])


def _single_box(rng):
    return [ShapeSpec("box", (0.0, 0.0, 0.0), (3.0, 2.0, 1.5), CLASS_ID["car"])], SINGLE_BOX_SPEC


def _box_grid(rng):
    spec = SMALL_SPEC
    classes = ["car", "truck", "bus", "barrier", "manmade", "trailer", "construction_vehicle",
               "vegetation", "other_flat"]
    shapes = []
    for k, (i, j) in enumerate(np.ndindex(3, 3)):
        cx, cy = -10.0 + 10.0 * i, -10.0 + 10.0 * j
        half = rng.uniform([1.0, 0.75, 0.75], [3.0, 2.0, 2.5])
        cz = spec.lower[2] + half[2] + 0.5
        shapes.append(ShapeSpec("box", (cx, cy, cz), half, CLASS_ID[classes[k]],
                                yaw_quat(rng.uniform(-0.4, 0.4))))
    return shapes, spec


def _random_shape(rng, spec: GridSpec, class_id):
    kind = rng.choice(["box", "cylinder", "ellipsoid", "superquadric"])
    lower, upper = spec.lower, spec.upper
    extent = upper - lower
    size = rng.uniform(0.06, 0.16, 3) * extent.min() * np.array([1.5, 1.5, 0.6])
    size[2] = min(size[2], 0.3 * extent[2])
    rot = yaw_quat(rng.uniform(-np.pi, np.pi))
    # a yaw-only rotation keeps the z extent fixed; the xy extent is at most the diagonal
    reach = np.array([np.hypot(size[0], size[1])] * 2 + [size[2]])
    center = rng.uniform(lower + reach, upper - reach)
    eps = tuple(rng.uniform(0.2, 1.5, 2)) if kind == "superquadric" else (1.0, 1.0)
    return ShapeSpec(str(kind), center, size, class_id, rot, eps)


def _random_k(rng, k):
    spec = SMALL_SPEC
    classes = rng.integers(1, N_SEMANTIC_CLASSES + 1, size=k)
    return [_random_shape(rng, spec, int(c)) for c in classes], spec


def _street(rng):
    spec = GridSpec()
    lo, hi = spec.lower, spec.upper
    ground_top = lo[2] + 1.0
    shapes = [ShapeSpec("ground-plane", (0.0, 0.0, lo[2] + 0.5), (1.0, 1.0, 0.5),
                        CLASS_ID["driveable_surface"])]
    for side in (-1.0, 1.0):
        shapes.append(ShapeSpec("box", (0.0, side * 9.0, lo[2] + 0.75), (50.0, 2.5, 0.75),
                                CLASS_ID["sidewalk"]))
        shapes.append(ShapeSpec("box", (0.0, side * 31.25, lo[2] + 0.75), (50.0, 18.75, 0.75),
                                CLASS_ID["terrain"]))
    # buildings behind the sidewalks
    for side in (-1.0, 1.0):
        x = lo[0]
        while x < hi[0] - 6.0:
            length = rng.uniform(8.0, 18.0)
            depth = rng.uniform(6.0, 12.0)
            height = rng.uniform(4.0, 7.5)
            cy = side * (16.0 + depth / 2 + rng.uniform(0.0, 4.0))
            shapes.append(ShapeSpec("box", (x + length / 2, cy, lo[2] + height / 2),
                                    (length / 2, depth / 2, height / 2), CLASS_ID["manmade"]))
            x += length + rng.uniform(2.0, 6.0)
    # vehicles in two lanes
    for lane in (-3.0, 3.0):
        x = lo[0] + rng.uniform(0.0, 6.0)
        while x < hi[0] - 8.0:
            kind = rng.choice(["car", "car", "car", "truck", "bus"])
            dims = {"car": (2.3, 0.95, 0.8), "truck": (3.5, 1.25, 1.5), "bus": (5.5, 1.3, 1.6)}
            half = np.array(dims[kind]) * rng.uniform(0.9, 1.1, 3)
            cz = ground_top + half[2]
            shapes.append(ShapeSpec("box", (x + half[0], lane + rng.uniform(-0.3, 0.3), cz), half,
                                    CLASS_ID[kind], yaw_quat(rng.uniform(-0.08, 0.08))))
            x += 2 * half[0] + rng.uniform(3.0, 12.0)
    # poles and pedestrians on the sidewalks
    for side in (-1.0, 1.0):
        for x in np.arange(lo[0] + 5.0, hi[0], 15.0) + rng.uniform(-2.0, 2.0):
            shapes.append(ShapeSpec("cylinder", (x, side * 10.5, ground_top + 0.5 + 2.5),
                                    (0.35, 0.35, 2.5), CLASS_ID["manmade"]))
        for x in rng.uniform(lo[0] + 2.0, hi[0] - 2.0, 4):
            shapes.append(ShapeSpec("cylinder", (x, side * rng.uniform(7.5, 9.5),
                                                 ground_top + 0.5 + 0.9),
                                    (0.4, 0.4, 0.9), CLASS_ID["pedestrian"]))
    # vegetation blobs on the terrain
    for _ in range(10):
        side = rng.choice([-1.0, 1.0])
        r = rng.uniform([1.5, 1.5, 1.5], [3.5, 3.5, 2.5])
        c = (rng.uniform(lo[0] + 4, hi[0] - 4), side * rng.uniform(12.5, 15.0),
             ground_top + 0.5 + r[2])
        shapes.append(ShapeSpec("ellipsoid", c, r, CLASS_ID["vegetation"]))
    return shapes, spec


def preset_scenes(name: str, seed: int = 0):
    """Named scene corpora: ``single-box``, ``box-grid``, ``street``, ``random-<k>``."""
    rng = np.random.default_rng(seed)
    if name == "single-box":
        return _single_box(rng)
    if name == "box-grid":
        return _box_grid(rng)
    if name == "street":
        return _street(rng)
    m = re.fullmatch(r"random-(\d+)", name)
    if m and int(m.group(1)) > 0:
        return _random_k(rng, int(m.group(1)))
    raise ValueError(f"unknown preset {name!r}")


def preset_grid(name: str, seed: int = 0) -> OccupancyGrid:
    shapes, spec = preset_scenes(name, seed)
    return generate_scene(shapes, spec)


def load_manifest(path):
    """Parse a scene manifest into ``(shapes, spec, class_count)``."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "preset" in doc:
        shapes, spec = preset_scenes(doc["preset"], int(doc.get("seed", 0)))
        return shapes, spec, N_SEMANTIC_CLASSES
    try:
        g = doc["grid"]
        spec = GridSpec(g["dims"], g["origin"], g["voxel_size"])
        shapes = [ShapeSpec.from_dict(s) for s in doc["shapes"]]
    except KeyError as exc:
        raise ValueError(f"manifest is missing field {exc.args[0]!r}") from None
    return shapes, spec, int(doc.get("class_count", N_SEMANTIC_CLASSES))


def save_manifest(path, shapes, spec: GridSpec, class_count=N_SEMANTIC_CLASSES):
    doc = {
        "grid": {"dims": list(spec.dims), "origin": list(spec.origin),
                 "voxel_size": list(spec.voxel_size)},
        "class_count": class_count,
        "shapes": [s.to_dict() for s in shapes],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
