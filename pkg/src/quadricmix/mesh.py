"""Wavefront OBJ export of primitive surfaces."""

from __future__ import annotations

import colorsys
import logging
import os

import numpy as np

from .primitives import GAUSSIAN, PrimitiveSet
from .scenegen import CLASS_NAMES

log = logging.getLogger(__name__)

MIN_RESOLUTION = 4
MAX_RESOLUTION = 128


def _spow(v, p):
    """Signed power ``sign(v) * |v|^p``."""
    return np.sign(v) * np.abs(v) ** p


def _clean_trig(theta):
    c, s = np.cos(theta), np.sin(theta)
    # exact zeros at multiples of pi/2 keep small exponents from bulging the poles
    c[np.abs(c) < 1e-12] = 0.0
    s[np.abs(s) < 1e-12] = 0.0
    return c, s


def unit_surface(eps1, eps2, resolution, literal_z=False):
    """Vertices ``(V, 3)`` and faces (lists of 0-based indices) of a unit-scale surface.

    Latitude ``eta`` runs over ``resolution - 1`` interior rings plus two pole
    vertices; longitude ``omega`` has ``resolution`` samples per ring.
    """
    res = int(resolution)
    eta = -np.pi / 2 + np.pi * np.arange(1, res) / res
    omega = -np.pi + 2 * np.pi * np.arange(res) / res
    ce, se = _clean_trig(eta)
    co, so = _clean_trig(omega)
    ez = eps2 if literal_z else eps1
    x = _spow(ce, eps1)[:, None] * _spow(co, eps2)[None, :]
    y = _spow(ce, eps1)[:, None] * _spow(so, eps2)[None, :]
    z = np.repeat(_spow(se, ez)[:, None], res, axis=1)
    ring = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    verts = np.vstack([[0.0, 0.0, -1.0], ring, [0.0, 0.0, 1.0]])
    south, north = 0, len(verts) - 1

    def vid(j, k):
        return 1 + j * res + (k % res)

    faces = []
    for k in range(res):
        faces.append((south, vid(0, k + 1), vid(0, k)))
    for j in range(res - 2):
        for k in range(res):
            faces.append((vid(j, k), vid(j, k + 1), vid(j + 1, k + 1), vid(j + 1, k)))
    for k in range(res):
        faces.append((north, vid(res - 2, k), vid(res - 2, k + 1)))
    return verts, faces


def primitive_vertices(pset: PrimitiveSet, index, resolution):
    """World-space vertices and faces of primitive ``index``."""
    if pset.kind == GAUSSIAN:
        # the f = 1 level set of 0.5 * |x/s|^2 is an ellipsoid with radii sqrt(2) s
        verts, faces = unit_surface(1.0, 1.0, resolution)
        radii = np.sqrt(2.0) * pset.scale[index]
    else:
        e1, e2 = pset.eps[index]
        verts, faces = unit_surface(e1, e2, resolution, pset.literal_z)
        radii = pset.scale[index]
    R = pset.rotation_matrices()[index]
    return (verts * radii) @ R + pset.position[index], faces


def class_name(k, n_classes):
    if n_classes == len(CLASS_NAMES) - 1:
        return CLASS_NAMES[k + 1]
    return f"class_{k + 1}"


def _palette(n):
    return [colorsys.hsv_to_rgb(i / max(n, 1), 0.65, 0.9) for i in range(n)]


def export_mesh(pset: PrimitiveSet, path, resolution=24, write_mtl=True):
    """Write one tessellated surface per primitive to an OBJ file.

    Each primitive is its own group using the material of its most likely
    class.  Returns the number of vertices written.
    """
    resolution = int(resolution)
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if resolution > MAX_RESOLUTION:
        log.warning("resolution %d capped at %d", resolution, MAX_RESOLUTION)
        resolution = MAX_RESOLUTION
    n_classes = pset.n_classes
    labels = np.argmax(pset.semantics, axis=1)
    mtl_path = os.path.splitext(str(path))[0] + ".mtl"
    lines = ["# primitive surfaces", f"# kind {pset.kind}, {len(pset)} primitives"]
    if write_mtl:
        lines.append(f"mtllib {os.path.basename(mtl_path)}")
    offset = 1
    for i in range(len(pset)):
        verts, faces = primitive_vertices(pset, i, resolution)
        lines.append(f"g primitive_{i}")
        lines.append(f"usemtl {class_name(labels[i], n_classes)}")
        lines.extend("v %.17g %.17g %.17g" % tuple(v) for v in verts)
        lines.extend("f " + " ".join(str(offset + j) for j in face) for face in faces)
        offset += len(verts)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if write_mtl:
        with open(mtl_path, "w") as fh:
            for k, rgb in enumerate(_palette(n_classes)):
                fh.write(f"newmtl {class_name(k, n_classes)}\n")
                fh.write("Kd %.4f %.4f %.4f\n\n" % rgb)
    return offset - 1


def read_obj_vertices(path):
    """Vertices ``(V, 3)`` and the group index of each, from an OBJ file."""
    verts, groups = [], []
    g = -1
    with open(path) as fh:
        for line in fh:
            if line.startswith("g "):
                g += 1
            elif line.startswith("v "):
                verts.append([float(t) for t in line.split()[1:4]])
                groups.append(g)
    return np.array(verts).reshape(-1, 3), np.array(groups, dtype=np.int64)
