import numpy as np
import pytest

from conftest import random_set
from quadricmix.mesh import export_mesh, read_obj_vertices, unit_surface
from quadricmix.primitives import PrimitiveSet


def local_f(pset, verts, groups):
    R = pset.rotation_matrices()
    out = []
    for i in range(len(pset)):
        u = (verts[groups == i] - pset.position[i]) @ R[i].T
        out.append(pset.implicit(u, i))
    return np.concatenate(out)


class TestExport:
    def test_ellipsoid_vertices_on_surface(self, tmp_path):
        ps = PrimitiveSet("superquadric", [[1, 2, 3]], [[2, 1, 0.5]], [[0.9, 0.1, 0.3, 0.2]],
                          [0.7], [[0.2, 0.8]], [[1.0, 1.0]])
        export_mesh(ps, tmp_path / "e.obj", 16)
        v, g = read_obj_vertices(tmp_path / "e.obj")
        assert np.abs(local_f(ps, v, g) - 1).max() < 1e-6

    @pytest.mark.parametrize("kind", ["superquadric", "gaussian"])
    @pytest.mark.parametrize("literal_z", [False, True])
    def test_any_exponents(self, tmp_path, rng, kind, literal_z):
        ps = random_set(rng, n=6, kind=kind, spread=5, literal_z=literal_z)
        export_mesh(ps, tmp_path / "m.obj", 20)
        v, g = read_obj_vertices(tmp_path / "m.obj")
        assert np.abs(local_f(ps, v, g) - 1).max() < 1e-6

    def test_vertex_count(self):
        for res in (4, 10, 33):
            verts, faces = unit_surface(0.5, 1.5, res)
            assert len(verts) == res * (res - 1) + 2
            assert len(faces) == res * res

    def test_groups_and_materials(self, tmp_path, rng):
        ps = random_set(rng, n=3, n_classes=16)
        export_mesh(ps, tmp_path / "m.obj", 6)
        text = (tmp_path / "m.obj").read_text()
        assert text.count("\ng primitive_") == 3
        assert "mtllib m.mtl" in text
        from quadricmix.scenegen import CLASS_NAMES
        first = CLASS_NAMES[1 + int(np.argmax(ps.semantics[0]))]
        assert f"usemtl {first}" in text
        assert (tmp_path / "m.mtl").exists()

    def test_faces_reference_valid_vertices(self, tmp_path, rng):
        ps = random_set(rng, n=2)
        n = export_mesh(ps, tmp_path / "m.obj", 8)
        idx = [int(t) for line in (tmp_path / "m.obj").read_text().splitlines()
               if line.startswith("f ") for t in line.split()[1:]]
        assert min(idx) == 1 and max(idx) == n

    def test_resolution_limits(self, tmp_path, rng):
        ps = random_set(rng, n=1)
        with pytest.raises(ValueError):
            export_mesh(ps, tmp_path / "m.obj", 3)
        assert export_mesh(ps, tmp_path / "m.obj", 500, write_mtl=False) == 128 * 127 + 2
