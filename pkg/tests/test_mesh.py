import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncvem.generators import MESH_KINDS, generate_mesh, polygon_mesh
from ncvem.mesh import (
    DegenerateEntityError,
    Mesh,
    MeshConnectivityError,
    MeshError,
    MeshFormatError,
    check_regularity,
    compute_entity_summaries,
    mesh_from_dict,
    mesh_to_dict,
    read_mesh,
    write_mesh,
)


@pytest.mark.parametrize(
    "kind, res, cells, faces, verts",
    [
        ("quad-structured", 2, 4, 12, 9),
        ("tri-structured", 1, 2, 5, 4),
        ("cube-structured", 2, 8, 36, 27),
    ],
)
def test_generator_counts(kind, res, cells, faces, verts):
    mesh = generate_mesh(kind, res)
    assert (mesh.n_cells, mesh.n_faces, len(mesh.vertices)) == (cells, faces, verts)


def test_unsupported_kind():
    with pytest.raises(MeshError, match="unsupported mesh kind"):
        generate_mesh("hex-curved", 2)


@pytest.mark.parametrize("res", [0, -1, 1.5])
def test_bad_resolution(res):
    with pytest.raises(MeshError):
        generate_mesh("quad-structured", res)


@pytest.mark.parametrize("kind", ["voronoi-2d", "quad-distorted"])
def test_random_generators_are_deterministic(kind):
    a = generate_mesh(kind, 4, seed=3)
    b = generate_mesh(kind, 4, seed=3)
    assert mesh_to_dict(a) == mesh_to_dict(b)
    assert mesh_to_dict(a) != mesh_to_dict(generate_mesh(kind, 4, seed=4))


def test_unit_square_summary():
    mesh = generate_mesh("quad-structured", 1)
    cell = compute_entity_summaries(mesh).cells[0]
    assert cell.centroid == pytest.approx([0.5, 0.5], abs=1e-15)
    assert cell.measure == pytest.approx(1.0, abs=1e-15)
    assert cell.diameter == pytest.approx(math.sqrt(2), abs=1e-15)


def test_bottom_edge_normal_points_down():
    mesh = generate_mesh("quad-structured", 1)
    cell = mesh.cell(0)
    for i, face in enumerate(cell.faces):
        if np.allclose(face.centroid, [0.5, 0.0]):
            assert face.measure == 1.0
            assert cell.normals[i] == pytest.approx([0.0, -1.0], abs=1e-15)
            break
    else:
        pytest.fail("bottom edge not found")


def test_unit_cube_summary():
    cell = generate_mesh("cube-structured", 1).cell(0)
    assert cell.measure == pytest.approx(1.0, rel=1e-14)
    assert cell.diameter == pytest.approx(math.sqrt(3), rel=1e-15)
    assert cell.centroid == pytest.approx([0.5] * 3, abs=1e-14)


@pytest.mark.parametrize("kind", MESH_KINDS)
def test_measures_sum_to_domain(kind, mesh_cache):
    mesh = mesh_cache(kind, 3)
    assert sum(g.measure for g in mesh.cell_geometry) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind", MESH_KINDS)
def test_divergence_identity(kind, mesh_cache):
    mesh = mesh_cache(kind, 3)
    d = mesh.dimension
    for g in mesh.cell_geometry:
        lhs = sum(f.measure * (n @ f.centroid) for f, n in zip(g.faces, g.normals))
        assert lhs == pytest.approx(d * g.measure, abs=1e-12)


@pytest.mark.parametrize("kind", MESH_KINDS)
def test_normals_unit_and_opposite(kind, mesh_cache):
    mesh = mesh_cache(kind, 3)
    per_face: dict[int, list[np.ndarray]] = {}
    for g in mesh.cell_geometry:
        assert np.allclose(np.linalg.norm(g.normals, axis=1), 1.0, atol=1e-14)
        for f, n in zip(g.faces, g.normals):
            per_face.setdefault(f.index, []).append(n)
    for fid, normals in per_face.items():
        assert len(normals) == (1 if mesh.boundary_faces[fid] else 2)
        if len(normals) == 2:
            assert np.allclose(normals[0], -normals[1], atol=1e-14)


def test_boundary_faces_on_domain_boundary(mesh_cache):
    mesh = mesh_cache("voronoi-2d", 4)
    for f, flag in zip(mesh.face_geometry, mesh.boundary_faces):
        on_edge = np.any(np.isclose(f.centroid, 0.0, atol=1e-12) | np.isclose(f.centroid, 1.0, atol=1e-12))
        assert on_edge == flag


def test_regular_quads_pass():
    report = check_regularity(generate_mesh("quad-structured", 4), 0.5)
    assert report.passed
    assert all(c.edge_ratio == pytest.approx(1 / math.sqrt(2)) for c in report.cells)
    assert report.h == pytest.approx(math.sqrt(2) / 4)


def test_needle_cell_fails():
    verts = [[0, 0], [1, 0], [1, 0.01], [0, 0.01], [1, 1], [0, 1]]
    mesh = polygon_mesh(verts, [[0, 1, 2, 3], [3, 2, 4, 5]])
    report = check_regularity(mesh, 0.1)
    assert not report.passed
    assert 0 in report.failed_cells
    assert report.cells[0].edge_ratio == pytest.approx(0.01 / math.hypot(1, 0.01))


def test_hexagon_dominant_is_exact_convex(mesh_cache):
    report = check_regularity(mesh_cache("hexagon-dominant", 3), 0.1)
    assert {c.star_verdict for c in report.cells} == {"exact-convex"}


def test_nonconvex_cell_kernel():
    # L-shaped hexagon: star-shaped, but not convex
    verts = [[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]]
    report = check_regularity(polygon_mesh(verts, [list(range(6))]), 0.1)
    cell = report.cells[0]
    assert cell.star_verdict == "exact-kernel"
    # kernel is the unit square [0,1]^2, inscribed diameter 1, h_K = 2 sqrt 2
    assert cell.star_rho == pytest.approx(1 / (2 * math.sqrt(2)), rel=1e-9)


@pytest.mark.parametrize("kind", MESH_KINDS)
def test_regularity_report_bounds(kind, mesh_cache):
    mesh = mesh_cache(kind, 3)
    report = check_regularity(mesh, 0.05)
    assert report.h == max(g.diameter for g in mesh.cell_geometry)
    assert all(0 < c.star_rho <= 1 for c in report.cells)


def test_round_trip(tmp_path, mesh_cache):
    for kind in ("quad-structured", "voronoi-2d", "tet-structured"):
        mesh = mesh_cache(kind, 2)
        path = tmp_path / f"{kind}.json"
        write_mesh(mesh, path)
        back = read_mesh(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert back.faces == mesh.faces
        assert back.cells == mesh.cells


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False).map(lambda x: round(x, 6)), min_size=2, max_size=2))
def test_round_trip_is_bit_exact(shift):
    verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float) * 0.37 + np.array(shift)
    mesh = polygon_mesh(verts, [[0, 1, 2, 3]])
    text = json.dumps(mesh_to_dict(mesh))
    assert np.array_equal(mesh_from_dict(json.loads(text)).vertices, mesh.vertices)


def test_face_shared_by_three_cells(tmp_path):
    # three triangles sharing the edge (0,1)
    data = {
        "dimension": 2,
        "vertices": [[0, 0], [1, 0], [0.5, 1], [0.5, -1], [0.5, 2]],
        "faces": [[0, 1], [1, 2], [2, 0], [0, 3], [3, 1], [1, 4], [4, 0]],
        "cells": [
            {"faces": [0, 1, 2], "signs": [1, 1, 1]},
            {"faces": [0, 3, 4], "signs": [-1, 1, 1]},
            {"faces": [0, 5, 6], "signs": [1, 1, 1]},
        ],
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(MeshConnectivityError, match="referenced by 3 cells"):
        read_mesh(path)


def test_empty_cell_list():
    with pytest.raises(MeshError, match="no cells"):
        mesh_from_dict({"dimension": 2, "vertices": [[0, 0]], "faces": [], "cells": []})


@pytest.mark.parametrize("text", ["{", "[]", '{"dimension": 2}'])
def test_malformed_files(tmp_path, text):
    path = tmp_path / "m.json"
    path.write_text(text)
    with pytest.raises(MeshFormatError):
        read_mesh(path)


def test_degenerate_cell():
    with pytest.raises(DegenerateEntityError):
        polygon_mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])


def test_inconsistent_orientation():
    with pytest.raises(MeshConnectivityError):
        Mesh(2, [[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1], [1, 2], [2, 0], [2, 3], [3, 0]],
             [([0, 1, 2], [1, 1, 1]), ([2, 3, 4], [1, 1, 1])])


def test_non_planar_face():
    verts = [[0, 0, 0], [1, 0, 0], [1, 1, 0.1], [0, 1, 0], [0.5, 0.5, 1]]
    faces = [[0, 1, 2, 3], [0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    with pytest.raises(MeshError, match="not planar"):
        Mesh(3, verts, faces, [([0, 1, 2, 3, 4], [-1, 1, 1, 1, 1])])


def test_permuted_mesh_has_same_geometry(mesh_cache):
    mesh = mesh_cache("voronoi-2d", 3)
    order = np.random.default_rng(0).permutation(mesh.n_cells)
    perm = mesh.permuted(order)
    assert [perm.cell(i).measure for i in range(mesh.n_cells)] == [mesh.cell(j).measure for j in order]
