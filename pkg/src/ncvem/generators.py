"""Desk-scale mesh generators on the unit square and unit cube."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import Voronoi

from .mesh import Mesh, MeshError

MESH_KINDS_2D = ("tri-structured", "quad-structured", "quad-distorted", "hexagon-dominant", "voronoi-2d")
MESH_KINDS_3D = ("cube-structured", "tet-structured")
MESH_KINDS = MESH_KINDS_2D + MESH_KINDS_3D


def kind_dimension(kind: str) -> int:
    if kind in MESH_KINDS_2D:
        return 2
    if kind in MESH_KINDS_3D:
        return 3
    raise MeshError(f"unsupported mesh kind {kind!r}; choose from {', '.join(MESH_KINDS)}")


def polygon_mesh(vertices, polygons) -> Mesh:
    """Mesh from counter-clockwise vertex loops sharing edges."""
    faces: list[tuple[int, int]] = []
    lookup: dict[tuple[int, int], int] = {}
    cells = []
    for loop in polygons:
        fids, signs = [], []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            key = (min(a, b), max(a, b))
            if key not in lookup:
                lookup[key] = len(faces)
                faces.append((a, b))
            fid = lookup[key]
            fids.append(fid)
            signs.append(1 if faces[fid] == (a, b) else -1)
        cells.append((fids, signs))
    return Mesh(2, np.asarray(vertices, dtype=float), faces, cells)


def polyhedron_mesh(vertices, polyhedra) -> Mesh:
    """Mesh from cells given as lists of face vertex loops.

    Face orientation signs are assigned geometrically against the mean of the
    cell's vertices, which is valid for cells star-shaped about that point.
    """
    vertices = np.asarray(vertices, dtype=float)
    faces: list[tuple[int, ...]] = []
    lookup: dict[tuple[int, ...], int] = {}
    cells = []
    for poly in polyhedra:
        center = vertices[sorted({v for f in poly for v in f})].mean(axis=0)
        fids, signs = [], []
        for loop in poly:
            key = tuple(sorted(loop))
            if key not in lookup:
                lookup[key] = len(faces)
                faces.append(tuple(loop))
            fid = lookup[key]
            stored = vertices[list(faces[fid])]
            nxt = np.roll(stored, -1, axis=0)
            normal = np.cross(stored, nxt).sum(axis=0)
            fids.append(fid)
            signs.append(1 if normal @ (stored.mean(axis=0) - center) > 0 else -1)
        cells.append((fids, signs))
    return Mesh(3, vertices, faces, cells)


def _grid_vertices_2d(n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(t, t, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _quad_loops(n: int) -> list[list[int]]:
    vid = lambda i, j: j * (n + 1) + i  # noqa: E731
    return [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)] for j in range(n) for i in range(n)]


def quad_structured(n: int) -> Mesh:
    return polygon_mesh(_grid_vertices_2d(n), _quad_loops(n))


def tri_structured(n: int) -> Mesh:
    tris = []
    for a, b, c, d in _quad_loops(n):
        tris.append([a, b, c])
        tris.append([a, c, d])
    return polygon_mesh(_grid_vertices_2d(n), tris)


def quad_distorted(n: int, seed: int = 0, amplitude: float = 0.2) -> Mesh:
    """Structured quads with interior vertices moved randomly by up to ``amplitude * h``.

    Amplitudes below 0.25 keep every quadrilateral convex.
    """
    rng = np.random.default_rng(seed)
    verts = _grid_vertices_2d(n)
    interior = (verts > 0.0).all(axis=1) & (verts < 1.0).all(axis=1)
    shift = rng.uniform(-amplitude / n, amplitude / n, size=verts.shape)
    verts = verts + shift * interior[:, None]
    return polygon_mesh(verts, _quad_loops(n))


def _clipped_voronoi(seeds: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, list[list[int]]]:
    """Voronoi cells of ``seeds`` restricted to the unit square (mirror trick)."""
    mirrored = [seeds]
    for axis in (0, 1):
        for wall in (0.0, 1.0):
            m = seeds.copy()
            m[:, axis] = 2.0 * wall - m[:, axis]
            mirrored.append(m)
    vor = Voronoi(np.vstack(mirrored))
    verts: list[np.ndarray] = []
    index: dict[tuple[int, int], int] = {}

    def vertex_id(p: np.ndarray) -> int:
        p = np.clip(p, 0.0, 1.0)
        p[np.abs(p) < tol] = 0.0
        p[np.abs(p - 1.0) < tol] = 1.0
        key = (int(round(p[0] / tol)), int(round(p[1] / tol)))
        for dx, dy in itertools.product((0, -1, 1), repeat=2):
            hit = index.get((key[0] + dx, key[1] + dy))
            if hit is not None:
                return hit
        index[key] = len(verts)
        verts.append(p)
        return index[key]

    loops = []
    for i in range(len(seeds)):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or not region:
            raise MeshError("unbounded Voronoi region; seeds must lie inside the unit square")
        ids = [vertex_id(vor.vertices[v].copy()) for v in region]
        loop = [v for j, v in enumerate(ids) if v != ids[j - 1]]
        pts = np.array([verts[v] for v in loop])
        x, y = pts[:, 0], pts[:, 1]
        if (x * np.roll(y, -1) - np.roll(x, -1) * y).sum() < 0:
            loop = loop[::-1]
        loops.append(loop)
    return np.array(verts), loops


def _lloyd_step(seeds: np.ndarray) -> np.ndarray:
    verts, loops = _clipped_voronoi(seeds)
    out = np.empty_like(seeds)
    for i, loop in enumerate(loops):
        p = verts[loop]
        x, y = p[:, 0], p[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        area = cross.sum() / 2.0
        out[i] = [((x + xn) * cross).sum() / (6 * area), ((y + yn) * cross).sum() / (6 * area)]
    return out


def _collapse_short_edges(verts: np.ndarray, loops: list[list[int]], min_length: float) -> tuple[np.ndarray, list[list[int]]]:
    """Merge the endpoints of edges shorter than ``min_length``.

    Voronoi diagrams of random seeds contain arbitrarily short edges, which
    break the bound ``h_e >= rho h_K``.  Merged vertices keep any coordinate
    pinned to a wall of the square, so corners and walls are preserved.
    """
    parent = list(range(len(verts)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for loop in loops:
        for a, b in zip(loop, loop[1:] + loop[:1]):
            if np.linalg.norm(verts[a] - verts[b]) < min_length:
                parent[find(a)] = find(b)
    groups: dict[int, list[int]] = {}
    for i in range(len(verts)):
        groups.setdefault(find(i), []).append(i)
    new_id = {}
    out = []
    for members in groups.values():
        p = verts[members].mean(axis=0)
        for axis in (0, 1):
            for wall in (0.0, 1.0):
                if np.any(verts[members, axis] == wall):
                    p[axis] = wall
        for m in members:
            new_id[m] = len(out)
        out.append(p)
    new_loops = []
    for loop in loops:
        ids = [new_id[v] for v in loop]
        ids = [v for j, v in enumerate(ids) if v != ids[j - 1]]
        if len(ids) < 3:
            raise MeshError("edge collapse removed a whole cell")
        new_loops.append(ids)
    return np.array(out), new_loops


def voronoi_2d(n: int, seed: int = 0) -> Mesh:
    """Clipped Voronoi mesh of ``n*n`` random seeds after one Lloyd pass.

    Edges shorter than ``0.1 / n`` are collapsed.
    """
    rng = np.random.default_rng(seed)
    seeds = rng.uniform(0.0, 1.0, size=(n * n, 2))
    seeds = _lloyd_step(seeds)
    verts, loops = _clipped_voronoi(seeds)
    verts, loops = _collapse_short_edges(verts, loops, 0.1 / n)
    return polygon_mesh(verts, loops)


def hexagon_dominant(n: int) -> Mesh:
    """Clipped Voronoi mesh of a staggered lattice: hexagons inside, clipped cells on the boundary."""
    dx = 1.0 / n
    rows = max(1, int(round(1.0 / (dx * np.sqrt(3.0) / 2.0))))
    dy = 1.0 / rows
    seeds = []
    for j in range(rows):
        off = 0.25 * dx if j % 2 == 0 else 0.75 * dx
        for i in range(n):
            seeds.append((off + i * dx, (j + 0.5) * dy))
    verts, loops = _clipped_voronoi(np.array(seeds))
    return polygon_mesh(verts, loops)


def _grid_vertices_3d(n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n + 1)
    zz, yy, xx = np.meshgrid(t, t, t, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def _vid3(n: int, i: int, j: int, k: int) -> int:
    return (k * (n + 1) + j) * (n + 1) + i


def cube_structured(n: int) -> Mesh:
    cells = []
    for k, j, i in itertools.product(range(n), repeat=3):
        v = lambda a, b, c: _vid3(n, i + a, j + b, k + c)  # noqa: E731
        cells.append(
            [
                [v(0, 0, 0), v(0, 1, 0), v(1, 1, 0), v(1, 0, 0)],
                [v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1)],
                [v(0, 0, 0), v(1, 0, 0), v(1, 0, 1), v(0, 0, 1)],
                [v(0, 1, 0), v(0, 1, 1), v(1, 1, 1), v(1, 1, 0)],
                [v(0, 0, 0), v(0, 0, 1), v(0, 1, 1), v(0, 1, 0)],
                [v(1, 0, 0), v(1, 1, 0), v(1, 1, 1), v(1, 0, 1)],
            ]
        )
    return polyhedron_mesh(_grid_vertices_3d(n), cells)


def tet_structured(n: int) -> Mesh:
    """Each cube split into six tetrahedra around its main diagonal."""
    cells = []
    steps = np.eye(3, dtype=int)
    for k, j, i in itertools.product(range(n), repeat=3):
        for perm in itertools.permutations(range(3)):
            corner = np.zeros(3, dtype=int)
            ids = [_vid3(n, i, j, k)]
            for axis in perm:
                corner = corner + steps[axis]
                ids.append(_vid3(n, i + corner[0], j + corner[1], k + corner[2]))
            a, b, c, d = ids
            cells.append([[a, b, c], [a, b, d], [a, c, d], [b, c, d]])
    return polyhedron_mesh(_grid_vertices_3d(n), cells)


def generate_mesh(kind: str, resolution: int, seed: int = 0) -> Mesh:
    """Generate a mesh of the unit square or cube.

    ``resolution`` is the number of cells per side for structured kinds and
    the square root of the number of seeds for Voronoi-type kinds.
    """
    if int(resolution) != resolution or resolution < 1:
        raise MeshError(f"resolution must be a positive integer, got {resolution}")
    n = int(resolution)
    builders = {
        "tri-structured": lambda: tri_structured(n),
        "quad-structured": lambda: quad_structured(n),
        "quad-distorted": lambda: quad_distorted(n, seed),
        "hexagon-dominant": lambda: hexagon_dominant(n),
        "voronoi-2d": lambda: voronoi_2d(n, seed),
        "cube-structured": lambda: cube_structured(n),
        "tet-structured": lambda: tet_structured(n),
    }
    if kind not in builders:
        raise MeshError(f"unsupported mesh kind {kind!r}; choose from {', '.join(MESH_KINDS)}")
    return builders[kind]()
