"""Polytopal meshes in 2D and 3D: data model, geometry, regularity and JSON I/O.

A mesh stores vertices, faces (vertex loops; 2-vertex edges in 2D) and cells
(face lists with orientation signs).  A sign of +1 means the face's natural
normal points out of the cell.  The natural normal of an edge ``(a, b)`` is
its tangent rotated clockwise; that of a 3D face is its Newell normal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog

from .polybasis import ScaledMonomialBasis


class MeshError(ValueError):
    """Invalid mesh data."""


class MeshConnectivityError(MeshError):
    """Faces shared by the wrong number of cells or with inconsistent orientation."""


class DegenerateEntityError(MeshError):
    """A cell or face has zero measure."""


class MeshFormatError(MeshError):
    """Malformed mesh file."""


class Cell(NamedTuple):
    faces: tuple[int, ...]
    signs: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    index: int
    vertices: np.ndarray
    centroid: np.ndarray
    measure: float
    diameter: float
    normal: np.ndarray
    frame: np.ndarray

    def basis(self, degree: int) -> ScaledMonomialBasis:
        return ScaledMonomialBasis(self.centroid, self.diameter, degree, self.frame, self.normal)


@dataclass(frozen=True, eq=False)
class CellGeometry:
    index: int
    dim: int
    centroid: np.ndarray
    measure: float
    diameter: float
    vertices: np.ndarray
    faces: tuple[FaceGeometry, ...]
    signs: tuple[int, ...]
    loop: np.ndarray | None = None  # counter-clockwise vertex loop (2D only)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def normals(self) -> np.ndarray:
        """Outward unit normals, one row per face."""
        return np.array([s * f.normal for f, s in zip(self.faces, self.signs)])

    def basis(self, degree: int) -> ScaledMonomialBasis:
        return ScaledMonomialBasis(self.centroid, self.diameter, degree)


def _diameter(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def _polygon_area_centroid(loop: np.ndarray) -> tuple[float, np.ndarray]:
    x, y = loop[:, 0], loop[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    # shift to the first vertex to limit cancellation
    x0, y0 = x[0], y[0]
    xs, ys, xns, yns = x - x0, y - y0, xn - x0, yn - y0
    cross = xs * yns - xns * ys
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, loop.mean(axis=0)
    cx = ((xs + xns) * cross).sum() / (6.0 * area) + x0
    cy = ((ys + yns) * cross).sum() / (6.0 * area) + y0
    return float(area), np.array([cx, cy])


def _newell_normal(loop: np.ndarray) -> np.ndarray:
    nxt = np.roll(loop, -1, axis=0)
    return np.array(
        [
            ((loop[:, 1] - nxt[:, 1]) * (loop[:, 2] + nxt[:, 2])).sum(),
            ((loop[:, 2] - nxt[:, 2]) * (loop[:, 0] + nxt[:, 0])).sum(),
            ((loop[:, 0] - nxt[:, 0]) * (loop[:, 1] + nxt[:, 1])).sum(),
        ]
    )


def _face_geometry(index: int, verts: np.ndarray) -> FaceGeometry:
    d = verts.shape[1]
    diameter = _diameter(verts)
    if d == 2:
        a, b = verts
        length = float(np.linalg.norm(b - a))
        if length == 0.0:
            raise DegenerateEntityError(f"face {index} has zero length")
        t = (b - a) / length
        return FaceGeometry(index, verts, 0.5 * (a + b), length, length, np.array([t[1], -t[0]]), t[None, :])
    n = _newell_normal(verts)
    nn = np.linalg.norm(n)
    if nn == 0.0 or diameter == 0.0:
        raise DegenerateEntityError(f"face {index} has zero area")
    n = n / nn
    off = np.abs((verts - verts[0]) @ n).max()
    if off > 1e-12 * diameter:
        raise MeshError(f"face {index} is not planar (offset {off:.3e})")
    t1 = verts[1] - verts[0]
    t1 = t1 - (t1 @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    frame = np.vstack([t1, t2])
    local = (verts - verts[0]) @ frame.T
    area, c_local = _polygon_area_centroid(local)
    if area <= 0.0:
        raise DegenerateEntityError(f"face {index} has non-positive area {area}")
    centroid = verts[0] + c_local @ frame
    return FaceGeometry(index, verts, centroid, area, diameter, n, frame)


def _cell_loop(cell_id: int, faces: Sequence[FaceGeometry], signs: Sequence[int], face_ids, face_verts) -> list[int]:
    succ: dict[int, int] = {}
    for fid, s in zip(face_ids, signs):
        a, b = face_verts[fid]
        if s < 0:
            a, b = b, a
        if a in succ:
            raise MeshConnectivityError(f"cell {cell_id}: vertex {a} starts two edges")
        succ[a] = b
    start = next(iter(succ))
    loop = [start]
    while True:
        nxt = succ.get(loop[-1])
        if nxt is None:
            raise MeshConnectivityError(f"cell {cell_id}: boundary is not closed")
        if nxt == start:
            break
        if len(loop) > len(succ):
            raise MeshConnectivityError(f"cell {cell_id}: boundary is not a single loop")
        loop.append(nxt)
    if len(loop) != len(succ):
        raise MeshConnectivityError(f"cell {cell_id}: boundary is not a single loop")
    return loop


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable polytopal mesh.  Geometry is computed once at construction."""

    dimension: int
    vertices: np.ndarray
    faces: tuple[tuple[int, ...], ...]
    cells: tuple[Cell, ...]
    face_geometry: tuple[FaceGeometry, ...] = field(init=False, repr=False)
    cell_geometry: tuple[CellGeometry, ...] = field(init=False, repr=False)
    face_cells: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", tuple(tuple(int(v) for v in f) for f in self.faces))
        object.__setattr__(
            self,
            "cells",
            tuple(Cell(tuple(int(i) for i in c[0]), tuple(int(s) for s in c[1])) for c in self.cells),
        )
        self._validate_topology()
        fgeo = tuple(_face_geometry(i, verts[list(f)]) for i, f in enumerate(self.faces))
        object.__setattr__(self, "face_geometry", fgeo)
        object.__setattr__(self, "cell_geometry", tuple(self._cell_geometry(c) for c in range(len(self.cells))))

    # -- validation ---------------------------------------------------------

    def _validate_topology(self) -> None:
        d = self.dimension
        if d not in (2, 3):
            raise MeshError(f"dimension must be 2 or 3, got {d}")
        if self.vertices.ndim != 2 or self.vertices.shape[1] != d:
            raise MeshError("vertex array must have shape (n, dimension)")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        if not self.cells:
            raise MeshError("mesh has no cells")
        nv = len(self.vertices)
        for i, f in enumerate(self.faces):
            if d == 2 and len(f) != 2:
                raise MeshError(f"2D face {i} must have exactly 2 vertices")
            if d == 3 and len(f) < 3:
                raise MeshError(f"3D face {i} needs at least 3 vertices")
            if len(set(f)) != len(f):
                raise MeshError(f"face {i} repeats a vertex")
            if min(f) < 0 or max(f) >= nv:
                raise MeshError(f"face {i} references a missing vertex")
        incidence: list[list[tuple[int, int]]] = [[] for _ in self.faces]
        for c, cell in enumerate(self.cells):
            if len(cell.faces) != len(cell.signs):
                raise MeshError(f"cell {c}: faces and signs differ in length")
            if len(cell.faces) < d + 1:
                raise MeshError(f"cell {c} has too few faces")
            if len(set(cell.faces)) != len(cell.faces):
                raise MeshError(f"cell {c} repeats a face")
            for fid, s in zip(cell.faces, cell.signs):
                if not 0 <= fid < len(self.faces):
                    raise MeshError(f"cell {c} references missing face {fid}")
                if s not in (1, -1):
                    raise MeshError(f"cell {c}: orientation signs must be +1 or -1")
                incidence[fid].append((c, s))
        for fid, inc in enumerate(incidence):
            if len(inc) == 0:
                raise MeshConnectivityError(f"face {fid} belongs to no cell")
            if len(inc) > 2:
                raise MeshConnectivityError(f"face {fid} is referenced by {len(inc)} cells")
            if len(inc) == 2 and inc[0][1] == inc[1][1]:
                raise MeshConnectivityError(f"face {fid}: both cells use the same orientation")
        object.__setattr__(self, "face_cells", tuple(tuple(c for c, _ in inc) for inc in incidence))

    def _cell_geometry(self, c: int) -> CellGeometry:
        cell = self.cells[c]
        faces = tuple(self.face_geometry[f] for f in cell.faces)
        vids = sorted({v for f in cell.faces for v in self.faces[f]})
        verts = self.vertices[vids]
        diameter = _diameter(verts)
        if self.dimension == 2:
            loop_ids = _cell_loop(c, faces, cell.signs, cell.faces, self.faces)
            loop = self.vertices[loop_ids]
            area, centroid = _polygon_area_centroid(loop)
            if area <= 0.0:
                raise DegenerateEntityError(f"cell {c} has non-positive area {area} (check orientation signs)")
            return CellGeometry(c, 2, centroid, area, diameter, verts, faces, cell.signs, loop)
        ref = verts.mean(axis=0)
        vol = 0.0
        moment = np.zeros(3)
        for face, s in zip(faces, cell.signs):
            loop = face.vertices
            nxt = np.roll(loop, -1, axis=0)
            for a, b in zip(loop, nxt):
                v = s * np.dot(face.centroid - ref, np.cross(a - face.centroid, b - face.centroid)) / 6.0
                vol += v
                moment += v * (ref + face.centroid + a + b) / 4.0
        if vol <= 0.0:
            raise DegenerateEntityError(f"cell {c} has non-positive volume {vol} (check orientation signs)")
        closure = np.sum([s * f.measure * f.normal for f, s in zip(faces, cell.signs)], axis=0)
        if np.linalg.norm(closure) > 1e-10 * diameter ** 2:
            raise MeshConnectivityError(f"cell {c}: faces do not close")
        return CellGeometry(c, 3, moment / vol, vol, diameter, verts, faces, cell.signs)

    # -- queries ------------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def boundary_faces(self) -> np.ndarray:
        """Boolean flag per face."""
        return np.array([len(c) == 1 for c in self.face_cells])

    @property
    def h(self) -> float:
        """Maximum cell diameter."""
        return max(g.diameter for g in self.cell_geometry)

    def cell(self, c: int) -> CellGeometry:
        return self.cell_geometry[c]

    def permuted(self, order: Sequence[int]) -> "Mesh":
        """The same mesh with cells listed in ``order``."""
        return Mesh(self.dimension, self.vertices, self.faces, [self.cells[i] for i in order])


@dataclass(frozen=True)
class MeshGeometry:
    cells: tuple[CellGeometry, ...]
    faces: tuple[FaceGeometry, ...]


def compute_entity_summaries(mesh: Mesh) -> MeshGeometry:
    return MeshGeometry(mesh.cell_geometry, mesh.face_geometry)


# -- regularity ----------------------------------------------------------------


@dataclass(frozen=True)
class CellRegularity:
    cell: int
    edge_ratio: float
    star_verdict: str
    star_rho: float


@dataclass(frozen=True)
class RegularityReport:
    cells: tuple[CellRegularity, ...]
    h: float
    rho_min: float
    failed_cells: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return not self.failed_cells

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "rho_min": self.rho_min,
            "passed": self.passed,
            "failed_cells": list(self.failed_cells),
            "min_edge_ratio": min(c.edge_ratio for c in self.cells),
            "min_star_rho": min(c.star_rho for c in self.cells),
            "verdicts": sorted({c.star_verdict for c in self.cells}),
        }


def _chebyshev_radius(normals: np.ndarray, offsets: np.ndarray) -> float:
    """Largest ball inside ``{x : normals @ x <= offsets}`` (0 if none)."""
    d = normals.shape[1]
    scale = np.linalg.norm(normals, axis=1)
    a_ub = np.hstack([normals, scale[:, None]])
    cost = np.zeros(d + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=a_ub, b_ub=offsets, bounds=[(None, None)] * d + [(0, None)], method="highs")
    if res.status != 0:
        return 0.0
    return float(res.x[-1])


def _is_convex(g: CellGeometry) -> bool:
    normals = g.normals
    offsets = np.einsum("ij,ij->i", normals, np.array([f.centroid for f in g.faces]))
    slack = g.vertices @ normals.T - offsets[None, :]
    return bool(slack.max() <= 1e-12 * g.diameter)


def _star_rho(g: CellGeometry) -> float:
    # The kernel of a polytope is the intersection of the inner half-spaces of
    # its faces, so the best star ball is the Chebyshev ball of that set.
    normals = g.normals
    offsets = np.einsum("ij,ij->i", normals, np.array([f.centroid for f in g.faces]) - g.centroid)
    r = _chebyshev_radius(normals, offsets)
    return 2.0 * r / g.diameter


def _face_disk_rho(face: FaceGeometry) -> float:
    local = (face.vertices - face.centroid) @ face.frame.T
    nxt = np.roll(local, -1, axis=0)
    t = nxt - local
    normals = np.column_stack([t[:, 1], -t[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    offsets = np.einsum("ij,ij->i", normals, local)
    return 2.0 * _chebyshev_radius(normals, offsets) / face.diameter


def check_regularity(mesh: Mesh, rho_min: float) -> RegularityReport:
    """Evaluate the shape-regularity assumptions cell by cell.

    The edge criterion is ``h_e >= rho_min * h_K``.  The star criterion asks
    for a ball of diameter ``>= rho_min * h_K`` inside the kernel of the cell
    (and, in 3D, a disk of diameter ``>= rho_min * h_e`` in each face).  Both
    are computed exactly by linear programming; convex cells are labelled
    ``exact-convex``, star-shaped non-convex cells ``exact-kernel``.
    """
    face_rho = {}
    if mesh.dimension == 3:
        face_rho = {f.index: _face_disk_rho(f) for f in mesh.face_geometry}
    rows = []
    failed = []
    for g in mesh.cell_geometry:
        ratio = min(f.diameter for f in g.faces) / g.diameter
        rho = _star_rho(g)
        if face_rho:
            rho = min(rho, min(face_rho[f.index] for f in g.faces))
        if rho <= 0.0:
            verdict = "not-star-shaped"
        elif _is_convex(g):
            verdict = "exact-convex"
        else:
            verdict = "exact-kernel"
        rows.append(CellRegularity(g.index, ratio, verdict, rho))
        if ratio < rho_min or rho < rho_min:
            failed.append(g.index)
    return RegularityReport(tuple(rows), mesh.h, rho_min, tuple(failed))


# -- I/O -----------------------------------------------------------------------


def mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "dimension": mesh.dimension,
        "vertices": mesh.vertices.tolist(),
        "faces": [list(f) for f in mesh.faces],
        "cells": [{"faces": list(c.faces), "signs": list(c.signs)} for c in mesh.cells],
    }


def mesh_from_dict(data: dict) -> Mesh:
    try:
        dim = data["dimension"]
        vertices = data["vertices"]
        faces = data["faces"]
        cells = [(c["faces"], c["signs"]) for c in data["cells"]]
    except (KeyError, TypeError) as exc:
        raise MeshFormatError(f"missing or malformed field: {exc}") from None
    if not isinstance(dim, int):
        raise MeshFormatError("'dimension' must be an integer")
    if not isinstance(vertices, list) or not all(isinstance(v, list) and len(v) == dim for v in vertices):
        raise MeshFormatError(f"'vertices' must be a list of length-{dim} coordinate lists")
    if not cells:
        raise MeshError("mesh has no cells")
    return Mesh(dim, np.array(vertices, dtype=float).reshape(-1, dim), faces, cells)


def write_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)) + "\n")


def read_mesh(path) -> Mesh:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MeshFormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise MeshFormatError(f"{path}: top-level JSON value must be an object")
    return mesh_from_dict(data)
