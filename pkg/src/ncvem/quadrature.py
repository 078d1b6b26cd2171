"""Quadrature rules on segments, triangles, tetrahedra and their fans.

Simplex rules are collapsed (Duffy) tensor products of Gauss-Jacobi rules,
so any exactness degree is available.  Polygons and polyhedra are integrated
by fan decomposition from their centroid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


class NonStarShapedError(ValueError):
    """A cell or face is not star-shaped with respect to its centroid."""


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate sampled values; the first axis runs over the points."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _npoints(degree: int) -> int:
    return max(1, (degree + 2) // 2)


@lru_cache(maxsize=None)
def _jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    # Gauss-Jacobi on [0, 1] with weight (1 - u)^alpha.
    if alpha == 0:
        t, w = np.polynomial.legendre.leggauss(n)
    else:
        t, w = roots_jacobi(n, alpha, 0.0)
    u = 0.5 * (1.0 + t)
    w = w / 2.0 ** (alpha + 1)
    return u, w


@lru_cache(maxsize=None)
def reference_segment(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    u, w = _jacobi01(_npoints(degree), 0)
    u.flags.writeable = False
    w.flags.writeable = False
    return u, w


@lru_cache(maxsize=None)
def reference_triangle(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the triangle (0,0), (1,0), (0,1); weights sum to 1/2."""
    n = _npoints(degree)
    u, wu = _jacobi01(n, 1)
    v, wv = _jacobi01(n, 0)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
    w = np.outer(wu, wv).ravel()
    pts.flags.writeable = False
    w.flags.writeable = False
    return pts, w


@lru_cache(maxsize=None)
def reference_tetrahedron(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the unit tetrahedron; weights sum to 1/6."""
    n = _npoints(degree)
    u, wu = _jacobi01(n, 2)
    v, wv = _jacobi01(n, 1)
    s, ws = _jacobi01(n, 0)
    uu, vv, ss = np.meshgrid(u, v, s, indexing="ij")
    x = uu
    y = (1.0 - uu) * vv
    z = (1.0 - uu) * (1.0 - vv) * ss
    pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    w = (wu[:, None, None] * wv[None, :, None] * ws[None, None, :]).ravel()
    pts.flags.writeable = False
    w.flags.writeable = False
    return pts, w


def segment_rule(a: np.ndarray, b: np.ndarray, degree: int) -> QuadratureRule:
    u, w = reference_segment(degree)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a[None, :] + u[:, None] * (b - a)[None, :]
    return QuadratureRule(pts, w * np.linalg.norm(b - a), degree)


def triangles_rule(tris: np.ndarray, degree: int, *, check_sign: bool = False) -> QuadratureRule:
    """Rule on a union of triangles given as a ``(nt, 3, 2)`` array.

    With ``check_sign`` the triangles must be positively oriented.
    """
    ref, w = reference_triangle(degree)
    a = tris[:, 0, :]
    e1 = tris[:, 1, :] - a
    e2 = tris[:, 2, :] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if check_sign:
        scale = max(float(np.abs(det).max()), 1e-300)
        if np.any(det <= 1e-12 * scale):
            raise NonStarShapedError("fan triangle with non-positive area; region is not star-shaped w.r.t. its centroid")
    pts = a[:, None, :] + ref[None, :, 0, None] * e1[:, None, :] + ref[None, :, 1, None] * e2[:, None, :]
    weights = np.abs(det)[:, None] * w[None, :]
    return QuadratureRule(pts.reshape(-1, 2), weights.ravel(), degree)


def tetrahedra_rule(tets: np.ndarray, degree: int, *, check_sign: bool = False) -> QuadratureRule:
    """Rule on a union of tetrahedra given as a ``(nt, 4, 3)`` array."""
    ref, w = reference_tetrahedron(degree)
    a = tets[:, 0, :]
    jac = np.stack([tets[:, 1] - a, tets[:, 2] - a, tets[:, 3] - a], axis=2)  # columns are edges
    det = np.linalg.det(jac)
    if check_sign:
        scale = max(float(np.abs(det).max()), 1e-300)
        if np.any(det <= 1e-12 * scale):
            raise NonStarShapedError("fan tetrahedron with non-positive volume; cell is not star-shaped w.r.t. its centroid")
    pts = a[:, None, :] + np.einsum("tij,qj->tqi", jac, ref)
    weights = np.abs(det)[:, None] * w[None, :]
    return QuadratureRule(pts.reshape(-1, 3), weights.ravel(), degree)


def polygon_fan(loop: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Triangles ``(center, v_i, v_{i+1})`` of a counter-clockwise loop."""
    nxt = np.roll(loop, -1, axis=0)
    c = np.broadcast_to(center, loop.shape)
    return np.stack([c, loop, nxt], axis=1)


def quadrature_on_face(face, degree: int) -> QuadratureRule:
    """Rule on an edge (2D) or planar polygonal face (3D) exact to ``degree``."""
    if face.vertices.shape[1] == 2:
        return segment_rule(face.vertices[0], face.vertices[1], degree)
    local = (face.vertices - face.centroid) @ face.frame.T
    tris = polygon_fan(local, np.zeros(2))
    rule = triangles_rule(tris, degree, check_sign=True)
    pts = face.centroid + rule.points @ face.frame
    return QuadratureRule(pts, rule.weights, degree)


def quadrature_on_cell(cell, degree: int) -> QuadratureRule:
    """Fan rule from the cell centroid exact to ``degree``.

    Raises :class:`NonStarShapedError` if some fan simplex is inverted.
    """
    if cell.dim == 2:
        return triangles_rule(polygon_fan(cell.loop, cell.centroid), degree, check_sign=True)
    tets = []
    for face, sign in zip(cell.faces, cell.signs):
        loop = face.vertices if sign > 0 else face.vertices[::-1]
        nxt = np.roll(loop, -1, axis=0)
        for a, b in zip(loop, nxt):
            tets.append((cell.centroid, face.centroid, a, b))
    return tetrahedra_rule(np.asarray(tets), degree, check_sign=True)
