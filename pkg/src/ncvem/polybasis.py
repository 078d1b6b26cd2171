"""Scaled monomial bases on cells and faces, and L2 projections onto them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property, lru_cache
from math import comb
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .quadrature import QuadratureRule, quadrature_on_cell, quadrature_on_face


class ConditioningWarning(RuntimeWarning):
    """A local Gram or projector matrix is close to singular."""


COND_WARN = 1e12

#: extra exactness added when integrating non-polynomial user data
DATA_EXTRA_DEGREE = 4


def n_monomials(m: int, degree: int) -> int:
    """Dimension of the polynomials of total degree <= ``degree`` in ``m`` variables."""
    if degree < 0:
        return 0
    return comb(degree + m, m)


@lru_cache(maxsize=None)
def _multi_indices(m: int, degree: int) -> tuple[tuple[int, ...], ...]:
    out: list[tuple[int, ...]] = []

    def compositions(total: int, parts: int):
        if parts == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    for total in range(degree + 1):
        out.extend(compositions(total, m))
    return tuple(out)


def enumerate_multi_indices(m: int, degree: int) -> list[tuple[int, ...]]:
    """Graded-lexicographic multi-indices of total degree <= ``degree``.

    >>> enumerate_multi_indices(2, 1)
    [(0, 0), (1, 0), (0, 1)]
    """
    if degree < 0:
        return []
    return list(_multi_indices(m, degree))


@lru_cache(maxsize=None)
def exponent_array(m: int, degree: int) -> np.ndarray:
    arr = np.array(_multi_indices(m, degree), dtype=int).reshape(-1, m)
    arr.flags.writeable = False
    return arr


@lru_cache(maxsize=None)
def laplacian_coefficients(m: int, degree: int) -> np.ndarray:
    """Integer part of the Laplacian map from degree ``degree`` to ``degree - 2``.

    Column ``j`` holds the coefficients of ``scale**2 * Laplacian(m_j)`` in the
    scaled monomials of degree <= ``degree - 2``.
    """
    src = _multi_indices(m, degree)
    dst = _multi_indices(m, degree - 2) if degree >= 2 else ()
    pos = {s: i for i, s in enumerate(dst)}
    lap = np.zeros((len(dst), len(src)))
    for j, s in enumerate(src):
        for axis in range(m):
            if s[axis] >= 2:
                t = list(s)
                t[axis] -= 2
                lap[pos[tuple(t)], j] += s[axis] * (s[axis] - 1)
    lap.flags.writeable = False
    return lap


@dataclass(frozen=True, eq=False)
class ScaledMonomialBasis:
    """Monomials ``((x - center) / scale)**s`` with ``|s| <= degree``.

    For a face of a 3D cell, ``frame`` holds the two in-plane unit tangents
    (rows) and ``normal`` the unit normal; local coordinates are the frame
    components of ``x - center``.  For an edge of a 2D cell the frame is the
    single unit tangent.  Cell bases have no frame.
    """

    center: np.ndarray
    scale: float
    degree: int
    frame: np.ndarray | None = None
    normal: np.ndarray | None = None

    @property
    def ambient_dim(self) -> int:
        return len(self.center)

    @property
    def local_dim(self) -> int:
        return self.ambient_dim if self.frame is None else self.frame.shape[0]

    @cached_property
    def exponents(self) -> np.ndarray:
        return exponent_array(self.local_dim, self.degree)

    def __len__(self) -> int:
        return n_monomials(self.local_dim, self.degree)

    def local(self, x: np.ndarray) -> np.ndarray:
        """Scaled local coordinates of points ``x`` (shape ``(n, d)``)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rel = x - self.center
        if self.frame is None:
            return rel / self.scale
        if self.normal is not None:
            off = np.abs(rel @ self.normal)
            if off.size and off.max() > 1e-9 * self.scale:
                raise ValueError(f"point off the face plane by {off.max():.3e}")
        return rel @ self.frame.T / self.scale

    def eval(self, x: np.ndarray) -> np.ndarray:
        """Values of all members at ``x``; shape ``(n_points, len(self))``."""
        y = self.local(x)
        return _powers(y, self.exponents)

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Ambient gradients; shape ``(n_points, len(self), ambient_dim)``."""
        y = self.local(x)
        e = self.exponents
        m = e.shape[1]
        g = np.empty((y.shape[0], e.shape[0], m))
        for axis in range(m):
            lowered = e.copy()
            lowered[:, axis] = np.maximum(e[:, axis] - 1, 0)
            g[:, :, axis] = _powers(y, lowered) * e[:, axis] / self.scale
        if self.frame is not None:
            g = g @ self.frame
        return g

    def laplacian_matrix(self) -> np.ndarray:
        """Exact coefficients of each member's Laplacian in the degree-2 lower basis.

        Only defined for cell bases.
        """
        if self.frame is not None:
            raise ValueError("laplacian is defined for cell bases only")
        return laplacian_coefficients(self.ambient_dim, self.degree) / self.scale**2

    def truncated(self, degree: int) -> "ScaledMonomialBasis":
        return ScaledMonomialBasis(self.center, self.scale, degree, self.frame, self.normal)


def _powers(y: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    out = np.ones((y.shape[0], exponents.shape[0]))
    for axis in range(exponents.shape[1]):
        out *= y[:, axis, None] ** exponents[None, :, axis]
    return out


def _index_of(basis: ScaledMonomialBasis, index) -> int:
    target = tuple(int(s) for s in index)
    try:
        return _multi_indices(basis.local_dim, basis.degree).index(target)
    except ValueError:
        raise ValueError(f"multi-index {target} not in basis of degree {basis.degree}") from None


def eval_monomial(basis: ScaledMonomialBasis, index, x) -> float:
    return float(basis.eval(np.asarray(x, dtype=float)[None, :])[0, _index_of(basis, index)])


def eval_gradient(basis: ScaledMonomialBasis, index, x) -> np.ndarray:
    return basis.grad(np.asarray(x, dtype=float)[None, :])[0, _index_of(basis, index)]


def eval_laplacian(basis: ScaledMonomialBasis, index, x) -> float:
    j = _index_of(basis, index)
    if basis.degree < 2:
        return 0.0
    coeffs = basis.laplacian_matrix()[:, j]
    lower = basis.truncated(basis.degree - 2)
    return float(lower.eval(np.asarray(x, dtype=float)[None, :])[0] @ coeffs)


def gram_matrix(basis: ScaledMonomialBasis, rule: QuadratureRule) -> np.ndarray:
    vals = basis.eval(rule.points)
    return (vals * rule.weights[:, None]).T @ vals


def weighted_lstsq(values: np.ndarray, weights: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Coefficients ``c`` minimising ``sum_q w_q (values[q] @ c - rhs[q])**2``.

    This is the discrete L2 projection.  It is solved by a QR factorisation
    of ``sqrt(w) * values`` rather than through the mass matrix, whose
    condition number is the square of that of the factor.  ``rhs`` may have
    trailing columns.
    """
    sw = np.sqrt(weights)
    Q, R = np.linalg.qr(sw[:, None] * values)
    diag = np.abs(np.diag(R))
    if diag.size and (diag.min() == 0.0 or diag.min() < 1e-15 * diag.max()):
        raise np.linalg.LinAlgError("singular mass matrix (degenerate entity)")
    if diag.size > 1 and (diag.max() / diag.min()) ** 2 > COND_WARN:
        warnings.warn(f"mass matrix condition number ~{(diag.max() / diag.min()) ** 2:.2e}", ConditioningWarning, stacklevel=3)
    rhs = np.asarray(rhs, dtype=float)
    weighted = sw[:, None] * rhs if rhs.ndim == 2 else sw * rhs
    return sla.solve_triangular(R, Q.T @ weighted)


def l2_project(f: Callable[[np.ndarray], np.ndarray], basis: ScaledMonomialBasis, rule: QuadratureRule) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` onto ``basis`` using ``rule``.

    ``f`` is called once with the ``(n, d)`` array of quadrature points.
    """
    return weighted_lstsq(basis.eval(rule.points), rule.weights, np.asarray(f(rule.points), dtype=float))


def l2_project_onto_face_polys(f, face, degree: int, extra_degree: int = DATA_EXTRA_DEGREE) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` onto ``M^degree(face)``."""
    rule = quadrature_on_face(face, 2 * degree + extra_degree)
    return l2_project(f, face.basis(degree), rule)


def l2_project_onto_cell_polys(f, cell, degree: int, extra_degree: int = DATA_EXTRA_DEGREE) -> np.ndarray:
    """Coefficients of the L2 projection of ``f`` onto ``M^degree(cell)``."""
    rule = quadrature_on_cell(cell, 2 * degree + extra_degree)
    return l2_project(f, cell.basis(degree), rule)
