"""The local nonconforming virtual element of order k.

Degrees of freedom on a cell are, face by face, the scaled moments
``(1/|e|) int_e v m ds`` against ``M^{k-1}(e)``, followed by the scaled cell
moments ``(1/|K|) int_K v m dx`` against ``M^{k-2}(K)``.  Everything below is
built from these moments only; the virtual basis functions are never
evaluated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.linalg as sla

from .mesh import CellGeometry
from .mfd import build_pi_perp
from .polybasis import (
    COND_WARN,
    DATA_EXTRA_DEGREE,
    ConditioningWarning,
    n_monomials,
    weighted_lstsq,
)
from .quadrature import quadrature_on_cell, quadrature_on_face


class UnisolvenceError(np.linalg.LinAlgError):
    """The local projector matrix G is singular."""


class ElementError(ArithmeticError):
    """A local matrix failed a structural check (symmetry, PSD, expansion)."""


STABILIZATIONS = ("vem-identity", "mfd-trace")
Stabilization = Union[str, np.ndarray]

EXPANSION_TOL = 1e-10
PSD_TOL = 1e-10


@dataclass(frozen=True)
class DofLayout:
    k: int
    dim: int
    n_faces: int

    @property
    def face_block(self) -> int:
        return n_monomials(self.dim - 1, self.k - 1)

    @property
    def cell_block(self) -> int:
        return n_monomials(self.dim, self.k - 2)

    @property
    def size(self) -> int:
        return self.n_faces * self.face_block + self.cell_block

    @property
    def n_poly(self) -> int:
        return n_monomials(self.dim, self.k)

    def face_dofs(self, i: int) -> slice:
        return slice(i * self.face_block, (i + 1) * self.face_block)

    @property
    def cell_dofs(self) -> slice:
        start = self.n_faces * self.face_block
        return slice(start, start + self.cell_block)


def local_dimension(dim: int, n_faces: int, k: int) -> int:
    """Closed-form local dimension for a cell with ``n_faces`` faces."""
    if dim == 2:
        return n_faces * k + (k - 1) * k // 2
    return n_faces * k * (k + 1) // 2 + (k - 1) * k * (k + 1) // 6


def build_dof_layout(cell: CellGeometry, k: int) -> DofLayout:
    if k < 1:
        raise ValueError(f"order must be >= 1, got {k}")
    return DofLayout(k, cell.dim, cell.n_faces)


def _moments(cell: CellGeometry, layout: DofLayout, func: Callable, degree: int) -> np.ndarray:
    # ``func`` maps (n, d) points to (n,) or (n, m) values of polynomial degree ``degree``.
    k = layout.k
    rows = []
    for face in cell.faces:
        rule = quadrature_on_face(face, k - 1 + degree)
        fb = face.basis(k - 1).eval(rule.points)
        vals = np.asarray(func(rule.points), dtype=float)
        rows.append((fb * rule.weights[:, None]).T @ vals / face.measure)
    if k >= 2:
        rule = quadrature_on_cell(cell, k - 2 + degree)
        cb = cell.basis(k - 2).eval(rule.points)
        vals = np.asarray(func(rule.points), dtype=float)
        rows.append((cb * rule.weights[:, None]).T @ vals / cell.measure)
    return np.concatenate(rows, axis=0)


def compute_dofs_of_function(
    cell: CellGeometry, layout: DofLayout, f: Callable, extra_degree: int = DATA_EXTRA_DEGREE + 2
) -> np.ndarray:
    """Degrees of freedom of a smooth function ``f`` (vectorised over points).

    Quadrature is exact for polynomial ``f`` of degree <= ``k + extra_degree - 2``.
    """
    return _moments(cell, layout, f, layout.k + extra_degree - 2)


def build_D(cell: CellGeometry, layout: DofLayout) -> np.ndarray:
    """``D[i, j]`` is the i-th degree of freedom of the j-th cell monomial of degree <= k."""
    basis = cell.basis(layout.k)
    return _moments(cell, layout, basis.eval, layout.k)


def build_B(cell: CellGeometry, layout: DofLayout) -> np.ndarray:
    """``B[i, j] = int_K grad m_i . grad psi_j`` for i >= 1, plus the mean-value row 0.

    The integral is split by parts into a cell term, using the exact
    Laplacian of ``m_i`` in ``M^{k-2}(K)``, and face terms, using the normal
    derivative of ``m_i`` re-expanded in ``M^{k-1}(e)``.  Both pick out
    single degrees of freedom of ``psi_j``.
    """
    k = layout.k
    basis = cell.basis(k)
    n_poly = len(basis)
    B = np.zeros((n_poly, layout.size))
    if k >= 2:
        B[:, layout.cell_dofs] -= cell.measure * basis.laplacian_matrix().T
    for i, (face, sign) in enumerate(zip(cell.faces, cell.signs)):
        rule = quadrature_on_face(face, 2 * k - 2)
        fb = face.basis(k - 1).eval(rule.points)
        dn = basis.grad(rule.points) @ (sign * face.normal)
        coef = weighted_lstsq(fb, rule.weights, dn)
        resid = np.abs(fb @ coef - dn).max()
        if resid > EXPANSION_TOL * max(1.0, np.abs(dn).max()):
            raise ElementError(f"cell {cell.index}: normal-derivative expansion residual {resid:.3e} on face {face.index}")
        B[:, layout.face_dofs(i)] += face.measure * coef.T
    B[0, :] = 0.0
    if k == 1:
        for i, face in enumerate(cell.faces):
            B[0, layout.face_dofs(i).start] = face.measure
    else:
        B[0, layout.cell_dofs.start] = cell.measure
    return B


@dataclass(frozen=True)
class Projector:
    G: np.ndarray
    G_tilde: np.ndarray
    pi_star: np.ndarray
    pi: np.ndarray
    cond: float


def build_projector(D: np.ndarray, B: np.ndarray, cell_id: int = -1) -> Projector:
    """``G = B D``, ``pi_star = G^{-1} B`` (coefficients) and ``pi = D pi_star`` (DoFs).

    Rows of G and B are scaled together before the LU solve; this leaves the
    projector unchanged and removes the mismatch between the mean-value row
    and the stiffness rows.
    """
    G = B @ D
    scale = np.abs(G).max(axis=1)
    if np.any(scale == 0.0):
        raise UnisolvenceError(f"cell {cell_id}: G has a zero row")
    Gs = G / scale[:, None]
    cond = float(np.linalg.cond(Gs))
    if not np.isfinite(cond) or cond > 1e16:
        raise UnisolvenceError(f"cell {cell_id}: G is singular (cond {cond:.2e}); degrees of freedom are not unisolvent")
    if cond > COND_WARN:
        warnings.warn(f"cell {cell_id}: G condition number {cond:.2e}", ConditioningWarning, stacklevel=2)
    lu = sla.lu_factor(Gs, check_finite=False)
    pi_star = sla.lu_solve(lu, B / scale[:, None], check_finite=False)
    G_tilde = G.copy()
    G_tilde[0, :] = 0.0
    return Projector(G, G_tilde, pi_star, D @ pi_star, cond)


def build_stabilization(
    cell: CellGeometry,
    layout: DofLayout,
    pi: np.ndarray,
    choice: Stabilization = "vem-identity",
    *,
    D: np.ndarray | None = None,
    M0: np.ndarray | None = None,
) -> np.ndarray:
    """Stabilisation matrix S.

    ``vem-identity`` is ``h_K^{d-2} I``.  ``mfd-trace`` is ``rho (I - P)``
    with ``P`` the orthogonal projector onto range(D) and ``rho`` the mean
    diagonal of the consistency matrix ``M0``.  An array is taken as a
    user matrix and validated.
    """
    n = layout.size
    if isinstance(choice, str):
        if choice == "vem-identity":
            return cell.diameter ** (cell.dim - 2) * np.eye(n)
        if choice == "mfd-trace":
            if D is None or M0 is None:
                raise ValueError("mfd-trace stabilisation needs D and M0")
            rho = np.trace(M0) / n
            return rho * (np.eye(n) - build_pi_perp(D))
        raise ValueError(f"unknown stabilisation {choice!r}; choose from {STABILIZATIONS} or pass a matrix")
    S = np.asarray(choice, dtype=float)
    if S.shape != (n, n):
        raise ValueError(f"custom stabilisation must be {n}x{n}, got {S.shape}")
    norm = np.abs(S).max()
    if norm == 0.0 or np.abs(S - S.T).max() > 1e-12 * norm:
        raise ElementError("custom stabilisation must be symmetric and nonzero")
    if D is not None:
        q = sla.null_space(D.T)
        if q.size:
            lam = np.linalg.eigvalsh(q.T @ S @ q)
            if lam.min() <= PSD_TOL * norm:
                raise ElementError("custom stabilisation is not positive definite off the polynomial subspace")
    return S


def build_stiffness(pi_star: np.ndarray, G_tilde: np.ndarray, pi: np.ndarray, S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Consistency and stability parts ``(M0, M1)`` of the local stiffness matrix."""
    M0 = pi_star.T @ G_tilde @ pi_star
    r = np.eye(len(pi)) - pi
    M1 = r.T @ S @ r
    return 0.5 * (M0 + M0.T), 0.5 * (M1 + M1.T)


def build_load(cell: CellGeometry, layout: DofLayout, f: Callable, extra_degree: int = DATA_EXTRA_DEGREE) -> np.ndarray:
    """Local load vector.

    For k >= 2 the cell-moment entries carry ``|K| c`` where ``c`` are the
    coefficients of the L2 projection of f onto ``M^{k-2}(K)``.  For k = 1 the
    cell mean of f times ``|K|`` is shared equally by the face means.
    """
    k = layout.k
    out = np.zeros(layout.size)
    if k == 1:
        rule = quadrature_on_cell(cell, extra_degree)
        mean = rule.integrate(np.asarray(f(rule.points), dtype=float)) / cell.measure
        for i in range(cell.n_faces):
            out[layout.face_dofs(i).start] = cell.measure * mean / cell.n_faces
        return out
    basis = cell.basis(k - 2)
    rule = quadrature_on_cell(cell, 2 * (k - 2) + extra_degree)
    c = weighted_lstsq(basis.eval(rule.points), rule.weights, np.asarray(f(rule.points), dtype=float))
    out[layout.cell_dofs] = cell.measure * c
    return out


@dataclass(frozen=True, eq=False)
class LocalElement:
    cell: CellGeometry
    layout: DofLayout
    D: np.ndarray
    B: np.ndarray
    G: np.ndarray
    G_tilde: np.ndarray
    pi_star: np.ndarray
    pi: np.ndarray
    S: np.ndarray
    M0: np.ndarray
    M1: np.ndarray
    cond_G: float

    @property
    def M(self) -> np.ndarray:
        return self.M0 + self.M1

    @property
    def constant_dofs(self) -> np.ndarray:
        """DoF vector of the constant function 1 (first column of D)."""
        return self.D[:, 0]


def build_local_element(cell: CellGeometry, k: int, stabilization: Stabilization = "vem-identity") -> LocalElement:
    layout = build_dof_layout(cell, k)
    D = build_D(cell, layout)
    B = build_B(cell, layout)
    proj = build_projector(D, B, cell.index)
    M0 = proj.pi_star.T @ proj.G_tilde @ proj.pi_star
    M0 = 0.5 * (M0 + M0.T)
    S = build_stabilization(cell, layout, proj.pi, stabilization, D=D, M0=M0)
    M0, M1 = build_stiffness(proj.pi_star, proj.G_tilde, proj.pi, S)
    return LocalElement(cell, layout, D, B, proj.G, proj.G_tilde, proj.pi_star, proj.pi, S, M0, M1, proj.cond)


# -- verification helpers -----------------------------------------------------


def monomial_stiffness(cell: CellGeometry, k: int) -> np.ndarray:
    """``int_K grad m_i . grad m_j`` by direct quadrature, with row 0 zero."""
    rule = quadrature_on_cell(cell, max(2 * k - 2, 0))
    g = cell.basis(k).grad(rule.points)
    return np.einsum("q,qid,qjd->ij", rule.weights, g, g)


def spectral_ratio(M: np.ndarray, constant: np.ndarray) -> tuple[float, float]:
    """Extreme eigenvalues of M on the orthogonal complement of ``constant``."""
    q = sla.null_space(constant[None, :])
    lam = np.linalg.eigvalsh(q.T @ M @ q)
    return float(lam[0]), float(lam[-1])


def check_element(el: LocalElement) -> dict[str, float]:
    """Relative residuals of the structural identities of a local element."""
    D, M = el.D, el.M
    nd = np.linalg.norm(D)
    nm = np.linalg.norm(M)
    gt = monomial_stiffness(el.cell, el.layout.k)
    dmd = D.T @ M @ D
    c = el.constant_dofs
    lam = np.linalg.eigvalsh(M)
    lo, hi = spectral_ratio(M, c)
    return {
        "pi_reproduction": float(np.linalg.norm(el.pi @ D - D) / nd),
        # relative to the floating-point scale of the product pi_star @ D
        "pi_star_identity": float(np.linalg.norm(el.pi_star @ D - np.eye(D.shape[1])) / (np.linalg.norm(el.pi_star) * nd)),
        "stabilization_annihilation": float(np.linalg.norm(el.M1 @ D) / (nm * nd)),
        "consistency": float(np.linalg.norm(dmd - gt) / np.linalg.norm(gt)) if el.layout.n_poly > 1 else 0.0,
        "g_tilde_match": float(np.linalg.norm(el.G_tilde - gt) / np.linalg.norm(gt)) if el.layout.n_poly > 1 else 0.0,
        "symmetry": float(np.linalg.norm(M - M.T) / nm),
        "min_eigenvalue": float(lam[0] / nm),
        "kernel": float(np.linalg.norm(M @ c) / (nm * np.linalg.norm(c))),
        "complement_min_eigenvalue": lo / nm,
        "spectral_ratio": lo / hi,
    }
