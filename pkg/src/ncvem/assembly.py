"""Global DoF numbering, Dirichlet constraints, sparse assembly and solve.

Global unknowns are numbered face block first (one block of ``k`` moments per
face in 2D, ``k(k+1)/2`` in 3D), then cell blocks.  A face's moments live in
that face's own frame, so both incident cells address the same unknowns.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .element import LocalElement, Stabilization, build_load, build_local_element
from .mesh import Mesh
from .polybasis import DATA_EXTRA_DEGREE, n_monomials
from .quadrature import quadrature_on_face

log = logging.getLogger(__name__)

#: systems with at most this many free unknowns are factorised densely
DENSE_LIMIT = 2000


class SolverError(ArithmeticError):
    """The linear solve failed (non-convergence or loss of definiteness)."""

    def __init__(self, message: str, history: Sequence[float] = ()):
        super().__init__(message)
        self.history = list(history)


class IndefiniteSystemError(SolverError):
    """The free-free block is singular or not positive definite."""


class AssemblyError(ArithmeticError):
    """A local element failed; ``cell`` holds the offending cell id."""

    def __init__(self, cell: int, cause: BaseException):
        super().__init__(f"cell {cell}: {type(cause).__name__}: {cause}")
        self.cell = cell


@dataclass(frozen=True)
class DofMap:
    k: int
    dim: int
    n_faces: int
    n_cells: int
    cell_faces: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def face_block(self) -> int:
        return n_monomials(self.dim - 1, self.k - 1)

    @property
    def cell_block(self) -> int:
        return n_monomials(self.dim, self.k - 2)

    @property
    def size(self) -> int:
        return self.n_faces * self.face_block + self.n_cells * self.cell_block

    def face_offset(self, f: int) -> int:
        return f * self.face_block

    def cell_offset(self, c: int) -> int:
        return self.n_faces * self.face_block + c * self.cell_block

    def face_dofs(self, f: int) -> np.ndarray:
        return np.arange(self.face_offset(f), self.face_offset(f) + self.face_block)

    def local_to_global(self, c: int) -> np.ndarray:
        """Global indices of the local DoFs of cell ``c``, in local order."""
        parts = [self.face_dofs(f) for f in self.cell_faces[c]]
        parts.append(np.arange(self.cell_offset(c), self.cell_offset(c) + self.cell_block))
        return np.concatenate(parts)

    def describe(self) -> dict:
        return {
            "k": self.k,
            "dimension": self.dim,
            "n_faces": self.n_faces,
            "n_cells": self.n_cells,
            "face_block": self.face_block,
            "cell_block": self.cell_block,
            "size": self.size,
            "face_offset": "face_index * face_block",
            "cell_offset": "n_faces * face_block + cell_index * cell_block",
        }


def build_dof_map(mesh: Mesh, k: int) -> DofMap:
    """Global numbering for the order-``k`` space on ``mesh``.

    >>> from ncvem.generators import quad_structured
    >>> build_dof_map(quad_structured(2), 2).size
    28
    """
    if k < 1:
        raise ValueError(f"order must be >= 1, got {k}")
    return DofMap(k, mesh.dimension, mesh.n_faces, mesh.n_cells, tuple(c.faces for c in mesh.cells))


def global_dof_count(dim: int, n_faces: int, n_cells: int, k: int) -> int:
    """Closed-form size of the global space."""
    if dim == 2:
        return n_faces * k + n_cells * (k - 1) * k // 2
    return n_faces * k * (k + 1) // 2 + n_cells * (k - 1) * k * (k + 1) // 6


@dataclass(frozen=True)
class Constraints:
    indices: np.ndarray
    values: np.ndarray


def face_moments(face, k: int, g: Callable, extra_degree: int = DATA_EXTRA_DEGREE) -> np.ndarray:
    """Scaled moments ``(1/|e|) int_e g m ds`` against ``M^{k-1}(e)``."""
    rule = quadrature_on_face(face, 2 * (k - 1) + extra_degree)
    vals = face.basis(k - 1).eval(rule.points)
    return vals.T @ (rule.weights * np.asarray(g(rule.points), dtype=float)) / face.measure


def apply_dirichlet(
    mesh: Mesh, dofmap: DofMap, g: Callable, k: int | None = None, extra_degree: int = DATA_EXTRA_DEGREE
) -> Constraints:
    """Constrain every boundary face block to the moments of ``g``."""
    k = dofmap.k if k is None else k
    idx, vals = [], []
    for f in np.flatnonzero(mesh.boundary_faces):
        idx.append(dofmap.face_dofs(int(f)))
        vals.append(face_moments(mesh.face_geometry[f], k, g, extra_degree))
    if not idx:
        return Constraints(np.zeros(0, dtype=int), np.zeros(0))
    return Constraints(np.concatenate(idx), np.concatenate(vals))


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Assembled matrix and load with the Dirichlet constraints kept aside.

    ``matrix`` is the full (unconstrained) stiffness matrix; :meth:`reduced`
    eliminates the constrained unknowns symmetrically.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraints: Constraints
    elements: tuple[LocalElement, ...] = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        mask[self.constraints.indices] = False
        return np.flatnonzero(mask)

    def reduced(self) -> tuple[sp.csr_matrix, np.ndarray]:
        free, con = self.free, self.constraints.indices
        A = self.matrix
        A_ff = A[free][:, free].tocsr()
        b = self.rhs[free] - A[free][:, con] @ self.constraints.values
        return A_ff, b

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        u = np.empty(self.size)
        u[self.free] = x_free
        u[self.constraints.indices] = self.constraints.values
        return u

    def symmetry_residual(self) -> float:
        A = self.matrix
        return float(sp.linalg.norm(A - A.T) / max(sp.linalg.norm(A), 1e-300))


def build_elements(
    mesh: Mesh, k: int, stabilization: Stabilization = "vem-identity", threads: int = 1
) -> tuple[LocalElement, ...]:
    """Local elements for every cell, in cell order, optionally in parallel."""

    def one(c: int) -> LocalElement:
        try:
            return build_local_element(mesh.cell(c), k, stabilization)
        except Exception as exc:  # re-raised with the cell id attached
            raise AssemblyError(c, exc) from exc

    if threads <= 1:
        return tuple(one(c) for c in range(mesh.n_cells))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return tuple(pool.map(one, range(mesh.n_cells)))


def assemble(
    mesh: Mesh,
    dofmap: DofMap,
    k: int,
    stabilization: Stabilization = "vem-identity",
    f: Callable | None = None,
    g: Callable | None = None,
    *,
    threads: int = 1,
    elements: Sequence[LocalElement] | None = None,
) -> LinearSystem:
    """Scatter local matrices and loads into a global sparse system.

    The scatter runs serially in cell order, so the summation order of every
    entry (and hence the result, bit for bit) does not depend on ``threads``.
    """
    if elements is None:
        elements = build_elements(mesh, k, stabilization, threads)
    rows, cols, vals = [], [], []
    rhs = np.zeros(dofmap.size)
    for c, el in enumerate(elements):
        gl = dofmap.local_to_global(c)
        n = len(gl)
        rows.append(np.repeat(gl, n))
        cols.append(np.tile(gl, n))
        vals.append(el.M.ravel())
        if f is not None:
            rhs[gl] += build_load(el.cell, el.layout, f)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dofmap.size, dofmap.size)
    ).tocsr()
    A.sum_duplicates()
    A = 0.5 * (A + A.T)
    cons = apply_dirichlet(mesh, dofmap, g if g is not None else _zero, k)
    log.info("assembled %d unknowns, %d constrained, nnz=%d", dofmap.size, len(cons.indices), A.nnz)
    return LinearSystem(A.tocsr(), rhs, cons, tuple(elements))


def _zero(x: np.ndarray) -> np.ndarray:
    return np.zeros(len(x))


@dataclass(frozen=True)
class SolveInfo:
    method: str
    iterations: int
    residual: float
    history: tuple[float, ...] = ()
    #: the target was below what double precision allows; ``residual`` is at the floor
    floor_limited: bool = False


#: a stalled CG run is accepted when within this factor of the rounding floor
FLOOR_FACTOR = 100.0
#: ... and below this relative residual; above it a stall means a singular system
STALL_LIMIT = 1e-8


def _residual_floor(A, x: np.ndarray, bnorm: float) -> float:
    """Relative residual that rounding alone can produce: ``eps || |A| |x| || / ||b||``."""
    return float(np.finfo(float).eps * np.linalg.norm(abs(A) @ np.abs(x)) / bnorm)


def pcg(
    A, b: np.ndarray, rtol: float = 1e-12, maxiter: int | None = None
) -> tuple[np.ndarray, SolveInfo]:
    """Conjugate gradients with a Jacobi preconditioner.

    Convergence is confirmed on the true residual ``b - A x``, which is also
    recomputed (replacing the recursive one) every ``max(n, 50)`` steps.  Raises
    :class:`IndefiniteSystemError` on a non-positive curvature ``p^T A p`` or
    when the true residual fails to halve between two such checks, and
    :class:`SolverError` when the cap is reached.  A run that stalls within
    :data:`FLOOR_FACTOR` of the rounding floor of ``b - A x`` (and below
    :data:`STALL_LIMIT`) is accepted and
    flagged ``floor_limited``: for some systems that floor lies above
    ``rtol``, and no solver can do better in double precision.
    """
    n = len(b)
    maxiter = 20 * n if maxiter is None else maxiter
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise IndefiniteSystemError("non-positive diagonal entry in an SPD solve")
    inv = 1.0 / diag
    x = np.zeros(n)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveInfo("cg", 0, 0.0, (0.0,))
    z = inv * r
    p = z.copy()
    rz = r @ z
    history = [1.0]
    last_true = np.inf
    check_every = max(n, 50)
    for it in range(1, maxiter + 1):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0.0:
            raise IndefiniteSystemError(f"non-positive curvature {curv:.3e} at iteration {it}", history)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        history.append(res)
        if res <= rtol or it % check_every == 0:
            # the recursive residual can drift from b - A x (and does so
            # without bound for singular, inconsistent systems)
            r = b - A @ x
            true = np.linalg.norm(r) / bnorm
            history[-1] = true
            if true <= rtol:
                return x, SolveInfo("cg", it, true, tuple(history))
            if true >= 0.5 * last_true:
                floor = _residual_floor(A, x, bnorm)
                if true < STALL_LIMIT and true <= FLOOR_FACTOR * floor:
                    log.warning("CG stopped at the rounding floor: residual %.2e (floor %.2e, target %.1e)", true, floor, rtol)
                    return x, SolveInfo("cg", it, true, tuple(history), floor_limited=True)
                if true < STALL_LIMIT:
                    raise SolverError(f"CG stalled at {true:.3e}, above {FLOOR_FACTOR} x the rounding floor {floor:.2e}", history)
                raise IndefiniteSystemError(
                    f"CG residual stagnated at {true:.3e}; the system is singular or inconsistent", history
                )
            last_true = true
        z = inv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach {rtol:.1e} in {maxiter} iterations (last {history[-1]:.3e})", history)


def dense_cholesky(A, b: np.ndarray, pivot_tol: float = 1e-13) -> tuple[np.ndarray, SolveInfo]:
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    if len(b) == 0:
        return np.zeros(0), SolveInfo("cholesky", 0, 0.0)
    try:
        c, low = sla.cho_factor(dense, lower=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteSystemError(f"Cholesky failed: {exc}") from None
    piv = np.diag(c) ** 2
    if piv.min() < pivot_tol * np.abs(np.diag(dense)).max():
        raise IndefiniteSystemError(f"zero pivot in Cholesky (relative {piv.min() / np.abs(np.diag(dense)).max():.2e})")
    x = sla.cho_solve((c, low), b)
    bnorm = np.linalg.norm(b)
    res = float(np.linalg.norm(dense @ x - b) / bnorm) if bnorm else 0.0
    return x, SolveInfo("cholesky", 0, res)


def solve(system: LinearSystem, method: str = "auto", rtol: float = 1e-12) -> tuple[np.ndarray, SolveInfo]:
    """Solve with the constraints eliminated; returns the full DoF vector.

    ``method`` is ``"cg"``, ``"cholesky"`` or ``"auto"`` (dense Cholesky up to
    :data:`DENSE_LIMIT` free unknowns, CG above).
    """
    A, b = system.reduced()
    n = len(b)
    if method == "auto":
        method = "cholesky" if n <= DENSE_LIMIT else "cg"
    if method == "cholesky":
        x, info = dense_cholesky(A, b)
    elif method == "cg":
        x, info = pcg(A, b, rtol)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    log.info("solved %d free unknowns with %s (%d iterations, residual %.2e)", n, info.method, info.iterations, info.residual)
    return system.expand(x), info


def projection_coefficients(system: LinearSystem, dofmap: DofMap, u: np.ndarray) -> list[np.ndarray]:
    """Per-cell coefficients of the energy projection in the scaled monomials of degree k."""
    return [el.pi_star @ u[dofmap.local_to_global(c)] for c, el in enumerate(system.elements)]
