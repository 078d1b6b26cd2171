"""Manufactured problems, error norms, patch tests and convergence studies."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .assembly import DofMap, LinearSystem, assemble, build_dof_map, build_elements, face_moments, solve
from .element import LocalElement, Stabilization
from .generators import generate_mesh, kind_dimension
from .mesh import Mesh
from .polybasis import enumerate_multi_indices
from .quadrature import quadrature_on_cell

log = logging.getLogger(__name__)

ERROR_EXTRA_DEGREE = 4


# -- manufactured problems ----------------------------------------------------


@dataclass(frozen=True)
class ManufacturedProblem:
    """Exact solution with its gradient and Laplacian; ``f = -lap u``, ``g = u``.

    ``regularity`` is the Sobolev index of ``u`` (``math.inf`` when smooth).
    """

    name: str
    dim: int
    u: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    regularity: float = math.inf
    informational: bool = False

    def f(self, x: np.ndarray) -> np.ndarray:
        return -self.laplacian(x)

    def g(self, x: np.ndarray) -> np.ndarray:
        return self.u(x)


@dataclass(frozen=True)
class Polynomial:
    """Polynomial in global coordinates, ``sum c_s x**s``."""

    coefficients: Mapping[tuple[int, ...], float]
    dim: int

    @property
    def degree(self) -> int:
        return max((sum(s) for s, c in self.coefficients.items() if c != 0.0), default=0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros(len(x))
        for s, c in self.coefficients.items():
            out += c * np.prod(x ** np.asarray(s), axis=1)
        return out

    def derivative(self, axis: int) -> "Polynomial":
        out: dict[tuple[int, ...], float] = {}
        for s, c in self.coefficients.items():
            if s[axis] > 0:
                t = list(s)
                t[axis] -= 1
                out[tuple(t)] = out.get(tuple(t), 0.0) + c * s[axis]
        return Polynomial(out, self.dim)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.column_stack([self.derivative(a)(x) for a in range(self.dim)])

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        return sum(self.derivative(a).derivative(a)(x) for a in range(self.dim))

    def problem(self, name: str = "polynomial") -> ManufacturedProblem:
        return ManufacturedProblem(name, self.dim, self, self.gradient, self.laplacian)


def monomial(dim: int, exponent: Sequence[int], coefficient: float = 1.0) -> Polynomial:
    return Polynomial({tuple(int(e) for e in exponent): coefficient}, dim)


def polynomial_basis(dim: int, degree: int) -> list[Polynomial]:
    """Unscaled monomials ``x**s`` with ``|s| <= degree``."""
    return [monomial(dim, s) for s in enumerate_multi_indices(dim, degree)]


def random_polynomial(dim: int, degree: int, rng: np.random.Generator) -> Polynomial:
    coeffs = {s: float(rng.uniform(-1.0, 1.0)) for s in enumerate_multi_indices(dim, degree)}
    return Polynomial(coeffs, dim)


def _sin2d() -> ManufacturedProblem:
    pi = np.pi

    def u(x):
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1])

    def grad(x):
        sx, sy = np.sin(pi * x[:, 0]), np.sin(pi * x[:, 1])
        cx, cy = np.cos(pi * x[:, 0]), np.cos(pi * x[:, 1])
        return pi * np.column_stack([cx * sy, sx * cy])

    def lap(x):
        return -2.0 * pi**2 * u(x)

    return ManufacturedProblem("sin2d", 2, u, grad, lap)


def _sin3d() -> ManufacturedProblem:
    pi = np.pi

    def u(x):
        return np.prod(np.sin(pi * x), axis=1)

    def grad(x):
        s, c = np.sin(pi * x), np.cos(pi * x)
        return pi * np.column_stack([c[:, 0] * s[:, 1] * s[:, 2], s[:, 0] * c[:, 1] * s[:, 2], s[:, 0] * s[:, 1] * c[:, 2]])

    def lap(x):
        return -3.0 * pi**2 * u(x)

    return ManufacturedProblem("sin3d", 3, u, grad, lap)


def _corner2d() -> ManufacturedProblem:
    # harmonic r^(2/3) sin(2 theta / 3) with the singular point at the origin
    a = 2.0 / 3.0

    def polar(x):
        return np.hypot(x[:, 0], x[:, 1]), np.arctan2(x[:, 1], x[:, 0])

    def u(x):
        r, t = polar(x)
        return r**a * np.sin(a * t)

    def grad(x):
        r, t = polar(x)
        r = np.maximum(r, 1e-300)
        dr = a * r ** (a - 1.0)
        ur, ut = dr * np.sin(a * t), dr * np.cos(a * t)
        c, s = np.cos(t), np.sin(t)
        return np.column_stack([ur * c - ut * s, ur * s + ut * c])

    def lap(x):
        return np.zeros(len(x))

    return ManufacturedProblem("corner2d", 2, u, grad, lap, regularity=1.0 + a, informational=True)


def _poly_problem(name: str, dim: int, coeffs: dict) -> ManufacturedProblem:
    return Polynomial(coeffs, dim).problem(name)


PROBLEMS: dict[str, Callable[[], ManufacturedProblem]] = {
    "sin2d": _sin2d,
    "sin3d": _sin3d,
    "corner2d": _corner2d,
    "poly1-2d": lambda: _poly_problem("poly1-2d", 2, {(1, 0): 2.0, (0, 1): 3.0, (0, 0): -1.0}),
    "poly2-2d": lambda: _poly_problem("poly2-2d", 2, {(2, 0): 1.0, (0, 2): -1.0}),
    "poly3-2d": lambda: _poly_problem("poly3-2d", 2, {(3, 0): 1.0, (1, 2): -3.0, (1, 1): 0.5}),
    "poly4-2d": lambda: _poly_problem("poly4-2d", 2, {(4, 0): 1.0, (2, 2): -6.0, (0, 4): 1.0, (0, 1): 1.0}),
    "poly1-3d": lambda: _poly_problem("poly1-3d", 3, {(1, 0, 0): 1.0, (0, 1, 0): -2.0, (0, 0, 1): 0.5}),
    "poly2-3d": lambda: _poly_problem("poly2-3d", 3, {(2, 0, 0): 1.0, (0, 1, 1): 1.0, (0, 0, 2): -0.5}),
}


def get_problem(name: str) -> ManufacturedProblem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}") from None


def check_problem(problem: ManufacturedProblem, rng: np.random.Generator, n: int = 16, h: float = 1e-3) -> float:
    """Max mismatch between ``laplacian`` and a finite-difference Laplacian of ``u``.

    A cheap consistency spot check; the finite-difference error is O(h**2).
    """
    x = rng.uniform(0.1, 0.9, size=(n, problem.dim))
    fd = np.zeros(n)
    for a in range(problem.dim):
        e = np.zeros(problem.dim)
        e[a] = h
        fd += (problem.u(x + e) - 2.0 * problem.u(x) + problem.u(x - e)) / h**2
    return float(np.abs(fd - problem.laplacian(x)).max())


# -- interpolation and errors -------------------------------------------------


def interpolate(mesh: Mesh, dofmap: DofMap, u: Callable, extra_degree: int = 6) -> np.ndarray:
    """Global DoF vector of a smooth function: its face and cell moments."""
    k = dofmap.k
    out = np.zeros(dofmap.size)
    for f, face in enumerate(mesh.face_geometry):
        out[dofmap.face_dofs(f)] = face_moments(face, k, u, extra_degree)
    if dofmap.cell_block:
        for c in range(mesh.n_cells):
            cell = mesh.cell(c)
            rule = quadrature_on_cell(cell, 2 * k - 2 + extra_degree)
            vals = cell.basis(k - 2).eval(rule.points)
            start = dofmap.cell_offset(c)
            out[start : start + dofmap.cell_block] = vals.T @ (rule.weights * u(rule.points)) / cell.measure
    return out


@dataclass(frozen=True)
class ErrorNorms:
    energy: float
    l2: float
    energy_reference: float
    l2_reference: float


def compute_errors(
    system: LinearSystem, dofmap: DofMap, u_h: np.ndarray, problem: ManufacturedProblem, extra_degree: int = ERROR_EXTRA_DEGREE
) -> ErrorNorms:
    """Broken energy and L2 errors of the cellwise energy projections of ``u_h``."""
    k = dofmap.k
    e1 = e0 = n1 = n0 = 0.0
    for c, el in enumerate(system.elements):
        coeff = el.pi_star @ u_h[dofmap.local_to_global(c)]
        cell = el.cell
        rule = quadrature_on_cell(cell, 2 * k + extra_degree)
        basis = cell.basis(k)
        uq = problem.u(rule.points)
        gq = problem.grad(rule.points)
        ph = basis.eval(rule.points) @ coeff
        gh = np.einsum("qjd,j->qd", basis.grad(rule.points), coeff)
        e1 += rule.weights @ ((gq - gh) ** 2).sum(axis=1)
        e0 += rule.weights @ (uq - ph) ** 2
        n1 += rule.weights @ (gq**2).sum(axis=1)
        n0 += rule.weights @ uq**2
    return ErrorNorms(math.sqrt(max(e1, 0.0)), math.sqrt(max(e0, 0.0)), math.sqrt(n1), math.sqrt(n0))


def energy_error(system: LinearSystem, dofmap: DofMap, u_h: np.ndarray, problem: ManufacturedProblem) -> float:
    return compute_errors(system, dofmap, u_h, problem).energy


def l2_error(system: LinearSystem, dofmap: DofMap, u_h: np.ndarray, problem: ManufacturedProblem) -> float:
    return compute_errors(system, dofmap, u_h, problem).l2


def best_gradient_fit_error(mesh: Mesh, k: int, problem: ManufacturedProblem, extra_degree: int = ERROR_EXTRA_DEGREE) -> float:
    """``(sum_K min_p ||grad(u - p)||^2)^(1/2)`` over ``p`` in ``P^k(K)``."""
    total = 0.0
    for c in range(mesh.n_cells):
        cell = mesh.cell(c)
        rule = quadrature_on_cell(cell, 2 * k + extra_degree)
        g = cell.basis(k).grad(rule.points)[:, 1:, :]
        gq = problem.grad(rule.points)
        gram = np.einsum("q,qid,qjd->ij", rule.weights, g, g)
        rhs = np.einsum("q,qid,qd->i", rule.weights, g, gq)
        coeff = np.linalg.solve(gram, rhs) if len(gram) else np.zeros(0)
        diff = gq - np.einsum("qjd,j->qd", g, coeff)
        total += rule.weights @ (diff**2).sum(axis=1)
    return math.sqrt(max(total, 0.0))


# -- single solve -------------------------------------------------------------


@dataclass
class SolveResult:
    mesh: Mesh
    dofmap: DofMap
    system: LinearSystem
    u: np.ndarray
    iterations: int
    method: str
    residual: float
    floor_limited: bool = False


def solve_problem(
    mesh: Mesh,
    k: int,
    problem: ManufacturedProblem,
    stabilization: Stabilization = "vem-identity",
    *,
    threads: int = 1,
    method: str = "auto",
    elements: Sequence[LocalElement] | None = None,
) -> SolveResult:
    """Assemble and solve; pass ``elements`` to reuse local matrices across problems."""
    if problem.dim != mesh.dimension:
        raise ValueError(f"problem {problem.name!r} is {problem.dim}D but the mesh is {mesh.dimension}D")
    dofmap = build_dof_map(mesh, k)
    system = assemble(mesh, dofmap, k, stabilization, problem.f, problem.g, threads=threads, elements=elements)
    u, info = solve(system, method)
    return SolveResult(mesh, dofmap, system, u, info.iterations, info.method, info.residual, info.floor_limited)


# -- patch test ---------------------------------------------------------------


@dataclass(frozen=True)
class PatchTestResult:
    kind: str
    k: int
    degree: int
    max_dof_error: float
    scale: float
    energy_error: float

    @property
    def relative_error(self) -> float:
        return self.max_dof_error / max(self.scale, 1.0)


def patch_test_on_mesh(
    mesh: Mesh,
    k: int,
    p: Polynomial,
    stabilization: Stabilization = "vem-identity",
    threads: int = 1,
    method: str = "auto",
    elements: Sequence[LocalElement] | None = None,
) -> tuple[float, float, float]:
    """Solve with ``u = p`` and compare against the exact DoFs of ``p``.

    Returns ``(max DoF error, max |DoF|, energy error)``.
    """
    if p.degree > k:
        raise ValueError(f"patch polynomial has degree {p.degree} > k = {k}")
    res = solve_problem(mesh, k, p.problem(), stabilization, threads=threads, method=method, elements=elements)
    exact = interpolate(mesh, res.dofmap, p)
    err = compute_errors(res.system, res.dofmap, res.u, p.problem())
    return float(np.abs(res.u - exact).max()), float(np.abs(exact).max()), err.energy


def run_patch_test(
    kind: str,
    k: int,
    p: Polynomial,
    resolution: int = 4,
    seed: int = 0,
    stabilization: Stabilization = "vem-identity",
    threads: int = 1,
) -> PatchTestResult:
    mesh = generate_mesh(kind, resolution, seed)
    err, scale, energy = patch_test_on_mesh(mesh, k, p, stabilization, threads)
    return PatchTestResult(kind, k, p.degree, err, scale, energy)


def patch_test_basis(
    mesh: Mesh, k: int, stabilization: Stabilization = "vem-identity", threads: int = 1
) -> list[tuple[Polynomial, float, float]]:
    """Patch test for every monomial ``x**s`` with ``|s| <= k``: ``(p, max DoF error, max |DoF|)``."""
    elements = build_elements(mesh, k, stabilization, threads)
    out = []
    for p in polynomial_basis(mesh.dimension, k):
        err, scale, _ = patch_test_on_mesh(mesh, k, p, stabilization, elements=elements)
        out.append((p, err, scale))
    return out


# -- convergence --------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    resolution: int
    h: float
    dofs: int
    energy_error: float
    l2_error: float
    cg_iters: int
    wall_ms: float
    h_max: float = float("nan")
    best_fit_error: float = float("nan")


def mesh_size(mesh: Mesh) -> float:
    """Mean cell diameter.

    Used as the refinement parameter for rate fits: on random families the
    maximum diameter jumps with single outlier cells, while the mean tracks
    refinement.  Both coincide on structured meshes.
    """
    return float(np.mean([g.diameter for g in mesh.cell_geometry]))


def fit_rate(h: Sequence[float], err: Sequence[float], last: int = 3) -> float:
    """Least-squares slope of ``log err`` against ``log h`` over the finest ``last`` points."""
    h = np.asarray(h, dtype=float)[-last:]
    err = np.asarray(err, dtype=float)[-last:]
    if len(h) < 2 or np.any(err <= 0.0):
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class ConvergenceReport:
    problem: str
    kind: str
    k: int
    stabilization: str
    rows: list[ConvergenceRow] = field(default_factory=list)
    expected_energy_rate: float = float("nan")
    expected_l2_rate: float = float("nan")
    energy_tolerance: float = 0.15
    l2_tolerance: float = 0.2
    error: str | None = None

    @property
    def h(self) -> list[float]:
        return [r.h for r in self.rows]

    @property
    def energy_rate(self) -> float:
        return fit_rate(self.h, [r.energy_error for r in self.rows])

    @property
    def l2_rate(self) -> float:
        return fit_rate(self.h, [r.l2_error for r in self.rows])

    @property
    def energy_passed(self) -> bool:
        return self.error is None and abs(self.energy_rate - self.expected_energy_rate) <= self.energy_tolerance

    @property
    def l2_passed(self) -> bool:
        return self.error is None and abs(self.l2_rate - self.expected_l2_rate) <= self.l2_tolerance

    @property
    def monotone(self) -> bool:
        e1 = [r.energy_error for r in self.rows]
        e0 = [r.l2_error for r in self.rows]
        return all(a > b for a, b in zip(e1, e1[1:])) and all(a > b for a, b in zip(e0, e0[1:]))

    def bound_constants(self) -> list[float]:
        """Energy error over the best cellwise gradient-fit error, per resolution."""
        return [r.energy_error / r.best_fit_error for r in self.rows]

    def rates_dict(self) -> dict:
        return {
            "problem": self.problem,
            "kind": self.kind,
            "k": self.k,
            "stabilization": self.stabilization,
            "resolutions": [r.resolution for r in self.rows],
            "h": self.h,
            "h_max": [r.h_max for r in self.rows],
            "energy_rate": self.energy_rate,
            "l2_rate": self.l2_rate,
            "expected_energy_rate": self.expected_energy_rate,
            "expected_l2_rate": self.expected_l2_rate,
            "energy_passed": self.energy_passed,
            "l2_passed": self.l2_passed,
            "monotone": self.monotone,
            "error": self.error,
        }


def expected_rates(k: int, regularity: float) -> tuple[float, float]:
    """Energy and L2 rates ``min(k, s - 1)``-type bounds for a solution in ``H^s``."""
    e = min(float(k), regularity - 1.0)
    return e, e + 1.0


def run_convergence(
    problem: ManufacturedProblem | str,
    kind: str,
    k: int,
    resolutions: Sequence[int],
    stabilization: Stabilization = "vem-identity",
    *,
    seed: int = 0,
    threads: int = 1,
    method: str = "auto",
    best_fit: bool = False,
    energy_tolerance: float = 0.15,
    l2_tolerance: float = 0.2,
) -> ConvergenceReport:
    """Solve on each resolution and fit rates; a failure stops with a partial report."""
    if isinstance(problem, str):
        problem = get_problem(problem)
    if len(resolutions) < 3:
        raise ValueError("need at least 3 resolutions")
    if kind_dimension(kind) != problem.dim:
        raise ValueError(f"problem {problem.name!r} is {problem.dim}D but mesh kind {kind!r} is not")
    e_rate, l_rate = expected_rates(k, problem.regularity)
    stab_name = stabilization if isinstance(stabilization, str) else "custom"
    report = ConvergenceReport(problem.name, kind, k, stab_name, [], e_rate, l_rate, energy_tolerance, l2_tolerance)
    for res in resolutions:
        t0 = time.perf_counter()
        try:
            mesh = generate_mesh(kind, res, seed)
            sol = solve_problem(mesh, k, problem, stabilization, threads=threads, method=method)
            err = compute_errors(sol.system, sol.dofmap, sol.u, problem)
        except (ArithmeticError, ValueError) as exc:
            report.error = f"resolution {res}: {exc}"
            log.error("convergence run aborted at resolution %d: %s", res, exc)
            break
        wall = (time.perf_counter() - t0) * 1e3
        best = best_gradient_fit_error(mesh, k, problem) if best_fit else float("nan")
        h = mesh_size(mesh)
        report.rows.append(ConvergenceRow(res, h, sol.dofmap.size, err.energy, err.l2, sol.iterations, wall, mesh.h, best))
        log.info("res %d: h=%.4g dofs=%d energy=%.4e l2=%.4e", res, h, sol.dofmap.size, err.energy, err.l2)
    return report
