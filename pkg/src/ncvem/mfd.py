"""Mimetic (MFD) stabilisation and its algebraic equivalence with the VEM one.

The MFD stabilisation is ``(I - P) U (I - P)`` with ``P = D (D^T D)^{-1} D^T``
the orthogonal projector onto the polynomial DoF subspace and ``U`` any SPD
parameter matrix.  The VEM stabilisation is ``(I - Pi)^T S (I - Pi)`` with
the oblique energy projector ``Pi``.  Each family is contained in the other.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .polybasis import COND_WARN, ConditioningWarning


def build_pi_perp(D: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the column space of ``D``.

    Built as ``Q Q^T`` from a Householder QR of ``D``; forming ``D^T D``
    would square the (already large) condition number of D.
    """
    Q, R = np.linalg.qr(D)
    diag = np.abs(np.diag(R))
    if diag.size and (diag.min() == 0.0 or diag.min() < 1e-14 * diag.max()):
        raise np.linalg.LinAlgError("D is rank deficient; the polynomial DoF subspace is degenerate")
    # QR accuracy depends on cond(D), not on cond(D^T D) = cond(D)**2
    if diag.max() / diag.min() > COND_WARN:
        warnings.warn("D is ill-conditioned", ConditioningWarning, stacklevel=2)
    P = Q @ Q.T
    return 0.5 * (P + P.T)


def mfd_stabilization(pi_perp: np.ndarray, U: np.ndarray) -> np.ndarray:
    r = np.eye(len(pi_perp)) - pi_perp
    return r @ U @ r


def vem_stabilization(pi: np.ndarray, S: np.ndarray) -> np.ndarray:
    r = np.eye(len(pi)) - pi
    return r.T @ S @ r


def _rel(a: np.ndarray, b: np.ndarray, reference: float = 0.0) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), reference)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


class Rel1Report(NamedTuple):
    pi_pperp: float
    pit_pperp: float
    pperp_pi: float

    @property
    def max(self) -> float:
        return max(self)


def verify_rel1(pi: np.ndarray, pi_perp: np.ndarray) -> Rel1Report:
    """Relative residuals of ``Pi P = P``, ``Pi^T P = Pi^T`` and ``P Pi = Pi``."""
    return Rel1Report(
        _rel(pi @ pi_perp, pi_perp),
        _rel(pi.T @ pi_perp, pi.T),
        _rel(pi_perp @ pi, pi),
    )


class LemmaPartI(NamedTuple):
    S: np.ndarray
    M_vem: np.ndarray
    residual: float


class LemmaPartII(NamedTuple):
    U: np.ndarray
    residual: float
    spd_input: bool


def lemma_part_i(M_mfd: np.ndarray, pi: np.ndarray, reference: float = 0.0) -> LemmaPartI:
    """Take ``S = M_mfd`` and check that the VEM form reproduces it.

    The residual is relative to the larger of the two matrices and
    ``reference`` (pass the norm of U when both sides may vanish).
    """
    S = M_mfd
    M_vem = vem_stabilization(pi, S)
    return LemmaPartI(S, M_vem, _rel(M_vem, M_mfd, reference))


def lemma_part_ii(S: np.ndarray, pi: np.ndarray, pi_perp: np.ndarray) -> LemmaPartII:
    """Take ``U = M_vem`` and check that the MFD form reproduces it.

    ``spd_input`` flags whether ``S`` was an admissible (SPD) stabiliser.
    """
    M_vem = vem_stabilization(pi, S)
    U = M_vem
    M_mfd = mfd_stabilization(pi_perp, U)
    return LemmaPartII(U, _rel(M_mfd, M_vem, float(np.linalg.norm(S))), is_spd(S))


def is_spd(A: np.ndarray) -> bool:
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(np.abs(A).max(), 1e-300)):
        return False
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


def random_spd(n: int, rng: np.random.Generator) -> np.ndarray:
    """``A^T A + eps I`` with ``eps = 1e-3 ||A^T A||``."""
    a = rng.standard_normal((n, n))
    ata = a.T @ a
    return ata + 1e-3 * np.linalg.norm(ata, 2) * np.eye(n)


def mean_trace(M0: np.ndarray) -> float:
    return float(np.trace(M0) / len(M0))
