import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncvem.element import build_local_element, check_element
from ncvem.generators import MESH_KINDS, polygon_mesh
from ncvem.mfd import (
    build_pi_perp,
    is_spd,
    lemma_part_i,
    lemma_part_ii,
    mean_trace,
    mfd_stabilization,
    random_spd,
    verify_rel1,
)


def unit_square():
    return polygon_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2, 3]]).cell(0)


def pentagon(seed=0):
    rng = np.random.default_rng(seed)
    a = np.sort(rng.uniform(0, 2 * np.pi, 5))
    a = 2 * np.pi * np.arange(5) / 5 + 0.3 * (a - a.mean()) / 5
    r = rng.uniform(0.8, 1.2, 5)
    return polygon_mesh(np.column_stack([r * np.cos(a), r * np.sin(a)]), [list(range(5))]).cell(0)


def hexagon():
    a = np.pi / 3 * np.arange(6)
    return polygon_mesh(np.column_stack([np.cos(a), np.sin(a)]), [list(range(6))]).cell(0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_pi_perp_properties(k):
    el = build_local_element(pentagon(), k)
    P = build_pi_perp(el.D)
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.allclose(P, P.T, atol=1e-15)
    assert np.allclose(P @ el.D, el.D, atol=1e-12)
    assert np.trace(P) == pytest.approx(el.layout.n_poly, abs=1e-12)


def test_pi_perp_rank_deficient():
    D = np.ones((4, 2))
    with pytest.raises(np.linalg.LinAlgError, match="rank deficient"):
        build_pi_perp(D)


def test_rel1_unit_square():
    el = build_local_element(unit_square(), 1)
    report = verify_rel1(el.pi, build_pi_perp(el.D))
    assert report.max < 1e-13


def test_rel1_pentagon():
    el = build_local_element(pentagon(), 2)
    assert verify_rel1(el.pi, build_pi_perp(el.D)).max < 1e-12


def test_rel1_degenerate_case():
    # a triangle with k = 1 has N^K = n_P = 3, so both projectors are the identity
    cell = polygon_mesh([[0, 0], [1, 0], [0.2, 0.9]], [[0, 1, 2]]).cell(0)
    el = build_local_element(cell, 1)
    P = build_pi_perp(el.D)
    assert np.allclose(P, np.eye(3), atol=1e-14)
    assert np.allclose(el.pi, P, atol=1e-14)
    assert verify_rel1(el.pi, P).max < 1e-14


def test_lemma_i_mean_trace_unit_square():
    el = build_local_element(unit_square(), 1)
    P = build_pi_perp(el.D)
    U = mean_trace(el.M0) * np.eye(4)
    assert lemma_part_i(mfd_stabilization(P, U), el.pi, np.linalg.norm(U)).residual < 1e-13


def test_lemma_i_random_spd_hexagon():
    el = build_local_element(hexagon(), 2)
    P = build_pi_perp(el.D)
    U = random_spd(el.layout.size, np.random.default_rng(7))
    assert is_spd(U)
    assert lemma_part_i(mfd_stabilization(P, U), el.pi, np.linalg.norm(U)).residual < 1e-12


@pytest.mark.parametrize("cell", [unit_square(), pentagon(), hexagon()])
def test_lemma_i_identity_parameter(cell):
    el = build_local_element(cell, 2)
    P = build_pi_perp(el.D)
    M_mfd = mfd_stabilization(P, np.eye(el.layout.size))
    assert np.allclose(M_mfd, np.eye(el.layout.size) - P, atol=1e-14)
    assert lemma_part_i(M_mfd, el.pi, np.sqrt(el.layout.size)).residual < 1e-12


def test_lemma_ii_default_stabiliser():
    el = build_local_element(unit_square(), 1)
    out = lemma_part_ii(el.S, el.pi, build_pi_perp(el.D))
    assert out.residual < 1e-13
    assert out.spd_input


def test_lemma_ii_random_diagonal_pentagon():
    el = build_local_element(pentagon(), 2)
    S = np.diag(np.random.default_rng(3).uniform(0.1, 10.0, el.layout.size))
    assert lemma_part_ii(S, el.pi, build_pi_perp(el.D)).residual < 1e-12


def test_lemma_ii_zero_stabiliser_is_flagged():
    el = build_local_element(pentagon(), 2)
    out = lemma_part_ii(np.zeros((el.layout.size,) * 2), el.pi, build_pi_perp(el.D))
    assert out.residual == 0.0
    assert not np.any(out.U)
    assert not out.spd_input


def test_is_spd():
    assert is_spd(np.eye(3))
    assert not is_spd(np.diag([1.0, 0.0, 1.0]))
    assert not is_spd(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_consistency_term_shared():
    # both stabilisations reuse the identical consistency term
    cell = pentagon(4)
    a = build_local_element(cell, 3, "vem-identity")
    b = build_local_element(cell, 3, "mfd-trace")
    assert np.array_equal(a.M0, b.M0)


@pytest.mark.parametrize("kind", MESH_KINDS)
def test_mfd_trace_element_invariants(mesh_cache, kind):
    mesh = mesh_cache(kind, 2, 5)
    for k in range(1, 4 if mesh.dimension == 2 else 3):
        checks = check_element(build_local_element(mesh.cell(0), k, "mfd-trace"))
        assert checks["stabilization_annihilation"] < 1e-12
        assert checks["kernel"] < 1e-12
        assert checks["consistency"] < 1e-12
        assert checks["min_eigenvalue"] > -1e-10


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_lemma_residuals_random(seed, k):
    rng = np.random.default_rng(seed)
    cell = pentagon(seed)
    el = build_local_element(cell, k)
    P = build_pi_perp(el.D)
    n = el.layout.size
    U = random_spd(n, rng)
    assert verify_rel1(el.pi, P).max <= 1e-12
    assert lemma_part_i(mfd_stabilization(P, U), el.pi, np.linalg.norm(U)).residual <= 1e-12
    assert lemma_part_ii(random_spd(n, rng), el.pi, P).residual <= 1e-12
