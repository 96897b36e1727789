import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kdvdg.exact import STRETCHED_LENGTH
from kdvdg.mesh import (
    Mesh,
    build_uniform_mesh,
    gauss_rule,
    gauss_rule_for_degree,
    legendre_deriv,
    legendre_deriv_table,
    legendre_eval,
    legendre_table,
)


def test_uniform_mesh_nodes():
    m = build_uniform_mesh(4, 1.0)
    np.testing.assert_allclose(m.nodes, [0, 0.25, 0.5, 0.75, 1.0])
    assert m.num_cells == 4 and m.periodic and m.is_uniform


def test_fig1_spacing():
    m = build_uniform_mesh(100, 40.0)
    np.testing.assert_allclose(m.cell_sizes, 0.4, rtol=4e-14)


def test_stretched_domain_sums_to_length():
    m = build_uniform_mesh(3, STRETCHED_LENGTH)
    assert abs(m.cell_sizes.sum() - STRETCHED_LENGTH) <= 1e-13
    np.testing.assert_allclose(m.cell_sizes, STRETCHED_LENGTH / 3, rtol=1e-15)


@pytest.mark.parametrize("n, L", [(1, 1.0), (0, 1.0), (4, 0.0), (4, -2.0), (2.5, 1.0)])
def test_bad_mesh_inputs(n, L):
    with pytest.raises(ValueError):
        build_uniform_mesh(n, L)


def test_nonuniform_mesh_face_sizes():
    m = Mesh(np.array([0.0, 1.0, 3.0, 4.0]))
    assert not m.is_uniform
    # face 0 joins the last cell (size 1) and the first (size 1)
    np.testing.assert_allclose(m.face_h, [1.0, 1.5, 1.5])


def test_legendre_values():
    s = np.linspace(-1, 1, 7)
    np.testing.assert_allclose(legendre_eval(0, s), 1.0)
    assert legendre_eval(2, 0.0) == pytest.approx(-0.5)
    for k in range(8):
        assert legendre_eval(k, 1.0) == pytest.approx(1.0)
        assert legendre_eval(k, -1.0) == pytest.approx((-1.0) ** k)
        assert legendre_deriv(k, 1.0) == pytest.approx(k * (k + 1) / 2)


def test_legendre_against_numpy():
    s = np.linspace(-1, 1, 31)
    P = legendre_table(6, s)
    D = legendre_deriv_table(6, s, 1)
    for k in range(7):
        c = np.zeros(k + 1)
        c[k] = 1
        np.testing.assert_allclose(P[k], np.polynomial.legendre.legval(s, c), atol=1e-14)
        np.testing.assert_allclose(D[k], np.polynomial.legendre.legval(s, np.polynomial.legendre.legder(c)),
                                   atol=1e-12)


def test_legendre_orthogonality():
    rule = gauss_rule(10)
    P = legendre_table(8, rule.points)
    G = (P * rule.weights) @ P.T
    np.testing.assert_allclose(G, np.diag(2.0 / (2 * np.arange(9) + 1)), atol=1e-14)


def test_gauss_rule_small_cases():
    r1 = gauss_rule_for_degree(1)
    assert r1.num_points == 1 and r1.points[0] == 0.0 and r1.weights[0] == pytest.approx(2.0)
    r3 = gauss_rule_for_degree(3)
    np.testing.assert_allclose(r3.points, [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
    r8 = gauss_rule_for_degree(8)
    assert r8.num_points == 5 and r8.exact_degree == 9
    assert abs(r8.integrate(r8.points**8) - 2 / 9) <= 1e-14


@pytest.mark.parametrize("n", [1, 2, 5, 9, 17, 40])
def test_gauss_rule_matches_numpy(n):
    x, w = np.polynomial.legendre.leggauss(n)
    r = gauss_rule(n)
    np.testing.assert_allclose(r.points, x, atol=1e-14)
    np.testing.assert_allclose(r.weights, w, atol=1e-14)
    assert abs(r.weights.sum() - 2.0) <= 1e-13


@given(n=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
def test_gauss_exactness_random_polynomials(n, seed):
    rule = gauss_rule(n)
    c = np.random.default_rng(seed).standard_normal(2 * n)
    p = np.polynomial.Polynomial(c)
    exact = p.integ()(1.0) - p.integ()(-1.0)
    scale = np.abs(c).sum()
    assert abs(rule.integrate(p(rule.points)) - exact) <= 1e-13 * scale
