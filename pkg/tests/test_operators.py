import time

import numpy as np
import pytest

from kdvdg.mesh import build_uniform_mesh, gauss_rule
from kdvdg.operators import (
    apply_gradient,
    apply_ip,
    assemble,
    coercivity_constant,
    default_sigma,
    denorm_matrix,
    discrete_laplacian,
)
from kdvdg.space import DgFunction, SpaceMismatch, denorm, inner, l2_project


def random_dg(rng, mesh, q):
    return DgFunction(mesh, rng.standard_normal((mesh.num_cells, q + 1)))


def continuous_dg(rng, mesh, q):
    """Random continuous element: project a continuous interpolant of random nodal data."""
    from kdvdg.projections import conforming_basis

    C = conforming_basis(mesh, q)
    return DgFunction.from_flat(mesh, q, C @ rng.standard_normal(C.shape[1]))


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_gradient_skew_adjoint(rng, q):
    t0 = time.perf_counter()
    mesh = build_uniform_mesh(11, 40.0)
    ops = assemble(mesh, q)
    worst = 0.0
    for _ in range(100):
        W, P = random_dg(rng, mesh, q), random_dg(rng, mesh, q)
        lhs = inner(apply_gradient(ops, W), P) + inner(W, apply_gradient(ops, P))
        worst = max(worst, abs(lhs))
        assert abs(inner(apply_gradient(ops, W), W)) <= 1e-12
    assert worst <= 1e-12
    assert time.perf_counter() - t0 < 1.0


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_ip_symmetric(q):
    ops = assemble(build_uniform_mesh(9, 3.0), q)
    A = ops.A.toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()


def test_ip_apply_matches_matrix(rng):
    ops = assemble(build_uniform_mesh(6, 2.0), 2)
    W, P = random_dg(rng, ops.mesh, 2), random_dg(rng, ops.mesh, 2)
    assert apply_ip(ops, W, P) == pytest.approx(apply_ip(ops, P, W), rel=1e-12)
    assert apply_ip(ops, W, P) == pytest.approx(-inner(discrete_laplacian(ops, W), P), rel=1e-12)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_gradient_of_continuous_is_derivative(rng, q):
    mesh = build_uniform_mesh(7, 5.0)
    ops = assemble(mesh, q)
    W = continuous_dg(rng, mesh, q)
    assert np.abs(W.traces().jump).max() <= 1e-13
    np.testing.assert_allclose(apply_gradient(ops, W).coeffs, W.derivative().coeffs, atol=1e-12)


@pytest.mark.parametrize("q", [1, 2, 4])
def test_constants_in_kernel(q):
    ops = assemble(build_uniform_mesh(8, 4.0), q)
    c = DgFunction.constant(ops.mesh, q, 2.5)
    assert np.abs(apply_gradient(ops, c).coeffs).max() <= 1e-13
    assert np.abs(discrete_laplacian(ops, c).coeffs).max() <= 1e-12


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_coercivity_default_penalty(rng, q):
    t0 = time.perf_counter()
    mesh = build_uniform_mesh(9, 4.0)
    ops = assemble(mesh, q)
    assert ops.sigma == default_sigma(q) == 10 * q * q
    Cc = coercivity_constant(ops)
    assert Cc > 0
    for _ in range(100):
        W = random_dg(rng, mesh, q)
        assert apply_ip(ops, W, W) >= Cc * denorm(W) ** 2 * (1 - 1e-10)
        assert apply_ip(ops, W, W) > 0
    assert time.perf_counter() - t0 < 1.0


def test_coercivity_lost_for_tiny_penalty():
    ops = assemble(build_uniform_mesh(9, 4.0), 2, sigma=0.01)
    assert coercivity_constant(ops) < 0


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_reject_nonpositive_penalty(sigma):
    with pytest.raises(ValueError):
        assemble(build_uniform_mesh(4, 1.0), 1, sigma)


def test_space_mismatch(rng):
    ops = assemble(build_uniform_mesh(5, 1.0), 2)
    with pytest.raises(SpaceMismatch):
        apply_gradient(ops, random_dg(rng, build_uniform_mesh(6, 1.0), 2))


def test_denorm_matrix_matches_norm(rng):
    mesh = build_uniform_mesh(5, 2.0)
    W = random_dg(rng, mesh, 3)
    B = denorm_matrix(mesh, 3)
    assert W.flat @ B @ W.flat == pytest.approx(denorm(W) ** 2, rel=1e-12)


@pytest.mark.parametrize("q", [1, 2])
def test_ip_consistency_rate(q):
    """sup over test functions of |a_h(P v, Phi) - int(-v_xx) Phi| / enorm-dual ~ h^q."""
    L = 2 * np.pi
    v = np.sin
    errs, hs = [], []
    for N in (10, 20, 40):
        mesh = build_uniform_mesh(N, L)
        ops = assemble(mesh, q)
        rule = gauss_rule(q + 12)
        V = l2_project(v, mesh, q, rule)
        # residual functional r(Phi) = a_h(V, Phi) - int v Phi  (-v_xx = v)
        r = ops.A @ V.flat - ops.mass * l2_project(v, mesh, q, rule).flat
        # dual norm with respect to denorm: sqrt(r^T B^+ r) on the mean-free part
        B = denorm_matrix(mesh, q) + np.diag(ops.mass) / L**2
        errs.append(np.sqrt(r @ np.linalg.solve(B, r)))
        hs.append(L / N)
    rates = np.log(np.array(errs[1:]) / errs[:-1]) / np.log(np.array(hs[1:]) / hs[:-1])
    assert rates[-1] >= q - 0.2
