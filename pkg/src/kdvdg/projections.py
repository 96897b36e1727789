"""Special projections and continuous reconstructions of broken polynomials.

T_h and S_h fix face values of the projection; D_h builds a continuous
degree q+1 function; conforming_split separates the continuous part.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, gauss_rule
from .operators import OperatorSet
from .space import DgFunction, l2_project


class ParityError(ValueError):
    """The alternating system for S_h is singular (needs q even, N odd)."""


def _smooth_rule(degree: int):
    return gauss_rule(degree + 16)


def project_T(v: Callable, mesh: Mesh, degree: int, rule=None) -> DgFunction:
    """Moments against V_{q-1} from the L2 projection, top mode fixed by
    the left-endpoint condition T(v)(x_j^+) = v(x_j)."""
    if degree < 1:
        raise ValueError("T_h needs q >= 1")
    rule = rule or _smooth_rule(degree)
    c = np.array(l2_project(v, mesh, degree, rule).coeffs)
    q = degree
    signs = (-1.0) ** np.arange(q)
    vx = np.asarray(v(mesh.nodes[:-1]), dtype=float) * np.ones(mesh.num_cells)
    c[:, q] = (-1.0) ** q * (vx - c[:, :q] @ signs)
    return DgFunction(mesh, c)


def alternating_matrix(num_cells: int, degree: int) -> np.ndarray:
    """Row j: (-1)^q on the diagonal and 1 in column j-1 (wrapping)."""
    N = num_cells
    M = (-1.0) ** degree * np.eye(N)
    M[np.arange(N), (np.arange(N) - 1) % N] += 1.0
    return M


def alternating_inverse(num_cells: int) -> np.ndarray:
    """Closed form inverse for q even, N odd: entries (-1)^((i-j) mod N) / 2."""
    if num_cells % 2 == 0:
        raise ParityError("the alternating system is singular for an even number of cells")
    i = np.arange(num_cells)
    return 0.5 * (-1.0) ** ((i[:, None] - i[None, :]) % num_cells)


def check_parity(mesh: Mesh, degree: int):
    if degree % 2 or mesh.num_cells % 2 == 0:
        raise ParityError(
            f"S_h requires an even degree and an odd number of cells (got q={degree}, N={mesh.num_cells})"
        )
    if not mesh.is_uniform:
        raise ParityError("S_h requires a uniform mesh")


def project_S(v: Callable, mesh: Mesh, degree: int, rule=None) -> DgFunction:
    """Moments against V_{q-1} plus face averages {S(v)}_j = v(x_j).

    Writing S(v) = T(v) + sum_j alpha_j l_{j,q}, the averages give
    alpha_{j-1} + (-1)^q alpha_j = v(x_j) - T(v)(x_j^-); the factor 1/2 in
    {e}_j = (v(x_j) - T(v)(x_j^-))/2 cancels against the average.
    """
    check_parity(mesh, degree)
    T = project_T(v, mesh, degree, rule)
    vx = np.asarray(v(mesh.nodes[:-1]), dtype=float) * np.ones(mesh.num_cells)
    rhs = vx - T.traces().left
    alpha = np.linalg.solve(alternating_matrix(mesh.num_cells, degree), rhs)
    c = np.array(T.coeffs)
    c[:, degree] += alpha
    S = DgFunction(mesh, c)
    mismatch = np.max(np.abs(S.traces().average - vx))
    assert mismatch <= 1e-9 * (1.0 + np.max(np.abs(vx))), mismatch
    return S


def reconstruct_D(W: DgFunction) -> DgFunction:
    """Continuous degree q+1 reconstruction with D(W)(x_j^+) = {W}_j.

    D(W) - W lives in modes q and q+1 only, with coefficients fixed by the
    face jumps of W.
    """
    q = W.degree
    J = W.traces().jump
    Jn = np.roll(J, -1)
    s = (-1.0) ** q
    c = np.zeros((W.mesh.num_cells, q + 2))
    c[:, : q + 1] = W.coeffs
    c[:, q] += 0.25 * (s * J - Jn)
    c[:, q + 1] += 0.25 * (-s * J - Jn)
    return DgFunction(W.mesh, c)


def elliptic_projection(v: Callable, vxx: Callable, ops: OperatorSet, rule=None) -> DgFunction:
    """R(v) with a_h(R, Psi) + int R Psi = int (v - v_xx) Psi for all Psi.

    Keeps the mean of v; its discrete Laplacian differs from the L2
    projection of v_xx only by R(v) - P(v), so R(v) carries no grid-scale
    content.
    """
    mesh, q = ops.mesh, ops.degree
    rule = rule or _smooth_rule(q)
    rhs = ops.mass * l2_project(lambda x: v(x) - vxx(x), mesh, q, rule).flat
    K = (sp.diags(ops.mass) + ops.A).tocsc()
    return DgFunction.from_flat(mesh, q, spla.spsolve(K, rhs))


def conforming_basis(mesh: Mesh, degree: int) -> sp.csr_matrix:
    """Map from continuous (hat + bubble) coefficients to Legendre coefficients."""
    N, nb, q = mesh.num_cells, degree + 1, degree
    rows, cols, vals = [], [], []
    for j in range(N):
        # hat at node j: left half lives in cell j-1, right half in cell j
        jm = (j - 1) % N
        rows += [jm * nb, jm * nb + 1, j * nb, j * nb + 1]
        cols += [j] * 4
        vals += [0.5, 0.5, 0.5, -0.5]
    col = N
    for j in range(N):
        for k in range(2, q + 1):
            rows += [j * nb + k, j * nb + k - 2]
            cols += [col, col]
            vals += [1.0, -1.0]
            col += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(N * nb, col))


def _split_solver(ops: OperatorSet):
    if "split" not in ops._cache:
        C = conforming_basis(ops.mesh, ops.degree)
        K = (C.T @ ops.A @ C).tocsc()
        # integral of each conforming basis function; only mode 0 contributes
        m = np.asarray(C.T @ np.where(np.arange(ops.ndof) % (ops.degree + 1) == 0, ops.mass, 0.0))
        saddle = sp.bmat([[K, sp.csc_matrix(m[:, None])], [sp.csr_matrix(m[None, :]), None]]).tocsc()
        ops._cache["split"] = (C, m, spla.splu(saddle))
    return ops._cache["split"]


def conforming_split(W: DgFunction, ops: OperatorSet):
    """W = W_c + W_d with W_c continuous, a_h(W_d, Phi) = 0 for continuous Phi
    and mean(W_c) = mean(W)."""
    ops.check(W)
    C, m, lu = _split_solver(ops)
    rhs = np.concatenate([C.T @ (ops.A @ W.flat), [W.coeffs[:, 0] @ ops.mesh.cell_sizes]])
    sol = lu.solve(rhs)
    Wc = DgFunction.from_flat(ops.mesh, ops.degree, C @ sol[:-1])
    return Wc, W - Wc
