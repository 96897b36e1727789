"""Discrete gradient and the interior penalty form (with its Laplacian)."""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .mesh import Mesh, gauss_rule, legendre_deriv_table, legendre_table
from .space import DgFunction, SpaceMismatch, mass_diagonal


def _reference_matrices(q: int):
    rule = gauss_rule(q + 2)
    P = legendre_table(q, rule.points)
    dP = legendre_deriv_table(q, rule.points, 1)
    d2P = legendre_deriv_table(q, rule.points, 2)
    w = rule.weights
    D = (P * w) @ dP.T  # D[l, k] = int P_l P_k'
    S = (dP * w) @ dP.T  # S[l, k] = int P_l' P_k'
    S2 = (d2P * w) @ d2P.T
    return D, S, S2


class OperatorSet:
    """Assembled operators for a fixed (mesh, q, sigma).

    ``G`` and ``A`` are the matrices of the bilinear forms (test index in
    rows); ``mass`` is the diagonal of ``M``. The action of the discrete
    gradient is ``M^{-1} G`` and of the discrete Laplacian ``-M^{-1} A``.
    """

    def __init__(self, mesh: Mesh, degree: int, sigma: float):
        if degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        if not sigma > 0.0:
            raise ValueError(f"penalty sigma must be positive, got {sigma!r}")
        self.mesh = mesh
        self.degree = degree
        self.sigma = float(sigma)
        self.mass = mass_diagonal(mesh, degree)
        self.mass.setflags(write=False)
        self.G, self.A = self._assemble()
        self._cache = {}

    @property
    def ndof(self) -> int:
        return self.mesh.num_cells * (self.degree + 1)

    def _assemble(self):
        mesh, q = self.mesh, self.degree
        N, nb = mesh.num_cells, q + 1
        h = mesh.cell_sizes
        Dref, Sref, _ = _reference_matrices(q)
        k = np.arange(nb)
        r = np.ones(nb)  # P_k(1)
        l = (-1.0) ** k  # P_k(-1)
        dr1 = k * (k + 1) / 2.0  # P_k'(1)
        dl1 = (-1.0) ** (k + 1) * k * (k + 1) / 2.0  # P_k'(-1)

        rows, cols, gvals, avals = [], [], [], []
        local = np.arange(nb)
        for j in range(N):
            idx = j * nb + local
            rr, cc = np.meshgrid(idx, idx, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            gvals.append(Dref.ravel())
            avals.append((2.0 / h[j] * Sref).ravel())

        for j in range(N):
            jm = (j - 1) % N
            idx = np.concatenate([jm * nb + local, j * nb + local])
            jump = np.concatenate([r, -l])
            avg = 0.5 * np.concatenate([r, l])
            davg = 0.5 * np.concatenate([dr1 * 2.0 / h[jm], dl1 * 2.0 / h[j]])
            hf = 0.5 * (h[jm] + h[j])
            gblock = -np.outer(avg, jump)
            ablock = (
                -np.outer(davg, jump)
                - np.outer(jump, davg)
                + self.sigma / hf * np.outer(jump, jump)
            )
            rr, cc = np.meshgrid(idx, idx, indexing="ij")
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            gvals.append(gblock.ravel())
            avals.append(ablock.ravel())

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        n = N * nb
        G = sp.csr_matrix((np.concatenate(gvals), (rows, cols)), shape=(n, n))
        A = sp.csr_matrix((np.concatenate(avals), (rows, cols)), shape=(n, n))
        G.eliminate_zeros()
        A.eliminate_zeros()
        return G, A

    def check(self, *fs: DgFunction):
        for f in fs:
            if not f.mesh.same_as(self.mesh) or f.degree != self.degree:
                raise SpaceMismatch("function does not belong to this operator's space")

    def triplets(self, which: str = "A"):
        """(row, col, value) arrays for debugging dumps."""
        mat = {"A": self.A, "G": self.G, "M": sp.diags(self.mass)}[which].tocoo()
        return mat.row, mat.col, mat.data


def assemble(mesh: Mesh, degree: int, sigma: float | None = None) -> OperatorSet:
    """Operators on V_q; default penalty sigma = 10 q^2."""
    if sigma is None:
        sigma = default_sigma(degree)
    return OperatorSet(mesh, degree, sigma)


def default_sigma(degree: int) -> float:
    return 10.0 * degree**2


def apply_gradient(ops: OperatorSet, W: DgFunction) -> DgFunction:
    ops.check(W)
    return DgFunction.from_flat(ops.mesh, ops.degree, (ops.G @ W.flat) / ops.mass)


def apply_ip(ops: OperatorSet, W: DgFunction, Psi: DgFunction) -> float:
    ops.check(W, Psi)
    return float(Psi.flat @ (ops.A @ W.flat))


def discrete_laplacian(ops: OperatorSet, W: DgFunction) -> DgFunction:
    ops.check(W)
    return DgFunction.from_flat(ops.mesh, ops.degree, -(ops.A @ W.flat) / ops.mass)


def denorm_matrix(mesh: Mesh, degree: int) -> np.ndarray:
    """Dense Gram matrix of the squared mesh-dependent norm denorm^2."""
    N, nb = mesh.num_cells, degree + 1
    h = mesh.cell_sizes
    _, Sref, S2ref = _reference_matrices(degree)
    B = np.zeros((N * nb, N * nb))
    k = np.arange(nb)
    r, l = np.ones(nb), (-1.0) ** k
    for j in range(N):
        sl = slice(j * nb, (j + 1) * nb)
        B[sl, sl] += 2.0 / h[j] * Sref + 8.0 / h[j] * S2ref
    hf = mesh.face_h
    for j in range(N):
        jm = (j - 1) % N
        idx = np.concatenate([jm * nb + k, j * nb + k])
        jump = np.concatenate([r, -l])
        B[np.ix_(idx, idx)] += np.outer(jump, jump) / hf[j]
    return B


def coercivity_constant(ops: OperatorSet) -> float:
    """Smallest ratio a_h(W,W) / denorm(W)^2 over W orthogonal to constants.

    Dense generalised eigenvalue scan; intended for small meshes. A
    nonpositive value means the penalty is too small for coercivity.
    """
    B = denorm_matrix(ops.mesh, ops.degree)
    A = ops.A.toarray()
    # constants span the common kernel; remove them
    const = np.zeros(ops.ndof)
    const[:: ops.degree + 1] = 1.0
    Q = scipy.linalg.null_space(const[None, :])
    lam = scipy.linalg.eigh(Q.T @ A @ Q, Q.T @ B @ Q, eigvals_only=True)
    return float(lam[0])
