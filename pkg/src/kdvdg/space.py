"""Broken polynomial spaces in a per-cell Legendre basis.

A function in V_q is stored as an ``(N, q+1)`` coefficient array; entry
``(j, k)`` multiplies ``P_k(2 (x - x_j) / h_j - 1)`` on cell ``I_j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh, gauss_rule, gauss_rule_for_degree, legendre_deriv_table, legendre_table


class SpaceMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DgFunction:
    mesh: Mesh
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != self.mesh.num_cells:
            raise ValueError(
                f"coeffs must have shape (N, q+1) with N={self.mesh.num_cells}, got {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    @classmethod
    def from_flat(cls, mesh: Mesh, degree: int, vec) -> "DgFunction":
        return cls(mesh, np.asarray(vec, dtype=float).reshape(mesh.num_cells, degree + 1))

    @classmethod
    def zeros(cls, mesh: Mesh, degree: int) -> "DgFunction":
        return cls(mesh, np.zeros((mesh.num_cells, degree + 1)))

    @classmethod
    def constant(cls, mesh: Mesh, degree: int, value: float) -> "DgFunction":
        c = np.zeros((mesh.num_cells, degree + 1))
        c[:, 0] = value
        return cls(mesh, c)

    def check_compatible(self, other: "DgFunction"):
        if not self.mesh.same_as(other.mesh) or self.degree != other.degree:
            raise SpaceMismatch("functions live on different spaces")

    def with_degree(self, degree: int) -> "DgFunction":
        """Same function viewed in V_degree (zero-padded or truncated)."""
        c = np.zeros((self.mesh.num_cells, degree + 1))
        n = min(degree, self.degree) + 1
        c[:, :n] = self.coeffs[:, :n]
        return DgFunction(self.mesh, c)

    def __add__(self, other):
        self.check_compatible(other)
        return DgFunction(self.mesh, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self.check_compatible(other)
        return DgFunction(self.mesh, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return DgFunction(self.mesh, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return DgFunction(self.mesh, -self.coeffs)

    def derivative(self) -> "DgFunction":
        """Broken (cellwise) derivative, one degree lower (kept in V_q)."""
        q = self.degree
        d = np.zeros_like(self.coeffs)
        # P_n' = sum_{m = n-1, n-3, ...} (2m+1) P_m
        for n in range(1, q + 1):
            for m in range(n - 1, -1, -2):
                d[:, m] += (2 * m + 1) * self.coeffs[:, n]
        d *= (2.0 / self.mesh.cell_sizes)[:, None]
        return DgFunction(self.mesh, d)

    def values_at(self, s) -> np.ndarray:
        """Cell values at reference points s, shape (N, len(s))."""
        return self.coeffs @ legendre_table(self.degree, s)

    def traces(self) -> "FaceTraces":
        right_end = self.coeffs.sum(axis=1)  # P_k(1) = 1
        signs = (-1.0) ** np.arange(self.degree + 1)
        left_end = self.coeffs @ signs  # P_k(-1) = (-1)^k
        return FaceTraces(left=np.roll(right_end, 1), right=left_end)

    def __call__(self, x, side: str = "interior"):
        return evaluate(self, x, side)


@dataclass(frozen=True)
class FaceTraces:
    """One-sided values at faces j = 0..N-1; face 0 wraps periodically."""

    left: np.ndarray
    right: np.ndarray

    @property
    def jump(self) -> np.ndarray:
        return self.left - self.right

    @property
    def average(self) -> np.ndarray:
        return 0.5 * (self.left + self.right)


def evaluate(g: DgFunction, x, side: str = "interior"):
    """Point values of g; ``side`` picks the one-sided limit at mesh nodes."""
    if side not in ("left", "right", "interior"):
        raise ValueError(f"unknown side {side!r}")
    mesh = g.mesh
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.reshape(-1)
    L = mesh.domain_length
    if np.any(x < -1e-14 * L) or np.any(x > L * (1 + 1e-14)):
        raise ValueError("evaluation points must lie in [0, L]")
    at_node = np.isclose(x[:, None], mesh.nodes[None, :], rtol=0, atol=1e-13 * L).any(axis=1)
    if side == "interior" and np.any(at_node):
        raise ValueError("side='left' or 'right' is required at mesh nodes")
    j = mesh.locate(x)
    if side == "left":
        node = np.isclose(x, mesh.nodes[j], rtol=0, atol=1e-13 * L)
        j = np.where(node, j - 1, j) % mesh.num_cells
        x = np.where(node & (j == mesh.num_cells - 1) & (x < 0.5 * L), L, x)
    elif side == "right":
        top = np.isclose(x, L, rtol=0, atol=1e-13 * L)
        j = np.where(top, 0, j)
        x = np.where(top, 0.0, x)
    s = np.clip(mesh.to_reference(x, j), -1.0, 1.0)
    P = legendre_table(g.degree, s)
    vals = np.einsum("pk,kp->p", g.coeffs[j], P)
    return float(vals[0]) if not shape else vals.reshape(shape)


def l2_project(w: Callable, mesh: Mesh, degree: int, rule=None) -> DgFunction:
    """Cellwise L2 projection; c_{j,k} = (2k+1)/h_j * int_{I_j} w l_{j,k}.

    The default rule is exact to degree 4q; only smooth non-polynomial w
    incurs quadrature error.
    """
    if rule is None:
        rule = gauss_rule_for_degree(4 * degree)
    x = quad_points(mesh, rule)
    wx = np.asarray(w(x), dtype=float) * np.ones_like(x)
    P = legendre_table(degree, rule.points)  # (q+1, p)
    c = 0.5 * (wx * rule.weights) @ P.T
    c *= (2 * np.arange(degree + 1) + 1)[None, :]
    return DgFunction(mesh, c)


def quad_points(mesh: Mesh, rule) -> np.ndarray:
    """Physical quadrature points, shape (N, p)."""
    h = mesh.cell_sizes[:, None]
    return mesh.nodes[:-1, None] + 0.5 * h * (rule.points[None, :] + 1.0)


def integrate_cells(values: np.ndarray, mesh: Mesh, rule) -> np.ndarray:
    """Per-cell integrals of values sampled at quad_points(mesh, rule)."""
    return 0.5 * mesh.cell_sizes * (values @ rule.weights)


def mass_diagonal(mesh: Mesh, degree: int) -> np.ndarray:
    """Diagonal of the mass matrix, flat ordering j*(q+1)+k."""
    k = np.arange(degree + 1)
    return (mesh.cell_sizes[:, None] / (2 * k + 1)[None, :]).reshape(-1)


def inner(f: DgFunction, g: DgFunction) -> float:
    f.check_compatible(g)
    return float(np.dot(mass_diagonal(f.mesh, f.degree), f.flat * g.flat))


def norm_l2(g: DgFunction) -> float:
    return float(np.sqrt(inner(g, g)))


def norm_lm(g: DgFunction, m: int) -> float:
    if m not in (2, 4, 6):
        raise ValueError("only m in {2, 4, 6} is supported")
    rule = gauss_rule_for_degree(m * g.degree)
    vals = g.values_at(rule.points)
    return float(integrate_cells(vals**m, g.mesh, rule).sum() ** (1.0 / m))


def norm_linf(g: DgFunction) -> float:
    """Sampled max-norm: 10(q+1) equispaced points per cell plus endpoints."""
    s = np.linspace(-1.0, 1.0, 10 * (g.degree + 1) + 2)
    return float(np.max(np.abs(g.values_at(s))))


def _gradient_terms(g: DgFunction):
    rule = gauss_rule(g.degree + 1)
    h = g.mesh.cell_sizes
    d1 = legendre_deriv_table(g.degree, rule.points, 1)
    d2 = legendre_deriv_table(g.degree, rule.points, 2)
    gx = (g.coeffs @ d1) * (2.0 / h)[:, None]
    gxx = (g.coeffs @ d2) * (2.0 / h)[:, None] ** 2
    grad2 = integrate_cells(gx**2, g.mesh, rule).sum()
    hess2 = integrate_cells((h[:, None] * gxx) ** 2, g.mesh, rule).sum()
    jumps = (g.traces().jump ** 2 / g.mesh.face_h).sum()
    return grad2, hess2, jumps


def enorm(g: DgFunction) -> float:
    grad2, _, jumps = _gradient_terms(g)
    return float(np.sqrt(grad2 + jumps))


def denorm(g: DgFunction) -> float:
    grad2, hess2, jumps = _gradient_terms(g)
    return float(np.sqrt(grad2 + hess2 + jumps))


def norms(g: DgFunction) -> dict:
    return {
        "l2": norm_l2(g),
        "l4": norm_lm(g, 4),
        "l6": norm_lm(g, 6),
        "enorm": enorm(g),
        "denorm": denorm(g),
        "linf": norm_linf(g),
    }


def to_records(g: DgFunction) -> list[dict]:
    """Columnar dump: one record per (cell, degree index)."""
    return [
        {"cell": j, "k": k, "coeff": float(g.coeffs[j, k])}
        for j in range(g.mesh.num_cells)
        for k in range(g.degree + 1)
    ]


def from_records(mesh: Mesh, records) -> DgFunction:
    records = list(records)
    q = max(int(r["k"]) for r in records)
    c = np.zeros((mesh.num_cells, q + 1))
    for r in records:
        c[int(r["cell"]), int(r["k"])] = float(r["coeff"])
    return DgFunction(mesh, c)
