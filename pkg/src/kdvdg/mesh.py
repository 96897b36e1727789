"""Periodic 1D meshes with Legendre polynomials and Gauss-Legendre rules."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """Periodic partition ``0 = x_0 < ... < x_N = L``; node N is node 0."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("a periodic mesh needs at least two cells")
        if nodes[0] != 0.0:
            raise ValueError("mesh must start at x_0 = 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        h = np.diff(nodes)
        h.setflags(write=False)
        object.__setattr__(self, "cell_sizes", h)

    @property
    def num_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def domain_length(self) -> float:
        return float(self.nodes[-1])

    @property
    def periodic(self) -> bool:
        return True

    @property
    def face_h(self) -> np.ndarray:
        """Average cell size {h}_j at face j (face 0 wraps to cell N-1)."""
        h = self.cell_sizes
        return 0.5 * (np.roll(h, 1) + h)

    @property
    def is_uniform(self) -> bool:
        h = self.cell_sizes
        return bool(np.allclose(h, h[0], rtol=1e-12, atol=0.0))

    def same_as(self, other: "Mesh") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
        )

    def locate(self, x):
        """Cell index containing each x (points on a node go to the right cell)."""
        x = np.asarray(x, dtype=float)
        j = np.searchsorted(self.nodes, x, side="right") - 1
        return np.clip(j, 0, self.num_cells - 1)

    def to_reference(self, x, j):
        """Map physical x in cell j to s in [-1, 1]."""
        return 2.0 * (x - self.nodes[j]) / self.cell_sizes[j] - 1.0


def build_uniform_mesh(num_cells: int, domain_length: float) -> Mesh:
    if int(num_cells) != num_cells or num_cells < 2:
        raise ValueError(f"num_cells must be an integer >= 2, got {num_cells!r}")
    if not domain_length > 0.0:
        raise ValueError(f"domain_length must be positive, got {domain_length!r}")
    nodes = domain_length * np.arange(num_cells + 1) / num_cells
    nodes[-1] = domain_length
    return Mesh(nodes)


def legendre_eval(k: int, s):
    """Legendre polynomial P_k(s) by the three-term recurrence."""
    return legendre_table(k, s)[k]


def legendre_deriv(k: int, s):
    """P_k'(s), from (2n+1) P_n = P_{n+1}' - P_{n-1}'."""
    return legendre_deriv_table(k, s)[k]


def legendre_table(kmax: int, s) -> np.ndarray:
    """Values P_0..P_kmax at s, shape (kmax+1, *s.shape)."""
    if kmax < 0:
        raise ValueError("degree must be nonnegative")
    s = np.asarray(s, dtype=float)
    out = np.empty((kmax + 1,) + s.shape)
    out[0] = 1.0
    if kmax >= 1:
        out[1] = s
    for n in range(1, kmax):
        out[n + 1] = ((2 * n + 1) * s * out[n] - n * out[n - 1]) / (n + 1)
    return out


def legendre_deriv_table(kmax: int, s, order: int = 1) -> np.ndarray:
    """Derivatives of P_0..P_kmax of the given order at s."""
    s = np.asarray(s, dtype=float)
    vals = legendre_table(kmax, s)
    for _ in range(order):
        der = np.zeros_like(vals)
        # P_n' = sum over m = n-1, n-3, ... of (2m+1) P_m
        for n in range(1, kmax + 1):
            for m in range(n - 1, -1, -2):
                der[n] += (2 * m + 1) * vals[m]
        vals = der
    return vals


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    @property
    def num_points(self) -> int:
        return self.points.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=None)
def gauss_rule(num_points: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1] via Newton on P_n."""
    n = int(num_points)
    if n < 1:
        raise ValueError("need at least one quadrature point")
    i = np.arange(1, n + 1)
    # Chebyshev-like initial guesses, descending order
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(100):
        p = legendre_table(n, x)
        pn, pn1 = p[n], p[n - 1]
        dp = n * (x * pn - pn1) / (x * x - 1.0)
        dx = pn / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    p = legendre_table(n, x)
    dp = n * (x * p[n] - p[n - 1]) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # symmetrise to remove round-off asymmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w, 2 * n - 1)


def gauss_rule_for_degree(degree_target: int) -> QuadratureRule:
    """Smallest Gauss rule integrating polynomials of degree_target exactly."""
    if degree_target < 0:
        raise ValueError("degree_target must be nonnegative")
    return gauss_rule(max(1, -(-(degree_target + 1) // 2)))
