"""Monomial flux f(u) = alpha u^m and its divided difference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProblemSpec:
    m: int = 2
    alpha: float = 0.5

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"exponent m must be an integer >= 2, got {self.m!r}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    @classmethod
    def linear(cls) -> "ProblemSpec":
        return cls(2, 0.5)

    @classmethod
    def mkdv4(cls, alpha: float = 0.5) -> "ProblemSpec":
        return cls(4, alpha)

    @property
    def is_linear(self) -> bool:
        return self.m == 2

    def f(self, u):
        return self.alpha * np.asarray(u) ** self.m

    def fprime(self, u):
        return self.alpha * self.m * np.asarray(u) ** (self.m - 1)

    def fsecond(self, u):
        return self.alpha * self.m * (self.m - 1) * np.asarray(u) ** (self.m - 2)

    def quad_degree(self, q: int) -> int:
        """Exactness degree making every scheme integral exact (at least 4q)."""
        return max(4 * q, self.m * q)


def divided_difference(a, b, spec: ProblemSpec):
    """(f(a) - f(b)) / (a - b) in closed form: alpha * sum_i a^i b^(m-1-i)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = spec.m
    out = np.zeros(np.broadcast(a, b).shape)
    for i in range(m):
        out = out + a**i * b ** (m - 1 - i)
    out = spec.alpha * out
    return out if out.ndim else float(out)


def divided_difference_da(a, b, spec: ProblemSpec):
    """Partial derivative of the divided difference in its first argument."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = spec.m
    out = np.zeros(np.broadcast(a, b).shape)
    for i in range(1, m):
        out = out + i * a ** (i - 1) * b ** (m - 1 - i)
    out = spec.alpha * out
    return out if out.ndim else float(out)
