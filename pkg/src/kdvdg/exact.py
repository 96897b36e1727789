"""Closed-form benchmark solutions and errors of discrete solutions.

Jacobi elliptic functions are computed with the AGM / descending Landen
scheme; the second argument is the modulus k unless
``convention="parameter"`` (then it is m = k^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .mesh import gauss_rule_for_degree, legendre_deriv_table
from .problem import ProblemSpec
from .space import DgFunction, integrate_cells, quad_points

STRETCHED_LENGTH = 41.24947381357075926189


class PeriodicityError(ValueError):
    def __init__(self, message, period):
        super().__init__(message)
        self.period = period


def _modulus(modulus_param: float, convention: str) -> float:
    if convention not in ("modulus", "parameter"):
        raise ValueError(f"convention must be 'modulus' or 'parameter', got {convention!r}")
    if not 0.0 <= modulus_param < 1.0:
        raise ValueError(f"modulus/parameter must lie in [0, 1), got {modulus_param!r}")
    return math.sqrt(modulus_param) if convention == "parameter" else float(modulus_param)


def agm_sequence(k: float, tol: float = 1e-16):
    """Descending AGM from (1, sqrt(1 - k^2)); returns the a_n and c_n lists."""
    a, b, c = [1.0], math.sqrt(1.0 - k * k), [k]
    while abs(c[-1]) > tol * a[-1]:
        an, bn = a[-1], b
        a.append(0.5 * (an + bn))
        c.append(0.5 * (an - bn))
        b = math.sqrt(an * bn)
        if len(a) > 64:
            raise RuntimeError("AGM failed to converge")
    return a, c


def complete_K(modulus_param: float, convention: str = "modulus") -> float:
    """Complete elliptic integral of the first kind, pi / (2 AGM(1, k'))."""
    k = _modulus(modulus_param, convention)
    a, _ = agm_sequence(k)
    return math.pi / (2.0 * a[-1])


def jacobi_sncndn(x, modulus_param: float, convention: str = "modulus"):
    """sn, cn, dn by backward recurrence of Landen amplitudes."""
    k = _modulus(modulus_param, convention)
    x = np.asarray(x, dtype=float)
    a, c = agm_sequence(k)
    n = len(a) - 1
    phi = 2.0**n * a[-1] * x
    for i in range(n, 0, -1):
        phi = 0.5 * (phi + np.arcsin(c[i] / a[i] * np.sin(phi)))
    sn = np.sin(phi)
    cn = np.cos(phi)
    dn = np.sqrt(1.0 - (k * sn) ** 2)
    return sn, cn, dn


def jacobi_sn(x, modulus_param: float, convention: str = "modulus"):
    return jacobi_sncndn(x, modulus_param, convention)[0]


@dataclass(frozen=True)
class ExactSolution:
    family: str
    params: dict
    spec: ProblemSpec
    u: Callable
    ux: Callable
    uxx: Callable
    period: float | None
    domain_length: float | None = None
    tag: str = ""
    notes: dict = field(default_factory=dict)
    length_scale: float = 1.0
    speed: float = 1.0

    def __call__(self, x, t=0.0):
        return self.u(x, t)

    def initial(self) -> Callable:
        return lambda x: self.u(x, 0.0)

    def residual(self, x, t, delta_x: float | None = None, delta_t: float | None = None):
        """u_t - f'(u)_x + u_xxx by eighth-order central differences.

        Default steps are 0.03 length scales in x and the matching travel
        time in t, which balances truncation against round-off in the
        third-derivative stencil.
        """
        delta_x = delta_x or FD_STEP * self.length_scale
        delta_t = delta_t or delta_x / abs(self.speed)
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        ut = sum(w * self.u(x, t + i * delta_t) for i, w in _D1) / delta_t
        fx = sum(w * self.spec.fprime(self.u(x + i * delta_x, t)) for i, w in _D1) / delta_x
        uxxx = sum(w * self.u(x + i * delta_x, t) for i, w in _D3) / delta_x**3
        return ut - fx + uxxx

    def certify(self, samples: int = 100, seed: int = 0, t_max: float = 10.0) -> float:
        """Max finite-difference PDE residual at random (x, t)."""
        rng = np.random.default_rng(seed)
        span = self.domain_length or self.period or 1.0
        x = rng.uniform(0.0, span, samples)
        t = rng.uniform(0.0, t_max, samples)
        return float(np.max(np.abs(self.residual(x, t))))

    def periodicity_defect(self, times=(0.0, 0.7, 3.1)) -> float:
        if not self.domain_length:
            return float("inf")
        L = self.domain_length
        return float(max(abs(self.u(0.0, t) - self.u(L, t)) for t in times))


FD_STEP = 0.03


def _weights(pairs):
    return [(i, float(Fraction(w))) for i, w in pairs if w != "0"]


_D1 = _weights(zip(range(-4, 5), ["1/280", "-4/105", "1/5", "-4/5", "0", "4/5", "-1/5", "4/105", "-1/280"]))
_D3 = _weights(
    zip(
        range(-5, 6),
        ["41/6048", "-1261/15120", "541/1120", "-4369/2520", "1669/720", "0",
         "-1669/720", "4369/2520", "-541/1120", "1261/15120", "-41/6048"],
    )
)


def linear_solution(l: int, C1: float, C2: float, L: float) -> ExactSolution:
    """C1 sin(xi) + C2 cos(xi), xi = c (x + (1 + c^2) t), c = 2 pi l / L."""
    if l == 0:
        raise ValueError("wave number l must be nonzero")
    c = 2.0 * math.pi * l / L

    def xi(x, t):
        return c * (np.asarray(x, dtype=float) + (1.0 + c * c) * np.asarray(t, dtype=float))

    return ExactSolution(
        family="linear_sinusoid",
        params={"l": l, "C1": C1, "C2": C2, "c": c},
        spec=ProblemSpec.linear(),
        u=lambda x, t=0.0: C1 * np.sin(xi(x, t)) + C2 * np.cos(xi(x, t)),
        ux=lambda x, t=0.0: c * (C1 * np.cos(xi(x, t)) - C2 * np.sin(xi(x, t))),
        uxx=lambda x, t=0.0: -c * c * (C1 * np.sin(xi(x, t)) + C2 * np.cos(xi(x, t))),
        period=L / abs(l),
        domain_length=L,
        length_scale=1.0 / abs(c),
        speed=1.0 + c * c,
    )


def mkdv4_solution(k: float, convention: str = "modulus", L: float | None = None, periods: int = 4,
                   alpha: float = 0.5, tag: str = "") -> ExactSolution:
    """k sn(x + (k^2 + 1) t, k) for f(u) = alpha u^4.

    Exact only for alpha = 1/2 in the modulus convention; other settings
    are kept for the stretched-domain configuration and fail the
    residual certificate.
    """
    kmod = _modulus(k, convention)
    period = 4.0 * complete_K(kmod)
    if L is None:
        L = periods * period
    ratio = L / period
    if abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio) or round(ratio) < 1:
        raise PeriodicityError(
            f"domain length {L!r} is not a multiple of the period {period!r}", period
        )
    amp = float(k)
    speed = 1.0 + k * k

    def z(x, t):
        return np.asarray(x, dtype=float) + speed * np.asarray(t, dtype=float)

    def u(x, t=0.0):
        return amp * jacobi_sn(z(x, t), kmod)

    def ux(x, t=0.0):
        _, cn, dn = jacobi_sncndn(z(x, t), kmod)
        return amp * cn * dn

    def uxx(x, t=0.0):
        sn = jacobi_sn(z(x, t), kmod)
        return amp * (-(1.0 + kmod**2) * sn + 2.0 * kmod**2 * sn**3)

    return ExactSolution(
        family="mkdv4_sn",
        params={"k": k, "convention": convention, "modulus": kmod, "alpha": alpha},
        spec=ProblemSpec(4, alpha),
        u=u, ux=ux, uxx=uxx,
        period=period,
        domain_length=L,
        tag=tag,
        speed=speed,
    )


def stretched_sn(k: float = 0.9) -> ExactSolution:
    """sn benchmark in the stretched-domain reading: k taken as the
    parameter, L = 16 K(k | parameter), f = u^4 / 4. Periodic, but the
    formula is not an exact solution under this reading."""
    return mkdv4_solution(k, "parameter", L=STRETCHED_LENGTH, alpha=0.25, tag="paper-literal")


def kink_solution(c: float, sign: int = 1) -> ExactSolution:
    """+-(3c)^{1/2} tanh((2c)^{1/2}/2 (x + c t)); not periodic.

    Substitution shows this amplitude balances f(u) = u^4 / 12.
    """
    if c <= 0:
        raise ValueError("kink speed c must be positive")
    amp = sign * math.sqrt(3.0 * c)
    beta = math.sqrt(2.0 * c) / 2.0

    def T(x, t):
        return np.tanh(beta * (np.asarray(x, dtype=float) + c * np.asarray(t, dtype=float)))

    return ExactSolution(
        family="quartic_kink",
        params={"c": c, "sign": sign},
        spec=ProblemSpec(4, 1.0 / 12.0),
        u=lambda x, t=0.0: amp * T(x, t),
        ux=lambda x, t=0.0: amp * beta * (1 - T(x, t) ** 2),
        uxx=lambda x, t=0.0: -2 * amp * beta**2 * T(x, t) * (1 - T(x, t) ** 2),
        period=None,
        length_scale=1.0 / beta,
        speed=c,
    )


def error_vs_exact(U: DgFunction, exact: ExactSolution, t: float) -> dict:
    """Broken-norm errors of u(., t) - U; jump terms come from U only."""
    q = U.degree
    mesh = U.mesh
    rule = gauss_rule_for_degree(4 * q + 4)
    x = quad_points(mesh, rule)
    h = mesh.cell_sizes[:, None]
    e = exact.u(x, t) - U.values_at(rule.points)
    ex = exact.ux(x, t) - (U.coeffs @ legendre_deriv_table(q, rule.points, 1)) * (2.0 / h)
    l2 = math.sqrt(integrate_cells(e**2, mesh, rule).sum())
    l4 = integrate_cells(e**4, mesh, rule).sum() ** 0.25
    grad2 = integrate_cells(ex**2, mesh, rule).sum()
    jumps = float((U.traces().jump ** 2 / mesh.face_h).sum())
    return {"l2": l2, "l4": float(l4), "enorm": math.sqrt(grad2 + jumps)}
