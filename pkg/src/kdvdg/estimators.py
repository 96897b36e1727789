"""Invariant functionals and residual error estimation.

The estimator eta is evaluated per step; the accumulated computable bounds
are built from its history.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.special

from .mesh import Mesh, gauss_rule, gauss_rule_for_degree, legendre_deriv_table
from .operators import OperatorSet
from .problem import ProblemSpec
from .projections import conforming_split, reconstruct_D
from .space import DgFunction, denorm, integrate_cells, norm_l2, quad_points


@dataclass(frozen=True)
class InvariantRecord:
    mass: float
    momentum: float
    energy: float
    higher: float = float("nan")
    t: float = float("nan")


def invariants(U: DgFunction, ops: OperatorSet, spec: ProblemSpec, t: float = float("nan"),
               higher: bool = False) -> InvariantRecord:
    """Mass, momentum and discrete energy 1/2 a_h(U,U) + int f(U).

    With ``higher=True`` also the broken surrogate of
    int 2 u_xx^2 + 10 u^2 u_x^2 + u^6.
    """
    ops.check(U)
    h = ops.mesh.cell_sizes
    mass = float(U.coeffs[:, 0] @ h)
    momentum = 0.5 * float(np.dot(ops.mass, U.flat**2))
    rule = gauss_rule_for_degree(spec.quad_degree(U.degree))
    fvals = spec.f(U.values_at(rule.points))
    energy = 0.5 * float(U.flat @ (ops.A @ U.flat)) + float(integrate_cells(fvals, U.mesh, rule).sum())
    hi = float("nan")
    if higher:
        hi = higher_invariant(U)
    return InvariantRecord(mass, momentum, energy, hi, t)


def higher_invariant(U: DgFunction) -> float:
    q = U.degree
    rule = gauss_rule_for_degree(6 * q)
    h = U.mesh.cell_sizes[:, None]
    u = U.values_at(rule.points)
    ux = (U.coeffs @ legendre_deriv_table(q, rule.points, 1)) * (2.0 / h)
    uxx = (U.coeffs @ legendre_deriv_table(q, rule.points, 2)) * (2.0 / h) ** 2
    vals = 2 * uxx**2 + 10 * u**2 * ux**2 + u**6
    return float(integrate_cells(vals, U.mesh, rule).sum())


@dataclass
class EstimatorReport:
    """Residual estimator split into its contributions.

    ``volume`` is per cell; the three jump terms are per face.
    """

    volume: np.ndarray
    jump_ux: np.ndarray
    jump_u: np.ndarray
    jump_v: np.ndarray

    @property
    def parts(self) -> dict:
        return {
            "eta_volume": float(self.volume.sum()),
            "eta_jumpUx": float(self.jump_ux.sum()),
            "eta_jumpU": float(self.jump_u.sum()),
            "eta_jumpV": float(self.jump_v.sum()),
        }

    @property
    def total(self) -> float:
        """eta^2."""
        return float(sum(self.parts.values()))

    @property
    def eta(self) -> float:
        return math.sqrt(self.total)


def _cell_residual(U: DgFunction, V: DgFunction, spec: ProblemSpec, rule) -> np.ndarray:
    """g + U_xx - f'(U) at quadrature points with g = -D(V)."""
    q = U.degree
    h = U.mesh.cell_sizes[:, None]
    DV = reconstruct_D(V)
    uxx = (U.coeffs @ legendre_deriv_table(q, rule.points, 2)) * (2.0 / h) ** 2
    return -DV.values_at(rule.points) + uxx - spec.fprime(U.values_at(rule.points))


def _residual_rule(q: int, spec: ProblemSpec):
    return gauss_rule_for_degree(max(2 * (q + 1), 2 * (spec.m - 1) * q))


def _face_terms(U: DgFunction, V: DgFunction, sigma: float):
    mesh = U.mesh
    hf = mesh.face_h
    jux = U.derivative().traces().jump
    ju = U.traces().jump
    jv = V.traces().jump
    return hf * jux**2, sigma / hf * ju**2, hf * jv**2


def eta(U: DgFunction, V: DgFunction, ops: OperatorSet, spec: ProblemSpec) -> EstimatorReport:
    """Residual estimator for the elliptic reconstruction of U."""
    ops.check(U, V)
    rule = _residual_rule(U.degree, spec)
    res = _cell_residual(U, V, spec, rule)
    h = ops.mesh.cell_sizes
    volume = integrate_cells((h[:, None] * res) ** 2, ops.mesh, rule)
    return EstimatorReport(volume, *_face_terms(U, V, ops.sigma))


def eta_rate(U0: DgFunction, U1: DgFunction, V0: DgFunction, V1: DgFunction, tau: float,
             ops: OperatorSet, spec: ProblemSpec) -> EstimatorReport:
    """Estimator applied to the time derivative, via difference quotients
    of the cell residuals and of the face jumps over one step."""
    ops.check(U0, U1, V0, V1)
    rule = _residual_rule(U0.degree, spec)
    h = ops.mesh.cell_sizes
    dres = (_cell_residual(U1, V1, spec, rule) - _cell_residual(U0, V0, spec, rule)) / tau
    volume = integrate_cells((h[:, None] * dres) ** 2, ops.mesh, rule)
    Ut = (U1 - U0) * (1.0 / tau)
    Vt = (V1 - V0) * (1.0 / tau)
    return EstimatorReport(volume, *_face_terms(Ut, Vt, ops.sigma))


def nonconforming_term(Ut: DgFunction, ops: OperatorSet) -> float:
    """denorm(U_t^d)^2 for the discontinuous part of the orthogonal split."""
    _, Ud = conforming_split(Ut, ops)
    return denorm(Ud) ** 2


def C4_rate_constant(C4: float) -> float:
    """Gronwall rate max(1/2 + 15/2 C4, 3/4 + 9/4 C4)."""
    return max(0.5 + 7.5 * C4, 0.75 + 2.25 * C4)


def accumulate_bound_linear(times, eta_sq, eta_rate_sq, noncon_sq, ca2cb2: float = 1.0):
    """Computable bound for f = u^2/2 at each recorded time.

    ``eta_rate_sq[n]`` and ``noncon_sq[n]`` belong to the interval
    (t_{n-1}, t_n] (entry 0 is ignored); the time integral treats them as
    piecewise constant. F_1(rho(0)) is bounded by eta(U^0)^2.
    """
    times, eta_sq, integral = _accumulate(times, eta_sq, eta_rate_sq, noncon_sq, ca2cb2)
    return eta_sq + 2.0 * np.exp(times) * (eta_sq[0] + integral)


def accumulate_bound_m4(times, eta_sq, eta_rate_sq, noncon_sq, C4, ca2cb2: float = 1.0):
    """Computable bound for f = u^4/4; ``C4`` may be a scalar or per-time array
    (the running maximum is used so the growth rate never decreases)."""
    times, eta_sq, integral = _accumulate(times, eta_sq, eta_rate_sq, noncon_sq, ca2cb2)
    C4 = np.maximum.accumulate(np.broadcast_to(np.asarray(C4, dtype=float), times.shape))
    rate = np.array([C4_rate_constant(c) for c in C4])
    return 2.0 * eta_sq + 8.0 * np.exp(rate * times) * (eta_sq[0] + integral)


def _accumulate(times, eta_sq, eta_rate_sq, noncon_sq, ca2cb2):
    times = np.asarray(times, dtype=float)
    eta_sq = np.asarray(eta_sq, dtype=float)
    dt = np.diff(times, prepend=times[0])
    integrand = 2.0 * np.asarray(eta_rate_sq, dtype=float) + 2.0 * ca2cb2 * np.asarray(noncon_sq, dtype=float)
    integrand = np.where(np.arange(times.size) == 0, 0.0, integrand)
    return times, eta_sq, np.cumsum(dt * integrand)


def hminus1_norm(g: DgFunction, num_modes: int | None = None) -> float:
    """Spectral H^{-1} norm with weight 1 / (1 + (2 pi k / L)^2).

    Fourier coefficients are exact: int_{-1}^{1} P_n(s) e^{-i w s} ds =
    2 (-i)^n j_n(w).
    """
    mesh = g.mesh
    L = mesh.domain_length
    K = 4 * mesh.num_cells if num_modes is None else int(num_modes)
    k = np.arange(K + 1)
    kappa = 2 * np.pi * k / L
    h = mesh.cell_sizes
    mid = mesh.nodes[:-1] + 0.5 * h
    omega = 0.5 * h[:, None] * kappa[None, :]  # (N, K+1)
    n = np.arange(g.degree + 1)
    jn = scipy.special.spherical_jn(n[:, None, None], omega[None, :, :])  # (q+1, N, K+1)
    factor = 2.0 * (-1j) ** n
    cell = np.einsum("jn,n,njk->jk", g.coeffs, factor, jn)
    ghat = (0.5 * h[:, None] * np.exp(-1j * np.outer(mid, kappa)) * cell).sum(axis=0) / L
    weight = 1.0 / (1.0 + kappa**2)
    mult = np.where(k == 0, 1.0, 2.0)  # conjugate symmetry of real g
    return float(math.sqrt(L * np.sum(mult * weight * np.abs(ghat) ** 2)))


@dataclass
class InitialDataNorms:
    uxx2: float
    uux2: float
    u6: float
    ux2: float
    u4: float

    @property
    def second_order(self) -> float:
        return math.sqrt(self.uxx2 + 5.0 * self.uux2 + 0.5 * self.u6)

    @property
    def first_order(self) -> float:
        return math.sqrt(self.ux2 + self.u4)


def _fd_derivative(f, order):
    d = 1e-3

    def first(x):
        x = np.asarray(x, dtype=float)
        c = [1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280]
        return sum(ci * f(x + (i - 4) * d) for i, ci in enumerate(c)) / d

    def second(x):
        x = np.asarray(x, dtype=float)
        c = [-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560]
        return sum(ci * f(x + (i - 4) * d) for i, ci in enumerate(c)) / d**2

    return first if order == 1 else second


def initial_data_norms(u0: Callable, L: float, u0_x: Callable | None = None,
                       u0_xx: Callable | None = None, num_cells: int = 512) -> InitialDataNorms:
    """Norms of u0 entering C4, by composite 24-point Gauss quadrature."""
    u0_x = u0_x or _fd_derivative(u0, 1)
    u0_xx = u0_xx or _fd_derivative(u0, 2)
    rule = gauss_rule(24)
    fine = Mesh(L * np.arange(num_cells + 1) / num_cells)
    x = quad_points(fine, rule)
    u, ux, uxx = (np.asarray(fn(x), dtype=float) * np.ones_like(x) for fn in (u0, u0_x, u0_xx))

    def integ(v):
        return float(integrate_cells(v, fine, rule).sum())

    return InitialDataNorms(
        uxx2=integ(uxx**2), uux2=integ((u * ux) ** 2), u6=integ(u**6), ux2=integ(ux**2), u4=integ(u**4)
    )


def compute_C4(u0_norms: InitialDataNorms, DV: DgFunction, creg: float = 1.0) -> float:
    """C_reg (|D(V)|_{H^-1} * A_2 + |D(V)|_{L2} * A_1) with A_2, A_1 the
    second- and first-order initial data norms."""
    return creg * (hminus1_norm(DV) * u0_norms.second_order + norm_l2(DV) * u0_norms.first_order)


@dataclass
class EstimatorTracker:
    """Per-step callback accumulating estimator contributions along a run.

    The estimator uses the semi-discrete auxiliary variable of each U^n so
    that U and V belong to the same time level.

    Time derivatives are replaced by difference quotients. With
    ``quotient="centred"`` (default) the quotient at t_{n-1} is
    (U^n - U^{n-2}) / (t_n - t_{n-2}); the value at t_0 uses one backward
    step of the scheme. It is known one step late, so the integrand on
    (t_{n-1}, t_n] is taken at the left end. ``quotient="backward"`` uses
    (U^n - U^{n-1}) / tau_n on (t_{n-1}, t_n]. The midpoint rule maps stiff
    modes to amplification factors near -1, and the backward quotient picks
    that sign alternation up at size O(1 / tau).
    """

    ops: OperatorSet
    spec: ProblemSpec
    ca2cb2: float = 1.0
    kind: str = "linear"
    u0_norms: InitialDataNorms | None = None
    creg: float = 1.0
    quotient: str = "centred"
    newton_tol: float = 1e-12
    times: list = field(default_factory=list)
    eta_sq: list = field(default_factory=list)
    eta_rate_sq: list = field(default_factory=list)
    noncon_sq: list = field(default_factory=list)
    C4: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    _hist: list = field(default_factory=list)

    def __post_init__(self):
        from .stepper import Discretisation

        if self.kind not in ("linear", "m4"):
            raise ValueError(f"unknown bound kind {self.kind!r}")
        if self.quotient not in ("centred", "backward"):
            raise ValueError(f"unknown difference quotient {self.quotient!r}")
        if self.kind == "m4" and self.u0_norms is None:
            raise ValueError("the m=4 bound needs initial data norms for C4")
        self._disc = Discretisation(self.ops, self.spec)

    def _rate_terms(self, a, b):
        (t0, U0, V0), (t1, U1, V1) = a, b
        dt = t1 - t0
        rate = eta_rate(U0, U1, V0, V1, dt, self.ops, self.spec).total
        noncon = nonconforming_term((U1 - U0) * (1.0 / dt), self.ops)
        return rate, noncon

    def _backward_state(self):
        from .stepper import auxiliary_variable, step

        (t0, U0, _), (t1, _, _) = self._hist[0], self._hist[1]
        Um = step(U0, -(t1 - t0), self.ops, self.spec, self.newton_tol, disc=self._disc).U
        return (2 * t0 - t1, Um, auxiliary_variable(Um, self.ops, self.spec, self._disc))

    def __call__(self, index, t, U, V):
        from .stepper import auxiliary_variable

        Vs = auxiliary_variable(U, self.ops, self.spec, self._disc)
        rep = eta(U, Vs, self.ops, self.spec)
        self._hist.append((t, U, Vs))
        rate, noncon = 0.0, 0.0
        if len(self._hist) >= 2:
            if self.quotient == "backward":
                rate, noncon = self._rate_terms(self._hist[-2], self._hist[-1])
            else:
                before = self._hist[-3] if len(self._hist) >= 3 else self._backward_state()
                rate, noncon = self._rate_terms(before, self._hist[-1])
            self._hist = self._hist[-2:]
        self.times.append(t)
        self.eta_sq.append(rep.total)
        self.eta_rate_sq.append(rate)
        self.noncon_sq.append(noncon)
        self.reports.append(rep)
        if self.kind == "m4":
            self.C4.append(compute_C4(self.u0_norms, reconstruct_D(Vs), self.creg))
        H = self.bound()[-1]
        out = {"eta_total": rep.total, **rep.parts, "noncon": noncon, "eta_rate": rate, "H": H}
        if self.kind == "m4":
            out["C4"] = self.C4[-1]
        return out

    def bound(self) -> np.ndarray:
        if self.kind == "linear":
            return accumulate_bound_linear(self.times, self.eta_sq, self.eta_rate_sq, self.noncon_sq, self.ca2cb2)
        return accumulate_bound_m4(self.times, self.eta_sq, self.eta_rate_sq, self.noncon_sq, self.C4, self.ca2cb2)
