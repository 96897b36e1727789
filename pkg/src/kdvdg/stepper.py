"""Energy-conserving fully discrete scheme and its run loop.

One step solves, for U = U^{n+1},

    M (U - U^n) / tau + G V = 0
    M V + N(U, U^n) + A (U + U^n) / 2 = 0

where N is the divided-difference flux tested against the basis. V enters
linearly, so each Newton correction is solved with V eliminated (a system
in U alone); V is still carried as an iterate so that both equations are
driven to round-off.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import gauss_rule_for_degree, legendre_table
from .operators import OperatorSet
from .problem import ProblemSpec, divided_difference, divided_difference_da
from .space import DgFunction, l2_project

log = logging.getLogger(__name__)


class NewtonDivergence(RuntimeError):
    def __init__(self, message, residual=float("nan"), step_index=None):
        super().__init__(message)
        self.residual = residual
        self.step_index = step_index


@dataclass
class StepRecord:
    index: int
    t: float
    U: DgFunction
    V: DgFunction
    newton_iters: int = 0
    residual_norm: float = 0.0
    mass: float = float("nan")
    momentum: float = float("nan")
    energy: float = float("nan")
    diagnostics: dict = field(default_factory=dict)


class Discretisation:
    """Quadrature tables and cached factorizations for (ops, spec)."""

    def __init__(self, ops: OperatorSet, spec: ProblemSpec):
        self.ops = ops
        self.spec = spec
        q = ops.degree
        self.rule = gauss_rule_for_degree(spec.quad_degree(q))
        self.P = legendre_table(q, self.rule.points)  # (q+1, p)
        self._wP = self.P * self.rule.weights  # weighted basis
        self._half_h = 0.5 * ops.mesh.cell_sizes
        self._cache = {}

    def at_points(self, W: DgFunction) -> np.ndarray:
        return W.coeffs @ self.P

    def test(self, vals: np.ndarray) -> np.ndarray:
        """Flat vector of int g Psi_l over cells, for g sampled at points."""
        return ((vals @ self._wP.T) * self._half_h[:, None]).reshape(-1)

    def test_matrix(self, vals: np.ndarray) -> sp.csr_matrix:
        """Block-diagonal matrix of int g P_k P_l."""
        blocks = np.einsum("jp,kp,lp->jkl", vals, self._wP, self.P) * self._half_h[:, None, None]
        return sp.block_diag(list(blocks), format="csr")

    def flux_integral(self, U: DgFunction) -> float:
        vals = self.spec.f(self.at_points(U))
        return float(((vals @ self.rule.weights) * self._half_h).sum())

    def eliminated_v(self, X: np.ndarray, Un: np.ndarray) -> np.ndarray:
        """V solving the second equation exactly for the given U^{n+1}."""
        q = self.ops.degree
        Xp = X.reshape(-1, q + 1) @ self.P
        Up = Un.reshape(-1, q + 1) @ self.P
        nl = self.test(divided_difference(Xp, Up, self.spec))
        return -(nl + 0.5 * (self.ops.A @ (X + Un))) / self.ops.mass

    def test_abs(self, vals: np.ndarray) -> np.ndarray:
        """Like ``test`` with |Psi_l|; bounds |int g Psi_l| for g >= 0."""
        return ((vals @ (np.abs(self.P) * self.rule.weights).T) * self._half_h[:, None]).reshape(-1)

    def residuals(self, X: np.ndarray, V: np.ndarray, Un: np.ndarray, tau: float):
        """Scaled residuals of both equations and their round-off levels.

        r1 = (X - U^n) + tau G_h(V) and r2 = V + M^{-1}(N + A (X + U^n)/2).
        Each floor is eps times the norm of the residual evaluated with
        absolute values throughout; the r2 floor also carries the effect of
        rounding X itself, which the flux Jacobian can amplify strongly.
        """
        ops = self.ops
        q = ops.degree
        if "absG" not in self._cache:
            self._cache["absG"] = abs(ops.G)
            self._cache["absA"] = abs(ops.A)
        absG, absA = self._cache["absG"], self._cache["absA"]
        Xp = X.reshape(-1, q + 1) @ self.P
        Up = Un.reshape(-1, q + 1) @ self.P
        dd = divided_difference(Xp, Up, self.spec)
        nl = self.test(dd)
        r1 = (X - Un) + tau * (ops.G @ V) / ops.mass
        r2 = V + (nl + 0.5 * (ops.A @ (X + Un))) / ops.mass
        eps = np.finfo(float).eps
        s1 = np.abs(X) + np.abs(Un) + abs(tau) * (absG @ np.abs(V)) / ops.mass
        Xabs = np.abs(X.reshape(-1, q + 1)) @ np.abs(self.P)
        sens = np.abs(divided_difference_da(Xp, Up, self.spec)) * Xabs
        s2 = np.abs(V) + (self.test_abs(np.abs(dd) + sens) + 0.5 * (absA @ (np.abs(X) + np.abs(Un)))) / ops.mass
        return r1, r2, eps * self.norm(s1), eps * self.norm(s2)

    def nonlinear_jacobian(self, X: np.ndarray, Un: np.ndarray) -> sp.csr_matrix:
        q = self.ops.degree
        Xp = X.reshape(-1, q + 1) @ self.P
        Up = Un.reshape(-1, q + 1) @ self.P
        return self.test_matrix(divided_difference_da(Xp, Up, self.spec))

    def jacobian(self, X: np.ndarray, Un: np.ndarray, tau: float, JN=None):
        """Jacobian of r1 after eliminating V (V enters linearly)."""
        ops = self.ops
        Minv = sp.diags(1.0 / ops.mass)
        if JN is None:
            JN = self.nonlinear_jacobian(X, Un)
        J = sp.identity(ops.ndof) - tau * (Minv @ ops.G @ Minv @ (JN + 0.5 * ops.A))
        return J.tocsc()

    def linear_solver(self, tau: float):
        """Cached factorization of the constant Jacobian for m = 2."""
        key = float(tau)
        if key not in self._cache:
            Z = np.zeros(self.ops.ndof)
            self._cache[key] = spla.splu(self.jacobian(Z, Z, tau))
        return self._cache[key]

    def norm(self, vec: np.ndarray) -> float:
        return float(np.sqrt(np.dot(self.ops.mass, vec * vec)))


def auxiliary_variable(U: DgFunction, ops: OperatorSet, spec: ProblemSpec, disc=None) -> DgFunction:
    """V with int V Psi = -int f'(U) Psi - a_h(U, Psi) for all Psi."""
    disc = disc or Discretisation(ops, spec)
    ops.check(U)
    nl = disc.test(spec.fprime(disc.at_points(U)))
    return DgFunction.from_flat(ops.mesh, ops.degree, -(nl + ops.A @ U.flat) / ops.mass)


def step(
    U_n: DgFunction,
    tau: float,
    ops: OperatorSet,
    spec: ProblemSpec,
    newton_tol: float = 1e-12,
    max_iters: int = 50,
    disc: Discretisation | None = None,
    t: float = 0.0,
    index: int = 0,
) -> StepRecord:
    """Advance one step; tau may be negative (used for reversibility checks).

    V is carried as a Newton iterate while each linear solve uses the
    Jacobian with V eliminated. Newton stops once both scaled equation
    residuals, in L2, are below ``newton_tol`` or below the round-off level
    of their own evaluation, whichever is larger. ``residual_norm`` is
    hypot(|r1|, tau |r2|).
    """
    if tau == 0.0 or not math.isfinite(tau):
        raise ValueError(f"time step must be nonzero and finite, got {tau!r}")
    if not newton_tol > 0.0:
        raise ValueError("newton_tol must be positive")
    ops.check(U_n)
    disc = disc or Discretisation(ops, spec)
    Un = U_n.flat.copy()
    X = Un.copy()
    V = disc.eliminated_v(X, Un)
    Minv = 1.0 / ops.mass

    def measure(X, V):
        r1, r2, f1, f2 = disc.residuals(X, V, Un, tau)
        n1, n2 = disc.norm(r1), disc.norm(r2)
        done = n1 <= max(newton_tol, f1) and abs(tau) * n2 <= max(newton_tol, abs(tau) * f2)
        return r1, r2, math.hypot(n1, tau * n2), done

    r1, r2, res, done = measure(X, V)
    iters = 0
    while not done:
        if iters >= max_iters:
            raise NewtonDivergence(
                f"Newton did not converge in {max_iters} iterations (residual {res:.3e})", res, index
            )
        rhs = -r1 + tau * Minv * (ops.G @ r2)
        if spec.is_linear:
            dX = disc.linear_solver(tau).solve(rhs)
            JdX = 0.5 * (ops.A @ dX) + spec.alpha * disc.test(dX.reshape(-1, ops.degree + 1) @ disc.P)
        else:
            JN = disc.nonlinear_jacobian(X, Un)
            dX = spla.spsolve(disc.jacobian(X, Un, tau, JN), rhs)
            JdX = JN @ dX + 0.5 * (ops.A @ dX)
        dV = -r2 - Minv * JdX
        iters += 1
        lam = 1.0
        for trial in range(6):
            Xt, Vt = X + lam * dX, V + lam * dV
            r1t, r2t, rest, donet = measure(Xt, Vt)
            if rest < res or donet:
                break
            if trial == 5:
                raise NewtonDivergence(
                    f"residual increased for 5 consecutive damped trials (residual {res:.3e})",
                    res,
                    index,
                )
            lam *= 0.5
        X, V, r1, r2, res, done = Xt, Vt, r1t, r2t, rest, donet
    q = ops.degree
    return StepRecord(
        index=index + 1,
        t=t + tau,
        U=DgFunction.from_flat(ops.mesh, q, X),
        V=DgFunction.from_flat(ops.mesh, q, V),
        newton_iters=iters,
        residual_norm=res,
    )


Callback = Callable[[int, float, DgFunction, DgFunction], dict]


def run(
    u0: Callable | DgFunction,
    T: float,
    tau: float,
    ops: OperatorSet,
    spec: ProblemSpec,
    callbacks: Iterable[Callback] = (),
    newton_tol: float = 1e-12,
    max_iters: int = 50,
    on_record: Callable[[StepRecord], None] | None = None,
) -> list[StepRecord]:
    """Integrate from U^0 = L2 projection of u0 (or u0 itself when it is
    already a DgFunction) up to T.

    The step is shrunk to T / ceil(T / tau) so all steps are equal and the
    last one lands on T. Each callback receives
    (step index, t, U, V) and may return a dict merged into the record's
    diagnostics. The step-0 V is the semi-discrete auxiliary variable.
    ``on_record`` sees every finished record as soon as it exists, so
    output can be streamed before a later step fails.
    """
    from .estimators import invariants

    if not T >= 0.0:
        raise ValueError("final time must be nonnegative")
    if not tau > 0.0:
        raise ValueError("time step must be positive")
    callbacks = list(callbacks)
    disc = Discretisation(ops, spec)
    if isinstance(u0, DgFunction):
        ops.check(u0)
        U = u0
    else:
        U = l2_project(u0, ops.mesh, ops.degree)
    rec = StepRecord(0, 0.0, U, auxiliary_variable(U, ops, spec, disc))
    records = [_finish(rec, ops, spec, callbacks, invariants)]
    if on_record:
        on_record(records[-1])
    nsteps = max(1, math.ceil(T / tau - 1e-9)) if T > 0 else 0
    dt = T / nsteps if nsteps else tau
    for n in range(nsteps):
        t = records[-1].t
        try:
            rec = step(records[-1].U, dt, ops, spec, newton_tol, max_iters, disc, t, n)
        except NewtonDivergence as exc:
            exc.step_index = n + 1
            raise
        rec.t = T if n == nsteps - 1 else (n + 1) * dt
        records.append(_finish(rec, ops, spec, callbacks, invariants))
        if on_record:
            on_record(records[-1])
    return records


def _finish(rec, ops, spec, callbacks, invariants):
    inv = invariants(rec.U, ops, spec)
    rec.mass, rec.momentum, rec.energy = inv.mass, inv.momentum, inv.energy
    for cb in callbacks:
        out = cb(rec.index, rec.t, rec.U, rec.V)
        if out:
            rec.diagnostics.update(out)
    return rec
