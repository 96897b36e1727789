"""Acceptance suite: one check per criterion, one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""
import functools
import math
import time

import numpy as np
import pytest

from kdvdg.exact import (
    STRETCHED_LENGTH,
    complete_K,
    jacobi_sn,
    linear_solution,
    mkdv4_solution,
    stretched_sn,
)
from kdvdg.harness import RunConfig, conserve_study, eoc_study
from kdvdg.mesh import build_uniform_mesh, gauss_rule
from kdvdg.operators import apply_gradient, assemble, coercivity_constant
from kdvdg.problem import ProblemSpec, divided_difference
from kdvdg.projections import ParityError, project_S, reconstruct_D
from kdvdg.space import DgFunction, inner, l2_project, norm_l2
from kdvdg.stepper import run

RESULTS: dict = {}


def record(number, ok, detail):
    RESULTS[number] = (bool(ok), detail)
    return bool(ok), detail


def _conservation(cfg):
    t0 = time.perf_counter()
    s = conserve_study(cfg)["summary"]
    elapsed = time.perf_counter() - t0
    ok = (s.get("error") is None and s["steps"] == 500 and s["max_mass_dev"] <= 1e-10
          and s["max_energy_dev"] <= 1e-9 * (1 + abs(s["energy0"])) and elapsed <= 60)
    return ok, f"mass {s['max_mass_dev']:.1e} energy {s['max_energy_dev']:.1e} ({elapsed:.1f}s)"


@functools.lru_cache(None)
def criterion_1():
    parts = []
    ok = True
    for q in (1, 2, 3, 4):
        good, detail = _conservation(RunConfig(degree=q, cells=100, dt=0.2, tfinal=100.0))
        ok &= good
        parts.append(f"q={q}: {detail}")
    return record(1, ok, "; ".join(parts))


@functools.lru_cache(None)
def criterion_2():
    parts = []
    ok = True
    for mode in ("sn-auto-period", "paper-literal"):
        for q in (1, 2, 3, 4):
            good, detail = _conservation(RunConfig(problem="mkdv4", domain_mode=mode, degree=q, dt=0.2,
                                                   tfinal=100.0))
            ok &= good
            parts.append(f"{mode} q={q}: {detail}")
    return record(2, ok, "; ".join(parts))


@functools.lru_cache(None)
def linear_study(q, projection="l2"):
    t0 = time.perf_counter()
    table = eoc_study(RunConfig(degree=q, levels=(25, 50, 100, 200), coupling="fine", tfinal=1.0,
                                projection=projection))
    return table, time.perf_counter() - t0


@functools.lru_cache(None)
def criterion_3():
    ok = True
    parts = []
    total = 0.0
    for q in (1, 2):
        table, elapsed = linear_study(q)
        total += elapsed
        en, l2 = table.final("err_enorm"), table.final("err_l2")
        good = abs(en - q) <= 0.15 and abs(l2 - (q + 1)) <= 0.2
        ok &= good
        parts.append(f"q={q}: enorm EOC {en:.3f} (target {q}), L2 EOC {l2:.3f} (target {q + 1})")
    ok &= total <= 300
    parts.append(f"{total:.1f}s")
    ell, _ = linear_study(2, "elliptic")
    parts.append(f"for information, q=2 from the elliptic projection: enorm EOC {ell.final('err_enorm'):.3f}, "
                 f"L2 EOC {ell.final('err_l2'):.3f}")
    return record(3, ok, "; ".join(parts))


@functools.lru_cache(None)
def criterion_4():
    """Linear problem, q=2 on N=51, initial data by elliptic projection."""
    from kdvdg.projections import elliptic_projection

    L, q, N, T = 40.0, 2, 51, 1.0
    mesh = build_uniform_mesh(N, L)
    ops = assemble(mesh, q)
    ex = linear_solution(1, 1.0, 0.0, L)
    U0 = elliptic_projection(ex.initial(), lambda x: ex.uxx(x, 0.0), ops)
    spec = ProblemSpec.linear()
    tau0 = 0.1
    ref = run(U0, T, tau0 / 256, ops, spec)[-1].U
    errs = [norm_l2(run(U0, T, tau0 / 2**i, ops, spec)[-1].U - ref) for i in range(4)]
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(3)]
    ok = all(1.8 <= r <= 2.2 for r in rates)
    return record(4, ok, "temporal EOCs " + ", ".join(f"{r:.3f}" for r in rates))


@functools.lru_cache(None)
def criterion_5():
    ok = True
    parts = []
    for q in (1, 2):
        table, _ = linear_study(q)
        rows = table.rows
        eta_rate, en_rate = table.final("eta"), table.final("err_enorm")
        eff = [r["H"] / (0.5 * r["err_enorm"] ** 2 + 0.5 * r["err_l2"] ** 2) for r in rows[-3:]]
        spread = max(eff) / min(eff)
        good = abs(eta_rate - en_rate) <= 0.2 and spread < 4
        ok &= good
        parts.append(f"q={q}: eta EOC {eta_rate:.3f} vs enorm EOC {en_rate:.3f}, "
                     f"effectivity {', '.join(f'{e:.3g}' for e in eff)} (spread x{spread:.2f})")
    ell, _ = linear_study(2, "elliptic")
    parts.append(f"for information, q=2 from the elliptic projection: eta EOC {ell.final('eta'):.3f} vs "
                 f"enorm EOC {ell.final('err_enorm'):.3f}")
    return record(5, ok, "; ".join(parts))


@functools.lru_cache(None)
def criterion_6():
    rng = np.random.default_rng(6)
    checks = {}
    timings = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        checks[name] = fn()
        timings[name] = time.perf_counter() - t0

    mesh = build_uniform_mesh(9, 40.0)

    def skew():
        worst = 0.0
        for q in (1, 2, 3, 4):
            ops = assemble(mesh, q)
            for _ in range(100):
                W = DgFunction(mesh, rng.standard_normal((9, q + 1)))
                P = DgFunction(mesh, rng.standard_normal((9, q + 1)))
                worst = max(worst, abs(inner(apply_gradient(ops, W), P) + inner(W, apply_gradient(ops, P))))
        return worst <= 1e-12

    def symmetric():
        return all(
            abs(A - A.T).max() <= 1e-12 * abs(A).max()
            for A in (assemble(mesh, q).A.toarray() for q in (1, 2, 3, 4))
        )

    def coercive():
        return all(coercivity_constant(assemble(mesh, q)) > 0 for q in (1, 2, 3, 4))

    def sh_identity():
        ops = assemble(mesh, 2)
        w = 2 * np.pi / 40.0
        lhs = l2_project(lambda x: w * np.cos(w * x), mesh, 2, gauss_rule(18))
        rhs = apply_gradient(ops, project_S(lambda x: np.sin(w * x), mesh, 2))
        return np.abs(lhs.coeffs - rhs.coeffs).max() <= 1e-12

    def parity():
        try:
            project_S(np.sin, build_uniform_mesh(8, 40.0), 2)
        except ParityError:
            return True
        return False

    def reconstruction():
        violations, worst = 0, 0.0
        for i in range(1000):
            q = 1 + i % 4
            W = DgFunction(mesh, rng.standard_normal((9, q + 1)))
            D = reconstruct_D(W)
            worst = max(worst, np.abs(D.traces().jump).max())
            J = W.traces().jump
            h = mesh.cell_sizes
            diff = (D - W.with_degree(q + 1)).coeffs
            per_cell = np.sum(diff**2 * (h[:, None] / (2 * np.arange(q + 2) + 1)), axis=1)
            bound = h / (8 * (2 * q + 1)) * (J**2 + np.roll(J, -1) ** 2)
            violations += int(np.sum(per_cell > bound * (1 + 1e-12)))
        return worst <= 1e-12 and violations == 0

    def divided():
        spec = ProblemSpec.mkdv4(0.5)
        a = rng.uniform(-2, 2, 50)
        b = rng.uniform(-2, 2, 50)
        scale = np.abs(a) ** 3 + np.abs(b) ** 3
        return (np.allclose(divided_difference(a, a, spec), spec.fprime(a), rtol=1e-14, atol=0)
                and np.all(np.abs(divided_difference(a, b, spec) - divided_difference(b, a, spec)) <= 1e-14 * scale)
                and divided_difference(2.0, 1.0, spec) == 7.5)

    for name, fn in (("skew", skew), ("symmetry", symmetric), ("coercivity", coercive),
                     ("P(v_x)=G(Sv)", sh_identity), ("parity", parity), ("D_h", reconstruction),
                     ("divided difference", divided)):
        timed(name, fn)
    ok = all(checks.values()) and all(t <= 1.0 for t in timings.values())
    detail = ", ".join(f"{k} {'ok' if v else 'BAD'} {timings[k]:.2f}s" for k, v in checks.items())
    return record(6, ok, detail)


def _sn_series(x, k, terms=20):
    n = 2 * terms + 2
    a = np.zeros(n)
    a[1] = 1.0
    for i in range(n - 2):
        sq = np.convolve(a[: i + 1], a[: i + 1])[: i + 1]
        cube = np.convolve(sq, a[: i + 1])[i]
        a[i + 2] = (-(1 + k * k) * a[i] + 2 * k * k * cube) / ((i + 2) * (i + 1))
    return np.polynomial.polynomial.polyval(x, a)


@functools.lru_cache(None)
def criterion_7():
    x = np.linspace(-3, 3, 61)
    d0 = np.abs(jacobi_sn(x, 0.0) - np.sin(x)).max()
    xs = np.linspace(-0.5, 0.5, 41)
    d1 = max(np.abs(jacobi_sn(xs, k) - _sn_series(xs, k)).max() for k in (0.3, 0.9))
    d2 = abs(16 * complete_K(0.9, "parameter") - STRETCHED_LENGTH)
    ok = d0 <= 1e-13 and d1 <= 1e-12 and d2 <= 1e-11
    return record(7, ok, f"sn(x,0) vs sin {d0:.1e}, series {d1:.1e}, 16K {d2:.1e}")


@functools.lru_cache(None)
def criterion_8():
    lin = linear_solution(1, 1.0, 0.0, 40.0).certify()
    sn = mkdv4_solution(0.9).certify()
    quarter = mkdv4_solution(0.9, alpha=0.25).certify()
    literal = stretched_sn().certify()
    ok = lin <= 1e-10 and sn <= 1e-8 and quarter > 1e-8 and literal > 1e-8
    return record(8, ok, f"linear {lin:.1e}, sn (f=u^4/2) {sn:.1e}, "
                         f"f=u^4/4 variant {quarter:.2g} (must fail), stretched-domain variant {literal:.2g} (must fail)")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8}
NAMES = {1: "conservation, linear", 2: "conservation, quartic", 3: "spatial EOC, linear", 4: "temporal order",
         5: "estimator optimality", 6: "operator properties", 7: "special functions", 8: "exactness certificates"}


def summary_lines():
    return [f"{'PASS' if RESULTS[n][0] else 'FAIL'}  criterion {n} ({NAMES[n]}): {RESULTS[n][1]}"
            for n in sorted(RESULTS)]


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    ok, detail = CRITERIA[number]()
    print(f"{'PASS' if ok else 'FAIL'}  criterion {number} ({NAMES[number]}): {detail}")
    assert ok, detail


if __name__ == "__main__":
    for n in sorted(CRITERIA):
        CRITERIA[n]()
        print(summary_lines()[-1], flush=True)
