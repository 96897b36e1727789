"""Run configuration, experiment drivers and CSV/JSON emission.

``conserve_study`` tracks invariant deviations along one run.
``eoc_study`` collects final-time errors over a ladder of meshes.
``estimate_study`` streams the estimator and its effectivity per step.
Every driver returns plain row dicts; writers keep full round-trip
precision while the text tables round to 3 digits.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .estimators import EstimatorTracker, initial_data_norms
from .exact import (
    ExactSolution,
    STRETCHED_LENGTH,
    PeriodicityError,
    error_vs_exact,
    linear_solution,
    mkdv4_solution,
    stretched_sn,
)
from .mesh import build_uniform_mesh, gauss_rule
from .operators import apply_gradient, assemble
from .problem import ProblemSpec
from .projections import ParityError, check_parity, elliptic_projection, project_S
from .space import DgFunction, l2_project, norm_l2
from .stepper import NewtonDivergence, StepRecord, run

log = logging.getLogger(__name__)

PROBLEMS = ("linear", "mkdv4", "custom")
DOMAIN_MODES = ("scaled-40", "sn-auto-period", "paper-literal")
COUPLINGS = {"fine": 0.1, "equal": 1.0, "coarse": 10.0}
INITIAL = ("exact", "sin", "sn")
PROJECTIONS = ("l2", "elliptic")

# certificate thresholds by family
CERTIFICATE_TOL = {"linear_sinusoid": 1e-10, "mkdv4_sn": 1e-8}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    problem: str = "linear"
    alpha: float | None = None
    exponent: int | None = None
    degree: int = 1
    cells: int | None = None
    dt: float = 0.2
    tfinal: float | None = None
    sigma: float | None = None
    newton_tol: float = 1e-12
    domain_mode: str | None = None
    initial: str = "exact"
    projection: str = "l2"
    wave: int = 1
    k: float = 0.9
    levels: tuple = (25, 50, 100, 200)
    odd_levels: bool = True
    coupling: str = "fine"
    quotient: str = "centred"
    sh_checks: bool = False
    workers: int = 1
    out: str | None = None
    json_out: str | None = None
    ca2cb2: float = 1.0
    creg: float = 1.0

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.problem == "custom" and (self.alpha is None or self.exponent is None):
            raise ConfigError("a custom problem needs both alpha and exponent")
        for name in ("dt", "newton_tol", "ca2cb2", "creg", "k"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("alpha", "sigma", "cells"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if self.tfinal is not None and not self.tfinal >= 0:
            raise ConfigError(f"tfinal must be nonnegative, got {self.tfinal!r}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigError(f"degree must be an integer >= 1, got {self.degree!r}")
        if self.exponent is not None and (int(self.exponent) != self.exponent or self.exponent < 2):
            raise ConfigError(f"exponent must be an integer >= 2, got {self.exponent!r}")
        if self.cells is not None and self.cells < 2:
            raise ConfigError("need at least 2 cells")
        if not self.k < 1:
            raise ConfigError("sn modulus k must lie in (0, 1)")
        if self.domain_mode is not None and self.domain_mode not in DOMAIN_MODES:
            raise ConfigError(f"domain mode must be one of {DOMAIN_MODES}, got {self.domain_mode!r}")
        if self.coupling not in COUPLINGS:
            raise ConfigError(f"coupling must be one of {tuple(COUPLINGS)}, got {self.coupling!r}")
        if self.initial not in INITIAL:
            raise ConfigError(f"initial must be one of {INITIAL}, got {self.initial!r}")
        if self.projection not in PROJECTIONS:
            raise ConfigError(f"projection must be one of {PROJECTIONS}, got {self.projection!r}")
        if self.quotient not in ("centred", "backward"):
            raise ConfigError(f"quotient must be 'centred' or 'backward', got {self.quotient!r}")
        if not self.levels or any(int(n) != n or n < 2 for n in self.levels):
            raise ConfigError(f"levels must be cell counts >= 2, got {self.levels!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.wave == 0:
            raise ConfigError("wave number must be nonzero")
        return self

    @property
    def spec(self) -> ProblemSpec:
        if self.problem == "linear":
            return ProblemSpec.linear()
        if self.problem == "mkdv4":
            alpha = self.alpha if self.alpha is not None else (0.25 if self.mode == "paper-literal" else 0.5)
            return ProblemSpec.mkdv4(alpha)
        return ProblemSpec(int(self.exponent), float(self.alpha))

    @property
    def mode(self) -> str:
        if self.domain_mode:
            return self.domain_mode
        return "scaled-40" if self.problem == "linear" else "sn-auto-period"

    def final_time(self, default: float) -> float:
        return default if self.tfinal is None else float(self.tfinal)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw):
    kind = _FIELD_TYPES[name]
    if "tuple" in kind:
        if isinstance(raw, (tuple, list)):
            return tuple(int(v) for v in raw)
        return tuple(int(v) for v in str(raw).replace(" ", "").split(",") if v)
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "bool" in kind:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if text.lower() in ("", "none", "auto"):
        return None
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    return text


def parse_problem(text: str) -> dict:
    """'linear', 'mkdv4' or 'custom:ALPHA,M'."""
    if text.startswith("custom"):
        _, _, rest = text.partition(":")
        try:
            alpha, m = rest.split(",")
            return {"problem": "custom", "alpha": float(alpha), "exponent": int(m)}
        except ValueError:
            raise ConfigError(f"custom problem must look like 'custom:ALPHA,M', got {text!r}") from None
    return {"problem": text}


def parse_constants(text: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = item.partition("=")
        key = key.strip().lower()
        if not sep or key not in ("ca2cb2", "creg"):
            raise ConfigError(f"constants must look like 'ca2cb2=..,creg=..', got {text!r}")
        try:
            out[key] = float(value)
        except ValueError:
            raise ConfigError(f"constant {key} is not a number: {value!r}") from None
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read the [run] section of an INI file, then apply overrides.

    Keys are RunConfig field names (dashes allowed). ``problem`` and
    ``constants`` accept the same compact forms as the command line.
    """
    values: dict = {}
    if path:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not parser.has_section("run"):
            raise ConfigError(f"config {path} has no [run] section")
        for key, raw in parser.items("run"):
            values.update(_translate(key.replace("-", "_"), raw))
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values.update(_translate(key, raw))
    try:
        cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _translate(key: str, raw) -> dict:
    if key == "problem":
        return parse_problem(str(raw))
    if key == "constants":
        return parse_constants(str(raw))
    if key == "paper_coupling":
        return {"coupling": "coarse"} if _coerce("odd_levels", raw) else {}
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return {key: raw}


# ---------------------------------------------------------------- setup


@dataclass
class Setup:
    """Everything a driver needs: domain, benchmark and its status."""

    spec: ProblemSpec
    length: float
    u0: callable
    exact: ExactSolution | None
    benchmark: ExactSolution
    certificate: float
    notes: dict = field(default_factory=dict)


def build_setup(cfg: RunConfig) -> Setup:
    """Resolve domain length, initial data and the exact solution (if any).

    The exact solution is used for errors only when its flux matches the
    configured problem and its PDE residual certificate passes.
    """
    spec = cfg.spec
    mode = cfg.mode
    family = cfg.initial
    if family == "exact":
        family = "sin" if spec.is_linear else "sn"
    try:
        if family == "sin":
            L = STRETCHED_LENGTH if mode == "paper-literal" else None
            if mode == "sn-auto-period":
                L = mkdv4_solution(cfg.k).domain_length
            bench = linear_solution(cfg.wave, 1.0, 0.0, L or 40.0)
        elif mode == "paper-literal":
            bench = stretched_sn(cfg.k)
        elif mode == "sn-auto-period":
            bench = mkdv4_solution(cfg.k, alpha=0.5)
        else:
            bench = mkdv4_solution(cfg.k, L=40.0)
    except PeriodicityError as exc:
        raise ConfigError(f"domain mode {mode!r}: {exc}") from None
    cert = bench.certify()
    tol = CERTIFICATE_TOL.get(bench.family, 1e-8)
    matches = bench.spec == spec
    exact = bench if matches and cert <= tol else None
    notes = {"benchmark": bench.family, "tag": bench.tag, "certificate": cert, "flux_matches": matches}
    return Setup(spec, bench.domain_length, bench.initial(), exact, bench, cert, notes)


def _cells(cfg: RunConfig, L: float) -> int:
    # default keeps h close to 0.4, the spacing of the conservation tests
    return int(cfg.cells) if cfg.cells else max(2, int(round(L / 0.4)))


def _initial_dg(cfg: RunConfig, setup: Setup, ops):
    if cfg.projection == "elliptic":
        b = setup.benchmark
        return elliptic_projection(b.initial(), lambda x: b.uxx(x, 0.0), ops)
    return setup.u0


def _sh_diagnostic(setup: Setup, mesh, degree: int) -> float:
    """max |P_h(u0_x) - G_h(S_h u0)| in L2; raises ParityError first."""
    check_parity(mesh, degree)
    ops = assemble(mesh, degree)
    b = setup.benchmark
    lhs = l2_project(lambda x: b.ux(x, 0.0), mesh, degree, gauss_rule(degree + 16))
    rhs = apply_gradient(ops, project_S(setup.u0, mesh, degree))
    return norm_l2(lhs - rhs)


# ---------------------------------------------------------------- drivers


CONSERVE_COLUMNS = ("step", "t", "mass", "momentum", "energy", "mass_dev", "momentum_dev", "energy_dev",
                    "newton_iters", "residual")


class RowSink:
    """Collects rows and optionally streams them to an open CSV file."""

    def __init__(self, columns: Sequence[str], stream=None):
        self.columns = list(columns)
        self.rows: list[dict] = []
        self._writer = None
        self._stream = stream
        if stream is not None:
            self._writer = csv.writer(stream, lineterminator="\n")
            self._writer.writerow(self.columns)
            stream.flush()

    def add(self, row: dict):
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow([_fmt(row.get(c)) for c in self.columns])
            self._stream.flush()


def conserve_study(cfg: RunConfig, stream=None) -> dict:
    """Invariant deviations F(U^n) - F(U^0) at every step.

    On solver divergence the rows so far are kept and the failing step is
    reported in the summary under ``error``.
    """
    setup = build_setup(cfg)
    T = cfg.final_time(100.0)
    mesh = build_uniform_mesh(_cells(cfg, setup.length), setup.length)
    ops = assemble(mesh, cfg.degree, cfg.sigma)
    sink = RowSink(CONSERVE_COLUMNS, stream)
    ref = {}

    def on_record(rec: StepRecord):
        if not ref:
            ref.update(mass=rec.mass, momentum=rec.momentum, energy=rec.energy)
        sink.add({
            "step": rec.index, "t": rec.t, "mass": rec.mass, "momentum": rec.momentum, "energy": rec.energy,
            "mass_dev": rec.mass - ref["mass"], "momentum_dev": rec.momentum - ref["momentum"],
            "energy_dev": rec.energy - ref["energy"], "newton_iters": rec.newton_iters,
            "residual": rec.residual_norm,
        })

    error = None
    try:
        run(_initial_dg(cfg, setup, ops), T, cfg.dt, ops, setup.spec, newton_tol=cfg.newton_tol,
            on_record=on_record)
    except NewtonDivergence as exc:
        error = {"step": exc.step_index, "residual": exc.residual, "message": str(exc)}
    rows = sink.rows
    summary = {
        "command": "conserve",
        "cells": mesh.num_cells,
        "h": setup.length / mesh.num_cells,
        "domain_length": setup.length,
        "steps": len(rows) - 1,
        "max_mass_dev": max(abs(r["mass_dev"]) for r in rows),
        "max_momentum_dev": max(abs(r["momentum_dev"]) for r in rows),
        "max_energy_dev": max(abs(r["energy_dev"]) for r in rows),
        "energy0": ref["energy"],
        **setup.notes,
    }
    if error:
        summary["error"] = error
    return {"columns": list(CONSERVE_COLUMNS), "rows": rows, "summary": summary}


def eoc(a: Sequence[float], h: Sequence[float]) -> list[float]:
    """EOC(a, h; i) = log(a_{i+1} / a_i) / log(h_{i+1} / h_i); one fewer entry."""
    if len(a) != len(h):
        raise ValueError("error and mesh-size sequences differ in length")
    out = []
    for i in range(len(a) - 1):
        if a[i] > 0 and a[i + 1] > 0 and h[i] != h[i + 1]:
            out.append(math.log(a[i + 1] / a[i]) / math.log(h[i + 1] / h[i]))
        else:
            out.append(float("nan"))
    return out


@dataclass
class EocTable:
    """Per-level values with an EOC column for each tracked quantity."""

    quantities: tuple
    rows: list

    @classmethod
    def build(cls, levels: list[dict], quantities: Sequence[str]) -> "EocTable":
        h = [r["h"] for r in levels]
        rows = [dict(r) for r in levels]
        for q in quantities:
            rates = eoc([r[q] for r in levels], h)
            for i, row in enumerate(rows):
                row[f"eoc_{q}"] = rates[i - 1] if i else float("nan")
        return cls(tuple(quantities), rows)

    @property
    def columns(self) -> list[str]:
        base = ["level", "cells", "h", "tau", "steps"]
        return base + list(self.quantities) + [f"eoc_{q}" for q in self.quantities]

    def final(self, quantity: str) -> float:
        return self.rows[-1][f"eoc_{quantity}"]


def _odd(n: int) -> int:
    return n if n % 2 else n + 1


def _level(args):
    cfg, level, N = args
    setup = build_setup(cfg)
    L = setup.length
    mesh = build_uniform_mesh(N, L)
    h = L / N
    tau = COUPLINGS[cfg.coupling] * h
    T = cfg.final_time(1.0)
    ops = assemble(mesh, cfg.degree, cfg.sigma)
    tracker = _tracker(cfg, setup, ops)
    recs = run(_initial_dg(cfg, setup, ops), T, tau, ops, setup.spec, callbacks=[tracker],
               newton_tol=cfg.newton_tol)
    final = recs[-1]
    err = error_vs_exact(final.U, setup.exact, final.t)
    return {
        "level": level, "cells": N, "h": h, "tau": final.t / max(1, len(recs) - 1), "steps": len(recs) - 1,
        "err_enorm": err["enorm"], "err_l2": err["l2"], "err_l4": err["l4"],
        "eta": math.sqrt(final.diagnostics["eta_total"]), "H": final.diagnostics["H"],
    }


def _tracker(cfg: RunConfig, setup: Setup, ops) -> EstimatorTracker:
    kind = "linear" if setup.spec.is_linear else "m4"
    norms = None
    if kind == "m4":
        b = setup.benchmark
        norms = initial_data_norms(b.initial(), setup.length, lambda x: b.ux(x, 0.0), lambda x: b.uxx(x, 0.0))
    return EstimatorTracker(ops, setup.spec, ca2cb2=cfg.ca2cb2, kind=kind, u0_norms=norms, creg=cfg.creg,
                            quotient=cfg.quotient, newton_tol=cfg.newton_tol)


def eoc_study(cfg: RunConfig) -> EocTable:
    """Final-time errors and estimator totals over the configured levels.

    Levels run in a process pool when ``workers > 1``; rows are assembled
    in level order either way. A failing level aborts the study and the
    rows of completed levels travel on the exception as ``partial``.
    """
    setup = build_setup(cfg)
    if setup.exact is None:
        raise ConfigError(
            f"EOC needs a certified exact solution; {setup.notes['benchmark']} "
            f"(tag {setup.notes['tag'] or '-'}) has residual {setup.certificate:.3e} "
            f"or does not match the configured flux"
        )
    cells = [_odd(n) if cfg.odd_levels else int(n) for n in cfg.levels]
    if cfg.sh_checks:
        for N in cells:
            check_parity(build_uniform_mesh(N, setup.length), cfg.degree)
    jobs = [(cfg, i, N) for i, N in enumerate(cells)]
    rows: list[dict] = []
    try:
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
                for row in pool.map(_level, jobs):
                    rows.append(row)
        else:
            for job in jobs:
                rows.append(_level(job))
    except NewtonDivergence as exc:
        exc.partial = EocTable.build(rows, _eoc_quantities(setup)) if rows else None
        raise
    return EocTable.build(rows, _eoc_quantities(setup))


def _eoc_quantities(setup: Setup):
    if setup.spec.is_linear:
        return ("err_enorm", "err_l2", "eta", "H")
    return ("err_enorm", "err_l2", "err_l4", "eta", "H")


ESTIMATE_COLUMNS = ("step", "t", "eta_total", "eta_volume", "eta_jumpUx", "eta_jumpU", "eta_jumpV", "noncon",
                    "eta_rate", "H", "H_acc", "err_enorm", "err_Lm", "effectivity")


def estimate_study(cfg: RunConfig, stream=None) -> dict:
    """Per-step estimator stream; errors and effectivity when an exact
    solution is available, bound-only otherwise.

    ``H_acc`` is H minus its eta(U(t))^2 part, the accumulated piece that
    is nondecreasing in t. Effectivity is H / (enorm(e)^2 / 2 + |e|^2 / 2)
    for m = 2 and H / (enorm(e)^2 / 2 + |e|_{L4}^4 / 4) otherwise.
    """
    setup = build_setup(cfg)
    L = setup.length
    mesh = build_uniform_mesh(_cells(cfg, L), L)
    diagnostics = {}
    if cfg.sh_checks:
        diagnostics["sh_identity_defect"] = _sh_diagnostic(setup, mesh, cfg.degree)
    ops = assemble(mesh, cfg.degree, cfg.sigma)
    T = cfg.final_time(1.0)
    tracker = _tracker(cfg, setup, ops)
    columns = list(ESTIMATE_COLUMNS) + (["C4"] if tracker.kind == "m4" else [])
    sink = RowSink(columns, stream)
    eta_weight = 1.0 if tracker.kind == "linear" else 2.0

    def on_record(rec: StepRecord):
        d = rec.diagnostics
        row = {"step": rec.index, "t": rec.t, **{k: d[k] for k in columns if k in d}}
        row["H_acc"] = d["H"] - eta_weight * d["eta_total"]
        if setup.exact is not None:
            e = error_vs_exact(rec.U, setup.exact, rec.t)
            if tracker.kind == "linear":
                row["err_Lm"] = e["l2"]
                lhs = 0.5 * e["enorm"] ** 2 + 0.5 * e["l2"] ** 2
            else:
                row["err_Lm"] = e["l4"]
                lhs = 0.5 * e["enorm"] ** 2 + 0.25 * e["l4"] ** 4
            row["err_enorm"] = e["enorm"]
            row["effectivity"] = d["H"] / lhs if lhs > 0 else float("inf")
        else:
            row.update(err_enorm=float("nan"), err_Lm=float("nan"), effectivity=float("nan"))
        sink.add(row)

    error = None
    try:
        run(_initial_dg(cfg, setup, ops), T, cfg.dt, ops, setup.spec, callbacks=[tracker],
            newton_tol=cfg.newton_tol, on_record=on_record)
    except NewtonDivergence as exc:
        error = {"step": exc.step_index, "residual": exc.residual, "message": str(exc)}
    rows = sink.rows
    eff = [r["effectivity"] for r in rows[1:] if math.isfinite(r["effectivity"])]
    summary = {
        "command": "estimate",
        "cells": mesh.num_cells,
        "bound_only": setup.exact is None,
        "final_H": rows[-1]["H"],
        "final_eta": math.sqrt(rows[-1]["eta_total"]),
        "effectivity_min": min(eff) if eff else float("nan"),
        "effectivity_max": max(eff) if eff else float("nan"),
        **diagnostics,
        **setup.notes,
    }
    if error:
        summary["error"] = error
    return {"columns": columns, "rows": rows, "summary": summary}


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(rows: Iterable[dict], columns: Sequence[str], stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])


def to_csv(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()


def read_csv(text_or_stream) -> list[dict]:
    """Inverse of write_csv: integers stay integers, everything else float."""
    stream = io.StringIO(text_or_stream) if isinstance(text_or_stream, str) else text_or_stream
    out = []
    for rec in csv.DictReader(stream):
        row = {}
        for k, v in rec.items():
            try:
                row[k] = int(v)
            except ValueError:
                row[k] = float(v)
        out.append(row)
    return out


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def write_json(payload: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1, sort_keys=True)
        fh.write("\n")


def text_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    """Aligned table with floats rounded to 3 significant digits."""

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return "-" if math.isnan(v) else format(float(v), ".3g")
        return str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def summary_line(summary: dict) -> str:
    keys = [k for k in summary if k.startswith("max_") or k.startswith("final_") or k.startswith("effectivity")]
    return " ".join(f"{k}={format(summary[k], '.3g')}" for k in keys)


def config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["levels"] = list(cfg.levels)
    d["resolved_domain_mode"] = cfg.mode
    return d


# ---------------------------------------------------------------- selftest


def selftest() -> list[tuple[str, bool, str]]:
    """Quick structural checks on small meshes; returns (name, ok, detail)."""
    from .exact import complete_K, jacobi_sn
    from .operators import coercivity_constant
    from .problem import divided_difference
    from .projections import reconstruct_D

    rng = np.random.default_rng(0)
    out = []

    def check(name, value, tol):
        out.append((name, bool(value <= tol), f"{value:.3e} <= {tol:.0e}"))

    mesh = build_uniform_mesh(9, 2 * math.pi)
    ops = assemble(mesh, 2)
    G = ops.G.toarray()
    check("gradient skew-symmetry", abs(G + G.T).max(), 1e-12)
    A = ops.A.toarray()
    check("penalty form symmetry", abs(A - A.T).max(), 1e-12)
    c = coercivity_constant(ops)
    out.append(("penalty form coercive", c > 0, f"{c:.3e} > 0"))
    S = project_S(np.sin, mesh, 2)
    Pvx = l2_project(np.cos, mesh, 2, gauss_rule(18))
    check("P(v_x) = G(S v)", norm_l2(Pvx - apply_gradient(ops, S)), 1e-12)
    try:
        project_S(np.sin, build_uniform_mesh(8, 2 * math.pi), 2)
        out.append(("S_h parity guard", False, "no error for N=8"))
    except ParityError:
        out.append(("S_h parity guard", True, "ParityError for N=8"))
    W = DgFunction(mesh, rng.standard_normal((9, 3)))
    tr = reconstruct_D(W).traces()
    check("D_h continuity", abs(tr.jump).max(), 1e-12)
    check("dd(2,1) = 7.5", abs(divided_difference(2.0, 1.0, ProblemSpec.mkdv4()) - 7.5), 1e-14)
    x = np.linspace(-3, 3, 13)
    check("sn(x, 0) = sin x", abs(jacobi_sn(x, 0.0) - np.sin(x)).max(), 1e-13)
    check("16 K(0.9 | parameter)", abs(16 * complete_K(0.9, "parameter") - STRETCHED_LENGTH), 1e-11)
    check("linear certificate", linear_solution(1, 1.0, 0.0, 40.0).certify(), 1e-10)
    check("sn certificate", mkdv4_solution(0.9).certify(), 1e-8)
    cfg = RunConfig(degree=1, cells=20, dt=0.2, tfinal=2.0)
    res = conserve_study(cfg)["summary"]
    check("short linear run energy drift", res["max_energy_dev"], 1e-9 * (1 + abs(res["energy0"])))
    return out


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
