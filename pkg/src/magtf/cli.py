"""Command-line front end.

Usage::

    magtf <command> [--config FILE] [-o PATH] [--format csv|json] [--explain] [key=value ...]

Parameters come from the ``[<command>]`` section of an INI file and from
``key=value`` arguments (which take precedence).  Any sweepable key accepts a
comma-separated list; the Cartesian product of all lists is run in key order
and produces one output row per tuple.  Commas inside parentheses (as in
``V = gaussian(2, 1)``) do not split.

Exit status: 0 on success, 2 for configuration errors, 3 for domain errors,
4 for convergence failures; failures print a JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, MagTFError

_SPLIT = re.compile(r",(?![^()]*\))")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: str
    sweep: bool = True


@dataclass(frozen=True)
class Command:
    keys: dict
    run: Callable[[dict], list]
    explain: str


@dataclass(frozen=True)
class RunConfig:
    """Parsed invocation; ``params`` maps every key to its list of values."""

    command: str
    params: dict
    output_path: str | None = None
    format: str = "csv"

    def tuples(self):
        names = list(self.params)
        for combo in itertools.product(*(self.params[k] for k in names)):
            yield dict(zip(names, combo))


# --- Runners -----------------------------------------------------------------

def _run_pressure(p: dict) -> list:
    from .pressure import (
        PressureParams,
        magnetic_pressure,
        pressure_density,
        pressure_field_derivative,
    )
    pp = PressureParams(p["bh"])
    v = p["v"]
    return [{
        "pressure": float(magnetic_pressure(v, pp)),
        "density": float(pressure_density(v, pp)),
        "field_derivative": float(pressure_field_derivative(v, pp)),
    }]


def _run_tf(p: dict) -> list:
    from .tfsolver import TFInputs, solve_tf_atom, write_solution
    inp = TFInputs(p["Z"], p["N"], p["B"], r_max=p["r_max"], n_grid=p["n_grid"])
    sol = solve_tf_atom(inp, tol=p["tol"])
    if p["solution"]:
        write_solution(sol, p["solution"])
    return [{
        "lambda": sol.lam, "energy_primal": sol.energy_primal,
        "energy_dual": sol.energy_dual, "dual_gap": sol.dual_gap,
        "charge": sol.charge(), "residual": sol.residual, "iterations": sol.iterations,
    }]


def _run_fieldmin(p: dict) -> list:
    from .fieldmin import (
        Field3D,
        MinimizerProblem,
        bump_cutoff,
        corrected_energy,
        field_norms,
        solve_minimizer,
    )
    from .llsbound import parse_expression
    grid = Field3D.box(p["n"], p["length"])
    V = grid.like(parse_expression(p["V"])(*grid.coords()) * np.ones(grid.dims))
    psi = bump_cutoff(grid, (0.0, 0.0, 0.0), p["psi_radius"])
    regime = None if p["regime"] == "auto" else p["regime"]
    prob = MinimizerProblem(V, psi, p["beta"], p["h"], p["kappa"], regime, p["smooth_levels"])
    a = solve_minimizer(prob)
    main, cross, pen, total = corrected_energy(prob, a)
    l2, sup, hess = field_norms(a)
    if p["field"]:
        a.write(p["field"])
    return [{
        "resolved_regime": prob.regime, "main": main, "cross": cross, "penalty": pen,
        "correction": cross + pen, "total": total,
        "grad_l2": l2, "grad_sup": sup, "hess_sup": hess,
    }]


def _run_pilot(p: dict) -> list:
    from .pilot import (
        BOUND_C,
        PilotParams,
        bound_value,
        derivative_kernels_at_origin,
        landau_projector,
        propagator_u,
    )
    pp = PilotParams(p["mu"], p["h"], p["a_slope"], p["b_slope"], p["tau"])
    x = (p["x1"], p["x2"], p["x3"])
    y = (p["y1"], p["y2"], p["y3"])
    e = landau_projector(x, y, pp)
    out = {"e_re": e.real, "e_im": e.imag}
    if p["t"] is not None:
        u = propagator_u(x, y, p["t"], pp)
        out.update(u_re=u.real, u_im=u.imag)
    if p["kernels"]:
        vals = derivative_kernels_at_origin(pp)
        for name, v in zip(("D2", "D1", "D3"), vals):
            bnd = BOUND_C[name] * bound_value(name, pp)
            out[f"{name}_abs"] = abs(v)
            out[f"{name}_bound"] = bnd
            out[f"{name}_holds"] = bool(abs(v) <= bnd)
    return [out]


def _run_bound(p: dict) -> list:
    from .llsbound import LLS_C, lls_bound, load_fixtures, verify_against_trace
    fixtures = load_fixtures(p["fixtures"] or None)
    names = [f.name for f in fixtures]
    if p["fixture"] != "all" and p["fixture"] not in names:
        raise ConfigError(f"unknown fixture {p['fixture']!r}", key="fixture")
    consts = tuple(LLS_C[i] if p[k] is None else p[k] for i, k in enumerate(("c1", "c2", "c3")))
    rows = []
    for f in fixtures:
        if p["fixture"] not in ("all", f.name):
            continue
        inp = f.inputs()
        t1, t2, t3, _ = lls_bound(inp, consts)
        trace, bound, margin = verify_against_trace(inp, f.A, consts)
        rows.append({"name": f.name, "trace": trace, "bound": bound, "margin": margin,
                     "term1": t1, "term2": t2, "term3": t3, "split_valid": inp.split_valid})
    return rows


def _run_budget(p: dict) -> list:
    from .budget import (
        classify_regime,
        global_trace_remainder,
        ntrem_dterm,
        remainder_moderate,
        remainder_strong,
    )
    sp = classify_regime(p["Z"], p["N"], p["B"], p["alpha"], M=p["M"],
                         d=math.inf if p["d"] is None else p["d"], K=p["K"],
                         kappa_star=p["kappa_star"])
    kind = p["kind"]
    if kind == "global":
        b = global_trace_remainder(sp, p["nondeg"])
    elif kind == "dterm":
        b = ntrem_dterm(sp, p["nondeg"])
    else:
        fn = remainder_moderate if sp.regime == "moderate" else remainder_strong
        b = fn(sp, p["nondeg"])
    rec = b.record()
    rec.update(kind=kind, sub_regime=sp.sub_regime, beta=sp.beta, h=sp.h, kappa=sp.kappa,
               diagnostics=list(sp.diagnostics))
    return [rec]


def _budget_row(rec: dict) -> dict:
    """Flat CSV columns of a budget record."""
    out = {k: rec[k] for k in ("regime", "sub_regime", "beta", "h", "kappa",
                               "total", "dominant")}
    for c in rec["components"]:
        if c["label"] == "D-term":
            out["dterm"] = c["value"]
    out["terms"] = ";".join(f"{t['label']}={t['value']!r}" for t in rec["terms"])
    return out


_EXPLAIN_PRESSURE = """\
pressure: magnetic semiclassical pressure and derivatives
  P_b(v)      = kappa0 b sum_j w_j (v - 2 j b)_+^{3/2},  w_0 = 1/2, w_j = 1, kappa0 = 2/(3 pi^2)
  density     = dP/dv = (3/2) kappa0 b sum_j w_j (v - 2 j b)_+^{1/2}
  field_deriv = dP/db
  b -> 0 limit: P = (kappa0/5) v_+^{5/2}"""

_EXPLAIN_TF = """\
tf: radial magnetic Thomas-Fermi atom
  rho = P'_B(W + lambda),  W = Z/|x| - |x|^-1 * rho,  int rho = N
  primal = int tau_B(rho) - int Z rho/|x| + D(rho, rho)
  dual   = -int P_B(W + lambda) - D(rho, rho) + lambda N
  D(f, g) = 1/2 int int f(x) g(y) / |x - y|"""

_EXPLAIN_FIELDMIN = """\
fieldmin: self-generated field correction
  E(A') = -h^-3 int P_bh(V) psi - h^-3 int [d_2 F A'_1 - d_1 F A'_2] + (kappa h^2)^-1 int |dA'|^2
  F = d_beta P_bh(V) psi; minimiser: Laplace A'_1 = -kappa/(2h) d_2 F, Laplace A'_2 = kappa/(2h) d_1 F
  strong field (beta h > 1): lowest Landau level only, d_beta P = kappa0 h V_+^{3/2} / 2
  correction = cross + penalty (<= 0)"""

_EXPLAIN_PILOT = """\
pilot: exact kernels of H = h^2 D_1^2 + (h D_2 - mu x_1)^2 + h^2 D_3^2 - 2 a x_1 - 2 b x_3
  propagator of exp(+i h^-1 t_phys H), t = mu t_phys (Mehler kernel with linear terms)
  projector of H - mu h below tau: Landau sum over m of Hermite products times the
    Airy (b > 0) or sine (b = 0) kernel of h^2 D_3^2 - 2 b x_3
  derivative kernels at x = y = 0 and their bounds:
    |(h D_2 - mu x_1) e| <= C mu^{3/2} h^-1 a^{1/2}
    |h D_1 e|            <= C mu^{3/2} h^-1 a^{1/2}
    |h D_3 e|            <= C mu h^{-3/2} b^{1/2}"""

_EXPLAIN_BOUND = """\
bound: magnetic Lieb-Thirring type estimate for A = A' + A''
  -Tr H^- <= C1 int V_+^{5/2}
           + C2 (int B^2)^{1/2} (int B''^2 + int V^2)^{1/4} (int V^4)^{1/4}
           + C3 (int B^2)^{3/8} (int V^2)^{3/8} (int V^4)^{1/4}
  trace from dense diagonalisation of (D - A)^2 - V -/+ |B| in a Dirichlet box"""


def _explain_budget() -> str:
    from .budget import explain
    return "budget: closed-form remainder budgets (constants set to 1)\n" + explain()


def _keys(**kw):
    return kw


COMMANDS = {
    "pressure": Command(_keys(
        v=Key(float, "1.0"), bh=Key(float, "0.0")), _run_pressure, _EXPLAIN_PRESSURE),
    "tf": Command(_keys(
        Z=Key(float, "1.0"), N=Key(float, "1.0"), B=Key(float, "0.0"),
        r_max=Key(float, "1000.0"), n_grid=Key(int, "1200"), tol=Key(float, "1e-11"),
        solution=Key(str, "", sweep=False)), _run_tf, _EXPLAIN_TF),
    "fieldmin": Command(_keys(
        n=Key(int, "32"), length=Key(float, "4.0"), V=Key(str, "gaussian(1.5, 1.0)"),
        psi_radius=Key(float, "1.2"), beta=Key(float, "2.0"), h=Key(float, "0.1"),
        kappa=Key(float, "0.02"), regime=Key(str, "auto"), smooth_levels=Key(_bool, "false"),
        field=Key(str, "", sweep=False)), _run_fieldmin, _EXPLAIN_FIELDMIN),
    "pilot": Command(_keys(
        mu=Key(float, "10.0"), h=Key(float, "0.1"), a_slope=Key(float, "0.5"),
        b_slope=Key(float, "0.5"), tau=Key(float, "0.5"),
        x1=Key(float, "0.0"), x2=Key(float, "0.0"), x3=Key(float, "0.0"),
        y1=Key(float, "0.0"), y2=Key(float, "0.0"), y3=Key(float, "0.0"),
        t=Key(_opt_float, "none"), kernels=Key(_bool, "true")), _run_pilot, _EXPLAIN_PILOT),
    "bound": Command(_keys(
        fixtures=Key(str, "", sweep=False), fixture=Key(str, "all"),
        c1=Key(_opt_float, "none"), c2=Key(_opt_float, "none"), c3=Key(_opt_float, "none")),
        _run_bound, _EXPLAIN_BOUND),
    "budget": Command(_keys(
        Z=Key(float, "100.0"), N=Key(float, "100.0"), B=Key(float, "0.0"),
        alpha=Key(float, "0.0"), M=Key(int, "1"), d=Key(_opt_float, "none"),
        K=Key(float, "4"), kappa_star=Key(float, "1.0"), nondeg=Key(str, "none"),
        kind=Key(str, "global")), _run_budget, ""),
}

_CHOICES = {
    ("fieldmin", "regime"): ("auto", "moderate", "strong"),
    ("budget", "nondeg"): ("strong", "hessian", "weak", "superstrong", "none"),
    ("budget", "kind"): ("global", "dterm", "semiclassical"),
}


# --- Configuration -------------------------------------------------------------

def _parse_values(command: str, key: str, text: str) -> list:
    spec = COMMANDS[command].keys[key]
    parts = [s.strip() for s in _SPLIT.split(text)] if spec.sweep else [text.strip()]
    out = []
    for part in parts:
        try:
            val = spec.parse(part)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", key=key) from None
        choices = _CHOICES.get((command, key))
        if choices is not None and val not in choices:
            raise ConfigError(f"{key!r} must be one of {', '.join(choices)}; got {val!r}", key=key)
        out.append(val)
    return out


def build_config(command: str, config_path=None, overrides=(), output_path=None,
                 fmt: str = "csv") -> RunConfig:
    """Merge defaults, the ``[command]`` INI section and ``key=value`` overrides."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", key=command)
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown format {fmt!r}", key="format")
    keys = COMMANDS[command].keys
    raw = {k: spec.default for k, spec in keys.items()}
    if config_path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(config_path) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        if cp.has_section(command):
            for k, v in cp[command].items():
                if k not in keys:
                    raise ConfigError(f"unknown key {k!r} for {command}", key=k)
                raw[k] = v
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}", key=item)
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in keys:
            raise ConfigError(f"unknown key {k!r} for {command}", key=k)
        raw[k] = v
    params = {k: _parse_values(command, k, raw[k]) for k in keys}
    return RunConfig(command, params, output_path, fmt)


# --- Execution and output ------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v).lower() if v is not None else ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def run(cfg: RunConfig) -> list:
    """Execute every parameter tuple; returns ``(params, results)`` pairs in order."""
    cmd = COMMANDS[cfg.command]
    out = []
    for params in cfg.tuples():
        for res in cmd.run(params):
            out.append((params, res))
    return out


def render(cfg: RunConfig, rows: list) -> str:
    if cfg.format == "json":
        recs = [dict(params=_jsonable(p), **_jsonable(r)) for p, r in rows]
        return json.dumps(recs, indent=1, sort_keys=True) + "\n"
    flat = [(p, _budget_row(r) if cfg.command == "budget" else r) for p, r in rows]
    cols = []
    for _, r in flat:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(cfg.params) + cols)
    for p, r in flat:
        w.writerow([_fmt(p[k]) for k in cfg.params] + [_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _write_atomic(path: str, text: str) -> None:
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def explain(command: str) -> str:
    if command == "budget":
        return _explain_budget()
    return COMMANDS[command].explain


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def main(argv=None) -> int:
    parser = _Parser(prog="magtf", description="Magnetic Thomas-Fermi toolkit.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("params", nargs="*", metavar="key=value")
    parser.add_argument("--config", "-c")
    parser.add_argument("--output", "-o")
    parser.add_argument("--format", "-f", default="csv", choices=("csv", "json"))
    parser.add_argument("--explain", action="store_true",
                        help="print the formulas the command evaluates and exit")
    try:
        args = parser.parse_intermixed_args(argv)
        if args.explain:
            sys.stdout.write(explain(args.command) + "\n")
            return 0
        cfg = build_config(args.command, args.config, args.params, args.output, args.format)
        text = render(cfg, run(cfg))
        if cfg.output_path:
            _write_atomic(cfg.output_path, text)
        else:
            sys.stdout.write(text)
        return 0
    except MagTFError as exc:
        sys.stderr.write(json.dumps(exc.record(), sort_keys=True) + "\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
