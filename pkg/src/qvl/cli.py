"""Scenario runner: ``qvl run``, ``qvl generate`` and ``qvl report --merge``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, families
from .competitor import find_gap, interpolation_study, radial_extension
from .errors import QVLError, UsageError
from .grids import Ball, grid_from_params
from .minimize import SolveOptions, decay_profile, radial_comparison_check, solve_dirichlet, verify_almost_min
from .qfield import QField, load_field, save_field
from .station import (
    frequency_bounds_check,
    frequency_profile,
    radial_squash,
    radial_squeeze,
    squash_identity_residual,
    squash_residual,
    squeeze_residual,
    vmo_report,
)
from .suites import metric_properties, retraction_properties, separation_properties

log = logging.getLogger("qvl")

SUITES = ("metric-props", "retraction", "separation", "radial-comparison", "interpolation",
          "almost-min", "stationarity", "frequency", "vmo", "log-decay")
RANDOMIZED = {"metric-props", "retraction", "separation", "interpolation"}

DEFAULT_TOLERANCES = {
    "metric_rel": 1e-12,
    "retraction_rel": 1e-12,
    "monotone_h": 5.0,
    "residual_h": 5.0,
    "almost_min": 1e-9,
    "interpolation_spread": 0.2,
    "vmo_rel": None,
}


# JSON helpers


def _clean(obj):
    """Recursively convert to JSON-safe builtins; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# scenario handling


def _threads() -> int:
    raw = os.environ.get("QVL_THREADS", "1")
    try:
        k = int(raw)
    except ValueError as exc:
        raise UsageError(f"QVL_THREADS must be a positive integer, got {raw!r}") from exc
    if k < 1:
        raise UsageError(f"QVL_THREADS must be a positive integer, got {raw!r}")
    return k


def _domain(desc: dict):
    if not isinstance(desc, dict) or "type" not in desc:
        raise UsageError("domain must be an object with a 'type'")
    p = dict(desc)
    if p["type"] == "polar":
        p.setdefault("rmin", 0.0)
        p.setdefault("rmax", 1.0)
        p.setdefault("nr", 64)
        p.setdefault("ntheta", 2 * int(p["nr"]))
    elif p["type"] == "cartesian":
        p.setdefault("m", 2)
        p.setdefault("kind", "ball")
        p.setdefault("h", 1 / 32)
    try:
        return grid_from_params(p)
    except (KeyError, TypeError, ValueError, QVLError) as exc:
        raise UsageError(f"bad domain desc {desc!r}: {exc}") from exc


def validate(scenario) -> dict:
    if not isinstance(scenario, dict):
        raise UsageError("scenario must be a JSON object")
    for key in ("name", "generator", "domain", "suites"):
        if key not in scenario:
            raise UsageError(f"scenario is missing {key!r}")
    suites = scenario["suites"]
    if not isinstance(suites, list) or not suites:
        raise UsageError("suite list must be a nonempty array")
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise UsageError(f"unknown suites {unknown}; choose from {list(SUITES)}")
    gen = scenario["generator"]
    if not isinstance(gen, dict) or len({"family", "solve", "file"} & set(gen)) != 1:
        raise UsageError("generator needs exactly one of 'family', 'solve' or 'file'")
    needs_seed = bool(RANDOMIZED & set(suites)) or (
        "solve" in gen and int(gen["solve"].get("restarts", 1)) > 1)
    if needs_seed and scenario.get("seed") is None:
        raise UsageError("a seed is required when randomized suites or restarts are selected")
    tol = scenario.get("tolerances", {})
    if not isinstance(tol, dict) or set(tol) - set(DEFAULT_TOLERANCES):
        raise UsageError(f"tolerances may only set {sorted(DEFAULT_TOLERANCES)}")
    return scenario


def _family(desc: dict):
    name = desc.get("family")
    params = desc.get("params", {})
    if name == "radial-extension":
        inner = params.get("trace")
        if not isinstance(inner, dict):
            raise UsageError("radial-extension needs params.trace = {family, params}")
        return None, _family(inner)[1], float(params.get("alpha", 1.0))
    return name, families.from_params(name, params), None


def build_field(scenario: dict, domain):
    """Field and (when analytic) the sampling callable for a scenario."""
    gen = scenario["generator"]
    if "file" in gen:
        f = load_field(gen["file"])
        return f, None, {"file": str(gen["file"])}
    if "family" in gen:
        _, fam, alpha = _family(gen)
        if alpha is not None:
            f = radial_extension(fam, alpha, domain)
            return f, None, {"family": "radial-extension", "alpha": alpha}
        return QField.from_function(domain, fam, meta={"family": fam.name}), fam, {"family": fam.name}
    desc = dict(gen["solve"])
    _, fam, _ = _family(desc.get("boundary", {}))
    opts = SolveOptions(p=float(desc.get("p", 2.0)), max_sweeps=int(desc.get("max_sweeps", 100)),
                        tol=float(desc.get("tol", 1e-10)), restarts=int(desc.get("restarts", 1)),
                        seed=int(scenario.get("seed") or 0))
    res = solve_dirichlet(domain, fam, opts)
    return res.field, None, {"solver": res}


def _center(f, params):
    c = params.get("center")
    if c is None:
        c = getattr(f.domain, "center", np.zeros(f.m))
    return np.asarray(c, dtype=float).reshape(f.m)


def _balls(params, f, default_r):
    raw = params.get("balls")
    if raw is None:
        return [Ball(tuple(_center(f, params)), default_r)]
    return [Ball(tuple(b[0]), float(b[1])) for b in raw]


# suites


def suite_metric(ctx, params):
    rep = metric_properties(ctx["rng"], int(params.get("pairs", 2000)), int(params.get("Qmax", 6)),
                            int(params.get("nmax", 4)), ctx["tol"]["metric_rel"])
    return rep, rep["pass"], {}


def suite_retraction(ctx, params):
    rep = retraction_properties(ctx["rng"], int(params.get("samples", 2000)),
                                rel_tol=ctx["tol"]["retraction_rel"])
    return rep, rep["pass"], {}


def suite_separation(ctx, params):
    rep = separation_properties(ctx["rng"], int(params.get("samples", 200)),
                                eps_values=tuple(params.get("eps", (1 / 16, 1 / 9))))
    return rep, rep["pass"], {}


def suite_radial_comparison(ctx, params):
    f = ctx["field"]
    p = float(params.get("p", 2.0))
    cert = find_gap(f.m, p, float(params.get("M", 0.0)), params.get("C"))
    rep = radial_comparison_check(f, cert, _balls(params, f, 0.5))
    rep["certificate"] = cert.to_json()
    return rep, rep["pass"], {}


def suite_interpolation(ctx, params):
    f = ctx["field"]
    rep = interpolation_study(ctx["rng"], int(params.get("count", 20)), Q=f.Q, n=f.n,
                              K=int(params.get("K", 256)), eps=float(params.get("eps", 0.125)))
    spread = ctx["tol"]["interpolation_spread"]
    ok = (rep["max_trace_residual"] <= 1e-12 and rep["min_ratio"] >= 1 - spread
          and rep["max_ratio"] <= 1 + spread and math.isfinite(rep["median"]))
    rep["pass"] = bool(ok)
    rows = [(i, c) for i, c in enumerate(rep["constants"])]
    return rep, ok, {"interpolation.csv": (("sample", "constant"), rows)}


def suite_almost_min(ctx, params):
    f = ctx["field"]
    w = float(params.get("omega", 0.0))
    rep = verify_almost_min(f, lambda r: w, _balls(params, f, 0.5), tol=ctx["tol"]["almost_min"])
    return rep, rep["pass"], {}


def suite_stationarity(ctx, params):
    f = ctx["field"]
    a = _center(f, params)
    r_in, r_out = float(params.get("r_in", 0.3)), float(params.get("r_out", 0.8))
    h = float(f.domain.h)
    scale = max(1.0, float(np.sum(f.domain.region_weights(Ball(tuple(a), r_out)) * f.density())))
    limit = ctx["tol"]["residual_h"] * h * scale
    sq = squeeze_residual(f, radial_squeeze(a, r_in, r_out))
    sh = squash_residual(f, radial_squash(a, r_in, r_out))
    radii = params.get("radii", [0.25, 0.5, 0.75])
    ident = [squash_identity_residual(f, a, float(r)) for r in radii]
    checks = {"squeeze": abs(sq) <= limit, "squash": abs(sh) <= limit,
              "squash_identity": all(abs(x) <= limit for x in ident)}
    ok = all(checks.values())
    rep = {"center": a.tolist(), "h": h, "limit": limit, "squeeze_residual": sq,
           "squash_residual": sh, "identity_radii": radii, "identity_residuals": ident,
           "checks": checks, "pass": bool(ok)}
    return rep, ok, {}


def suite_frequency(ctx, params):
    f = ctx["field"]
    a = _center(f, params)
    radii = params.get("radii", list(np.linspace(0.25, 0.75, 11)))
    prof = frequency_profile(f, a, radii)
    h = prof.h
    tol = ctx["tol"]
    scale = max(1.0, max(prof.D))
    bounds = frequency_bounds_check(prof, params.get("r0"), tol=tol["monotone_h"] * h)
    checks = {
        "N_monotone": prof.N_margin >= -tol["monotone_h"] * h,
        "theta_monotone": prof.theta_margin >= -tol["monotone_h"] * h,
        "H_prime": max(abs(x) for x in prof.H_prime_residual) <= tol["residual_h"] * h * scale,
        "theta_prime": max(abs(x) for x in prof.theta_prime_residual) <= tol["residual_h"] * h * scale,
        "bounds": bounds["pass"],
        "vanishing": not prof.vanishing_violation,
    }
    ok = all(checks.values())
    rep = {"profile": prof.to_json(), "bounds": bounds, "checks": checks, "pass": bool(ok)}
    header = ("r", "D", "H", "N", "Theta", "H_prime_residual", "Theta_prime_residual",
              "squash_identity_residual")
    return rep, ok, {"frequency.csv": (header, prof.rows())}


def _vmo(ctx, params):
    if ctx["family"] is None:
        raise UsageError("vmo and log-decay suites need an analytic family generator")
    if ctx["field"].m != 2:
        raise UsageError("vmo and log-decay suites run in dimension 2")
    key = "vmo_cache"
    if key not in ctx:
        centers = params.get("centers", [[0.0, 0.0], [0.2, 0.1], [-0.3, 0.2]])
        radii = params.get("radii", [0.05, 0.1, 0.2, 0.3, 0.5])
        ctx[key] = vmo_report(ctx["family"], centers, radii, nr=int(params.get("nr", 32)),
                              ntheta=int(params.get("ntheta", 64)), tol=ctx["tol"]["vmo_rel"],
                              workers=ctx["threads"])
    return ctx[key]


def suite_vmo(ctx, params):
    rep = _vmo(ctx, params)
    tol = rep.tolerance
    to_zero = rep.omega_rho[-1] <= tol * max(rep.omega_rho[0], 1e-300) or rep.omega_rho[-1] == 0
    checks = {"omega_monotone": rep.omega_margin >= -tol, "omega_to_zero": bool(to_zero)}
    ok = all(checks.values())
    out = {"report": rep.to_json(), "checks": checks, "pass": bool(ok)}
    rows = [(r, w, o) for r, w, o in zip(rep.radii, rep.omega, rep.oscillation)]
    return out, ok, {"vmo.csv": (("r", "omega", "oscillation"), rows)}


def suite_log_decay(ctx, params):
    rep = _vmo(ctx, params)
    checks = {"dichotomy": all(d["pass"] for d in rep.dichotomy),
              "contraction": all(c["pass"] for c in rep.contraction)}
    ok = all(checks.values())
    out = {"rho": rep.rho, "omega_rho": rep.omega_rho, "dichotomy": rep.dichotomy,
           "contraction": rep.contraction, "C_hat": rep.C_hat, "fit_C": rep.fit_C,
           "fit_alpha": rep.fit_alpha, "better_than_log": rep.better_than_log,
           "checks": checks, "pass": bool(ok)}
    f = ctx["field"]
    radii = params.get("decay_radii")
    if radii:
        out["decay"] = decay_profile(f, _center(f, params), radii).to_json()
    rows = [(j, p, w) for j, (p, w) in enumerate(zip(rep.rho, rep.omega_rho))]
    return out, ok, {"log_decay.csv": (("j", "rho", "omega"), rows)}


SUITE_FUNCS = {
    "metric-props": suite_metric,
    "retraction": suite_retraction,
    "separation": suite_separation,
    "radial-comparison": suite_radial_comparison,
    "interpolation": suite_interpolation,
    "almost-min": suite_almost_min,
    "stationarity": suite_stationarity,
    "frequency": suite_frequency,
    "vmo": suite_vmo,
    "log-decay": suite_log_decay,
}


def _failure_reason(rep: dict) -> str:
    if "error" in rep:
        return rep["error"]
    checks = rep.get("checks")
    if checks:
        return "failed checks: " + ", ".join(k for k, v in sorted(checks.items()) if not v)
    if "balls" in rep:
        bad = [b for b in rep["balls"] if not b["pass"]]
        return f"{len(bad)} of {len(rep['balls'])} balls failed"
    return "assertion failed"


def run_scenario(scenario: dict, out: Path, *, seed=None, tol_scale: float = 1.0,
                 scenario_bytes: bytes | None = None) -> int:
    if seed is not None:
        scenario = dict(scenario, seed=seed)
    validate(scenario)
    if not tol_scale > 0:
        raise UsageError("--tol-scale must be positive")
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(scenario.get("tolerances", {}))
    tol = {k: (v * tol_scale if isinstance(v, (int, float)) and v is not None else v)
           for k, v in tol.items()}
    raw = scenario_bytes if scenario_bytes is not None else dumps(scenario).encode()
    digest = hashlib.sha256(raw).hexdigest()
    threads = _threads()

    failures = []
    reports = {}
    try:
        domain = _domain(scenario["domain"])
        field, family, info = build_field(scenario, domain)
    except QVLError as exc:
        if isinstance(exc, UsageError):
            raise
        failures.append({"suite": "generator", "error": f"{type(exc).__name__}: {exc}"})
        field = None
    base_seed = int(scenario.get("seed") or 0)
    out.mkdir(parents=True, exist_ok=True)
    if field is not None:
        domain = field.domain
        solver = info.pop("solver", None)
        if solver is not None:
            info["solver"] = {"energy": solver.energy, "sweeps": solver.sweeps,
                              "restart": solver.restart, "converged": solver.converged,
                              "restart_energies": solver.restart_energies}
            _write_csv(out / "solver_trace.csv", ("sweep", "energy", "rematches"), solver.trace_rows())
        ctx = {"field": field, "family": family, "tol": tol, "threads": threads}
        params_all = scenario.get("suite_params", {})
        for idx, name in enumerate(scenario["suites"]):
            ctx["rng"] = np.random.default_rng([base_seed, idx])
            try:
                rep, ok, tables = SUITE_FUNCS[name](ctx, params_all.get(name, {}))
            except UsageError:
                raise
            except QVLError as exc:
                rep, ok, tables = {"error": f"{type(exc).__name__}: {exc}"}, False, {}
            reports[name] = {"pass": bool(ok), "report": rep}
            if not ok:
                failures.append({"suite": name, "error": _failure_reason(rep)})
            for fname, (header, rows) in tables.items():
                _write_csv(out / fname, header, rows)
            _write(out / f"{name}.json", dumps({"suite": name, "scenario_sha256": digest,
                                                "pass": ok, "report": rep}))
    grid = field.domain.params() if field is not None else None
    summary = {
        "name": scenario["name"],
        "qvl_version": __version__,
        "scenario": scenario,
        "scenario_sha256": digest,
        "seed": scenario.get("seed"),
        "grid": grid,
        "tolerances": tol,
        "generator": info if field is not None else None,
        "suites": {k: v["pass"] for k, v in reports.items()},
        "failures": failures,
        "pass": not failures,
    }
    _write(out / "report.json", dumps(summary))
    _write(out / "failures.json", dumps(failures))
    for fl in failures:
        log.error("suite %s failed: %s", fl["suite"], fl["error"])
    return 0 if not failures else 1


def cmd_run(args) -> int:
    path = Path(args.scenario)
    try:
        data = path.read_bytes()
        scenario = json.loads(data.decode("utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(scenario, dict):
        raise UsageError("scenario must be a JSON object")
    out = Path(args.out) if args.out else Path(scenario.get("output", "qvl-out")) / str(scenario.get("name", "run"))
    return run_scenario(scenario, out, seed=args.seed, tol_scale=args.tol_scale, scenario_bytes=data)


def cmd_generate(args) -> int:
    try:
        params = json.loads(args.params) if args.params else {}
        ddesc = json.loads(args.domain) if args.domain else {"type": "polar"}
    except json.JSONDecodeError as exc:
        raise UsageError(f"bad JSON argument: {exc}") from exc
    if args.family not in families.FAMILIES:
        raise UsageError(f"unknown family {args.family!r}; choose from {list(families.FAMILIES)}")
    domain = _domain(ddesc)
    f, _, _ = build_field({"generator": {"family": args.family, "params": params}}, domain)
    save_field(args.out, f, meta={"family": args.family, "params": params})
    return 0


def cmd_report(args) -> int:
    root = Path(args.merge)
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    rows = []
    for p in sorted(root.rglob("report.json")):
        try:
            rep = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read {p}: {exc}") from exc
        rows.append({"path": str(p.relative_to(root)), "name": rep.get("name"),
                     "scenario_sha256": rep.get("scenario_sha256"), "pass": rep.get("pass"),
                     "suites": rep.get("suites"), "failures": rep.get("failures")})
    merged = {"reports": rows, "count": len(rows), "pass": all(r["pass"] for r in rows)}
    _write(root / "merged.json", dumps(merged))
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['name']}  ({r['path']})")
    return 0 if merged["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qvl", description="Q-valued map laboratory")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--tol-scale", type=float, default=1.0)
    r.set_defaults(func=cmd_run)
    g = sub.add_parser("generate", help="write a sampled field to a file")
    g.add_argument("family")
    g.add_argument("--params", default="{}")
    g.add_argument("--domain")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)
    m = sub.add_parser("report", help="merge scenario reports")
    m.add_argument("--merge", required=True, metavar="DIR")
    m.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qvl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
