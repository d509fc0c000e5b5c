"""Command-line front end: solve, sweep, simulate, check.

Exit codes: 0 success, 1 usage or parse error, 2 solver failure,
3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, cir, majorant, montecarlo, single_cycle, switching
from .cir import CirParams, Costs
from .errors import (BracketError, DegenerateGridError, InvariantViolation, SolverError,
                     SeriesConvergenceError)

EXIT_OK, EXIT_PARSE, EXIT_SOLVER, EXIT_VALIDATION = 0, 1, 2, 3
SCHEMA = "cirswitch/1"

MODEL_KEYS = ("mu", "sigma", "theta", "r", "c_b", "c_s")
DEFAULTS = {"mu": 0.2, "sigma": 0.3, "theta": 0.2, "r": 0.05, "c_b": 0.001, "c_s": 0.001}
SWEEP_COLUMNS = ["value", "d_star", "b_star", "d_tilde", "b_tilde", "regime", "status"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    """Locale-independent 10-significant-digit formatting; blank for missing."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return f"{float(x):.10g}"


def read_config(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _float(name, v):
    try:
        return float(v)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: not a number: {v!r}") from None


def resolve(args) -> dict:
    """Merge defaults, config file and flags (flags win) into model values."""
    vals = dict(DEFAULTS)
    if args.config:
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        for k, v in cfg.items():
            if k in MODEL_KEYS:
                vals[k] = _float(k, v)
            elif k not in OPTION_KEYS:
                raise UsageError(f"unknown config key {k!r}")
            elif getattr(args, k, None) is None:
                setattr(args, k, OPTION_KEYS[k](v))
    for k in MODEL_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            vals[k] = v
    return vals


OPTION_KEYS = {"seed": int, "paths": int, "dt": float, "grid": int, "tol": float, "jobs": int,
               "y0": float, "horizon": float}


def build_instance(vals):
    try:
        return (CirParams(vals["mu"], vals["theta"], vals["sigma"], vals["r"]),
                Costs(vals["c_b"], vals["c_s"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ------------------------------------------------------------------- solve

def solve_record(params, costs, n_samples=9) -> dict:
    lv = cir.critical_levels(params, costs)
    sol = switching.solve_switching(params, costs)
    sc = sol.single
    ys = np.linspace(0.0, 2.0 * sc.b_star, n_samples)
    if params.feller:
        ys[0] = 1e-6 * params.theta
    samples = [{"y": float(y),
                "V": float(single_cycle.value_v(sc, y)),
                "J": float(single_cycle.value_j(sc, y)),
                "J_tilde": float(switching.value_j_tilde(sol, y)),
                "V_tilde": float(switching.value_v_tilde(sol, y))} for y in ys]
    return {
        "schema": SCHEMA,
        "params": {"mu": params.mu, "theta": params.theta, "sigma": params.sigma, "r": params.r,
                   "feller": params.feller},
        "costs": {"c_b": costs.c_b, "c_s": costs.c_s},
        "critical_levels": {"y_b": lv.y_b, "y_s": lv.y_s},
        "single_cycle": {
            "b_star": {"value": sc.b_star, "residual": sc.b_residual},
            "coef_A": sc.coef_A,
            "d_star": None if sc.trivial_start else {"value": sc.d_star, "residual": sc.d_residual},
            "coef_B": sc.coef_B,
        },
        "switching": {
            "regime": sol.regime.value,
            "d_tilde": sol.d_tilde, "b_tilde": sol.b_tilde,
            "K": sol.coef_K, "Q": sol.coef_Q,
            "residuals": list(sol.residuals),
            "b_star_ref": sol.b_star_ref,
        },
        "samples": samples,
    }


def _print_solve(rec, out):
    sc, sw, lv = rec["single_cycle"], rec["switching"], rec["critical_levels"]
    w = out.write
    w(f"y_b          {fmt(lv['y_b'])}\n")
    w(f"y_s          {fmt(lv['y_s'])}\n")
    w(f"b*           {fmt(sc['b_star']['value'])}   (residual {sc['b_star']['residual']:.2e})\n")
    if sc["d_star"] is None:
        w("d*           no entry (J = 0)\n")
    else:
        w(f"d*           {fmt(sc['d_star']['value'])}   (residual {sc['d_star']['residual']:.2e})\n")
    w(f"regime       {sw['regime']}\n")
    if sw["regime"] == "Repeated":
        w(f"d~*          {fmt(sw['d_tilde'])}\n")
        w(f"b~*          {fmt(sw['b_tilde'])}\n")
        w(f"K            {fmt(sw['K'])}\n")
        w(f"Q            {fmt(sw['Q'])}   (residuals {sw['residuals'][0]:.1e}, "
          f"{sw['residuals'][1]:.1e})\n")
    else:
        w("J~           0 everywhere\n")
    w("\n" + "".join(f"{h:>16}" for h in ("y", "V", "J", "J~", "V~")) + "\n")
    for s in rec["samples"]:
        w("".join(f"{fmt(s[k]):>16}" for k in ("y", "V", "J", "J_tilde", "V_tilde")) + "\n")


def cmd_solve(args, out):
    params, costs = build_instance(resolve(args))
    rec = solve_record(params, costs)
    if args.json:
        json.dump(rec, out, indent=2)
        out.write("\n")
    else:
        _print_solve(rec, out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["y", "V", "J", "J_tilde", "V_tilde"])
            for s in rec["samples"]:
                wr.writerow([fmt(s[k]) for k in ("y", "V", "J", "J_tilde", "V_tilde")])
    return EXIT_OK


# ------------------------------------------------------------------- sweep

def sweep_point(vals):
    """One sweep row as a dict; failures are recorded, never raised."""
    row = dict.fromkeys(SWEEP_COLUMNS, None)
    try:
        params, costs = build_instance(vals)
        sol = switching.solve_switching(params, costs)
        row.update(d_star=sol.single.d_star, b_star=sol.single.b_star, d_tilde=sol.d_tilde,
                   b_tilde=sol.b_tilde, regime=sol.regime.value, status="ok")
    except Exception as exc:  # a bad point must not abort the sweep
        row["status"] = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def sweep_rows(base: dict, field: str, lo: float, hi: float, n: int, jobs=None):
    if field not in MODEL_KEYS:
        raise UsageError(f"cannot sweep {field!r}; choose from {', '.join(MODEL_KEYS)}")
    if not lo < hi:
        raise UsageError("sweep needs lo < hi")
    if n < 2:
        raise UsageError("sweep needs n >= 2")
    values = np.linspace(lo, hi, n)
    points = [dict(base, **{field: float(v)}) for v in values]
    if jobs == 1:
        rows = [sweep_point(p) for p in points]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(sweep_point, points))  # map keeps sweep order
    for v, row in zip(values, rows):
        row["value"] = float(v)
    return rows


def write_sweep_csv(rows, field, fh):
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow([field] + SWEEP_COLUMNS[1:])
    for row in rows:
        wr.writerow([fmt(row[c]) for c in SWEEP_COLUMNS])


def cmd_sweep(args, out):
    vals = resolve(args)
    rows = sweep_rows(vals, args.field, args.lo, args.hi, args.n, args.jobs)
    if args.json:
        json.dump({"schema": SCHEMA, "field": args.field, "rows": rows}, out, indent=2)
        out.write("\n")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_sweep_csv(rows, args.field, fh)
    elif not args.json:
        write_sweep_csv(rows, args.field, out)
    bad = [r for r in rows if r["status"] != "ok"]
    for r in bad:
        print(f"sweep point {args.field}={fmt(r['value'])}: {r['status']}", file=sys.stderr)
    return EXIT_SOLVER if bad and len(bad) == len(rows) else EXIT_OK


# ---------------------------------------------------------------- simulate

def path_events(t, y, d, b, start_long=False, max_events=None):
    """Alternating entry/exit events at first y <= d then first y >= b.

    ``d=None`` means the position is never opened.  With ``max_events`` the
    scan stops after that many events (2 for a single round trip).
    """
    events = []
    long = start_long
    i = 0
    n = len(y)
    while i < n and (max_events is None or len(events) < max_events):
        if not long:
            if d is None:
                break
            hit = np.nonzero(y[i:] <= d)[0]
            kind = "entry"
        else:
            hit = np.nonzero(y[i:] >= b)[0]
            kind = "exit"
        if hit.size == 0:
            events.append({"event": kind, "time": None, "level": None, "status": "not reached"})
            break
        i += int(hit[0])
        events.append({"event": kind, "time": float(t[i]), "level": float(y[i]), "status": "ok"})
        long = not long
    return events


def cmd_simulate(args, out):
    params, costs = build_instance(resolve(args))
    sol = switching.solve_switching(params, costs)
    sc = sol.single
    dt = args.dt if args.dt is not None else 1.0 / 252.0
    cfg = montecarlo.SimConfig(dt=dt, horizon=args.horizon if args.horizon else 1.0, n_paths=2,
                               seed=args.seed or 0)
    y0 = args.y0 if args.y0 is not None else params.theta
    t, y = montecarlo.simulate_path(params, y0, cfg)
    events = {
        "single_cycle": {"levels": {"d_star": sc.d_star, "b_star": sc.b_star},
                         "events": path_events(t, y, sc.d_star, sc.b_star, max_events=2)},
        "switching": {"levels": {"d_tilde": sol.d_tilde, "b_tilde": sol.b_tilde},
                      "regime": sol.regime.value,
                      "events": path_events(t, y, sol.d_tilde,
                                            sol.b_tilde if sol.b_tilde else sc.b_star)},
    }
    rows = zip(t, y)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            _write_path(fh, rows, sc, sol)
    else:
        _write_path(out, rows, sc, sol)
    log = sys.stderr if not args.csv else out
    if args.json:
        json.dump({"schema": SCHEMA, "seed": cfg.seed, "dt": dt, "y0": y0, **events}, log, indent=2)
        log.write("\n")
    else:
        for name, block in events.items():
            for ev in block["events"]:
                when = "not reached" if ev["time"] is None else \
                    f"t={fmt(ev['time'])} (step {round(ev['time'] / dt)}) y={fmt(ev['level'])}"
                print(f"{name} {ev['event']}: {when}", file=log)
    return EXIT_OK


def _write_path(fh, rows, sc, sol):
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["time", "level", "d_star", "b_star", "d_tilde", "b_tilde"])
    for ti, yi in rows:
        wr.writerow([fmt(ti), fmt(yi), fmt(sc.d_star), fmt(sc.b_star), fmt(sol.d_tilde),
                     fmt(sol.b_tilde)])


# ------------------------------------------------------------------- check

def run_checks(params, costs, y0=0.15, n_paths=20_000, grid=50_000, tol=1e-6, dt=None,
               seed=0, corrupt=False, jobs=None):
    """All validation checks for one instance; returns a list of result dicts."""
    sol = switching.solve_switching(params, costs)
    if corrupt and sol.regime is switching.Regime.REPEATED:
        j, v = switching.candidate_from_thresholds(params, costs, sol.d_tilde, 1.01 * sol.b_tilde)
        marks = (sol.d_tilde, 1.01 * sol.b_tilde)
    else:
        j = lambda y: switching.value_j_tilde(sol, y)  # noqa: E731
        v = lambda y: switching.value_v_tilde(sol, y)  # noqa: E731
        marks = switching.thresholds_of(sol)
    checks = []

    top = max(marks)
    vi_grid = np.linspace(3.0 * top / 2000, 3.0 * top, 2000)
    rep = switching.check_variational_inequalities(j, v, params, costs, vi_grid, marks, tol)
    checks.append({"check": "variational inequalities", "passed": rep.passed,
                   "value": rep.max_residual, "limit": tol})

    if sol.regime is switching.Regime.REPEATED:
        jn, vn = switching.candidate_from_thresholds(params, costs, sol.d_tilde, 1.01 * sol.b_tilde)
        neg = switching.check_variational_inequalities(jn, vn, params, costs, vi_grid,
                                                       (sol.d_tilde, 1.01 * sol.b_tilde), tol)
        checks.append({"check": "perturbed b~ flagged", "passed": not neg.passed,
                       "value": neg.max_residual, "limit": tol})

    sc = sol.single
    tr = majorant.build_transformed_reward(params, costs, majorant.RewardKind.STOP, grid)
    mr = majorant.decreasing_smallest_concave_majorant(tr)
    checks.append({"check": "majorant b*", "passed": abs(mr.contact_y - sc.b_star) <= 1e-3,
                   "value": abs(mr.contact_y - sc.b_star), "limit": 1e-3})
    if not sc.trivial_start:
        ts = majorant.build_transformed_reward(params, costs, majorant.RewardKind.START, grid)
        ms = majorant.decreasing_smallest_concave_majorant(ts)
        checks.append({"check": "majorant d*", "passed": abs(ms.contact_y - sc.d_star) <= 1e-3,
                       "value": abs(ms.contact_y - sc.d_star), "limit": 1e-3})

    cfg = montecarlo.SimConfig.for_params(params, n_paths=n_paths, seed=seed, jobs=jobs,
                                          **({"dt": dt} if dt else {}))
    # F(Y_t) needs 1 - e^{-mu t} < 1/4 for the standard error to mean anything
    horizon = min(1.0, 0.9 * -np.log(0.75) / params.mu)
    mart = montecarlo.martingale_check(params, y0, horizon, cfg)
    checks.append(_mc_entry("martingale F", mart.f_mc, mart.f_target))
    if params.feller:
        checks.append(_mc_entry("martingale G", mart.g_mc, mart.g_target))
    else:
        # visits to a reflecting 0 cost G value: only the upper bound holds
        mc = mart.g_mc
        lim = 3.0 * mc.std_error
        checks.append({"check": "supermartingale G", "passed": mc.estimate <= mart.g_target + lim,
                       "value": mc.estimate, "target": mart.g_target,
                       "std_error": mc.std_error, "limit": lim})

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", montecarlo.CensoringWarning)
        if y0 < sc.b_star:
            mc = montecarlo.value_single_policy(params, costs, y0, None, sc.b_star, cfg)
            checks.append(_mc_entry("MC V", mc, single_cycle.value_v(sc, y0)))
        if not sc.trivial_start and sc.d_star < y0 < sc.b_star:
            mc = montecarlo.value_single_policy(params, costs, y0, sc.d_star, sc.b_star, cfg)
            checks.append(_mc_entry("MC J", mc, single_cycle.value_j(sc, y0)))
        if sol.regime is switching.Regime.REPEATED and sol.d_tilde < y0 < sol.b_tilde:
            mc = montecarlo.value_switching_policy(params, costs, y0, sol.d_tilde, sol.b_tilde, cfg)
            checks.append(_mc_entry("MC J~", mc, switching.value_j_tilde(sol, y0)))
    return checks


def _mc_entry(name, mc, target):
    slack = mc.truncation_bound
    return {"check": name, "passed": mc.within(float(target), 3.0, slack),
            "value": mc.estimate, "target": float(target), "std_error": mc.std_error,
            "limit": 3.0 * mc.std_error + slack}


def cmd_check(args, out):
    params, costs = build_instance(resolve(args))
    y0 = args.y0 if args.y0 is not None else params.theta * 0.75
    checks = run_checks(params, costs, y0=y0, n_paths=args.paths or 20_000,
                        grid=args.grid or 50_000, tol=args.tol or 1e-6, dt=args.dt,
                        seed=args.seed or 0, corrupt=args.corrupt, jobs=args.jobs)
    ok = all(c["passed"] for c in checks)
    if args.json:
        json.dump({"schema": SCHEMA, "passed": ok, "checks": checks}, out, indent=2)
        out.write("\n")
    else:
        for c in checks:
            extra = f" target {fmt(c['target'])} s.e. {c['std_error']:.2e}" if "target" in c else ""
            out.write(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']:<26} "
                      f"{fmt(c['value'])}{extra} (limit {c['limit']:.3g})\n")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["check", "passed", "value", "limit"])
            for c in checks:
                wr.writerow([c["check"], int(c["passed"]), fmt(c["value"]), fmt(c["limit"])])
    return EXIT_OK if ok else EXIT_VALIDATION


# ------------------------------------------------------------------ parser

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value file; flags override it")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--csv", metavar="PATH", help="write the table to PATH")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--paths", type=int, help="Monte Carlo paths (check: default 20000)")
    common.add_argument("--dt", type=float, help="time step (simulate: 1/252; check: 1e-3/mu)")
    common.add_argument("--grid", type=int, help="majorant grid points (default 50000)")
    common.add_argument("--tol", type=float, help="VI tolerance (default 1e-6)")
    common.add_argument("--jobs", type=int, help="worker count (default: all CPUs)")
    for k in MODEL_KEYS:
        common.add_argument("--" + k.replace("_", "-"), dest=k, type=float,
                            help=f"model value (default {DEFAULTS[k]})")

    p = _Parser(prog="cirswitch", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", parents=[common], help="thresholds and value samples",
                       description="Solve one instance.  CSV columns: y, V, J, J_tilde, V_tilde.")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", parents=[common], help="thresholds over a parameter range",
                       description="Sweep one model value.  CSV columns: <field>, d_star, b_star, "
                                   "d_tilde, b_tilde, regime, status (blank = not applicable).")
    s.add_argument("--field", required=True, choices=MODEL_KEYS)
    s.add_argument("--lo", type=float, required=True)
    s.add_argument("--hi", type=float, required=True)
    s.add_argument("--n", type=int, default=12)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("simulate", parents=[common], help="one seeded path with trade events",
                       description="Simulate a path and mark entries/exits for both strategies. "
                                   "CSV columns: time, level, d_star, b_star, d_tilde, b_tilde. "
                                   "Events go to stderr (or stdout when --csv is given).")
    s.add_argument("--y0", type=float, help="start level (default theta)")
    s.add_argument("--horizon", type=float, help="path length in time units (default 1)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("check", parents=[common], help="run the validation suite",
                       description="VI residuals, perturbation control, majorant agreement, "
                                   "martingale and Monte Carlo checks.  "
                                   "CSV columns: check, passed, value, limit.")
    s.add_argument("--y0", type=float, help="start level for MC checks (default 0.75 theta)")
    s.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_check)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except UsageError as exc:
        print(f"cirswitch: error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SolverError, BracketError, DegenerateGridError, SeriesConvergenceError,
            OverflowError) as exc:
        print(f"cirswitch: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except InvariantViolation as exc:
        print(f"cirswitch: invariant violated: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
