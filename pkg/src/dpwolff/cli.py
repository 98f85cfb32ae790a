"""Command-line front end.

Exit codes: 0 success, 1 domain-level failure (non-convergence, inadmissible
exponents where they are required), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

from . import fiber
from .bounds import verify_theorem
from .fiber import ConfigError
from .geometry import GeometryError
from .solver import SolverError, write_solution_csv
from .wolff import MeasureData, WolffError, wolff_constant, wolff_measure

logger = logging.getLogger("dpwolff")

SWEEP_HEADER = [
    "point_x", "point_y_or_r", "rho", "case", "u_x0", "inf_u",
    "W_pminus_rho", "W_pminus_2rho", "W_qplus_rho", "W_qplus_2rho",
    "c1", "c2", "c3", "c4", "flags", "f_scale",
]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config loading and overrides


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply dotted ``key=value`` overrides; list indices are integers."""
    raw = json.loads(json.dumps(raw))
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(item, "override must look like key.path=value")
        parts = key.split(".")
        if parts[0] == "layers" and "preset" in raw:
            raw = fiber.expand_preset(raw)
        node = raw
        for i, part in enumerate(parts[:-1]):
            nxt = parts[i + 1]
            if isinstance(node, list):
                node = node[int(part)]
                continue
            if part not in node or node[part] is None:
                node[part] = [] if nxt.isdigit() else {}
            node = node[part]
        last = parts[-1]
        try:
            if isinstance(node, list):
                node[int(last)] = _parse_value(value)
            else:
                node[last] = _parse_value(value)
        except (IndexError, ValueError, TypeError):
            raise ConfigError(key, "override path does not exist") from None
    return raw


def load(path, overrides=()) -> fiber.ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be an object")
    raw = apply_overrides(raw, overrides)
    return fiber.load_config(raw, base_dir=Path(path).parent)


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(obj):
    """Non-finite floats become the strings "inf", "-inf" and "nan"."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _json(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return str(v)


def sweep_rows(reports):
    rows = []
    for r in reports:
        if len(r.x0) == 1:
            px, py = "", r.x0[0]
        else:
            px, py = r.x0[0], r.x0[1]
        failing = [k for k, ok in r.flags.items() if not ok]
        flags = ";".join("!" + k for k in failing) or "ok"
        pot = r.potentials
        rows.append([
            _fmt(px), _fmt(py), _fmt(r.rho), r.case, _fmt(r.u_x0), _fmt(r.inf_u),
            _fmt(pot.get("W_pminus_rho")), _fmt(pot.get("W_pminus_2rho")),
            _fmt(pot.get("W_qplus_rho")), _fmt(pot.get("W_qplus_2rho")),
            *(_fmt(r.constants.get(c)) for c in ("c1", "c2", "c3", "c4")),
            flags, _fmt(r.f_scale),
        ])
    return rows


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _print_report(r, out=None):
    out = out or sys.stdout
    print(f"case {r.case}  x0={list(r.x0)}  rho={r.rho:g}"
          + (f"  rho0={r.rho0:.6g}" if r.rho0 is not None else ""), file=out)
    print(f"  u(x0)      {r.u_x0:.6g}", file=out)
    print(f"  inf_B u    {r.inf_u:.6g}", file=out)
    for k, v in r.potentials.items():
        print(f"  {k:<14} {v:.6g}", file=out)
    for k, w in r.windows.items():
        print(f"  window {k:<7} {w['value']:.6g} (raw {w['raw']:.3g})", file=out)
    for k, v in r.constants.items():
        print(f"  {k}_emp     {v:.6g}", file=out)
    for k, why in r.omitted.items():
        print(f"  {k}_emp     omitted: {why}", file=out)
    for k, v in r.flags.items():
        print(f"  flag {k:<22} {'yes' if v else 'NO'}", file=out)
    for m in r.messages:
        print(f"  warning: {m}", file=out)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    cfg = load(args.config, args.set)
    sc = fiber.build_scenario(cfg)
    rep = sc.validation
    s = sc.summary
    print(f"p- = {s.p_minus:g}  p+ = {s.p_plus:g}  q- = {s.q_minus:g}  q+ = {s.q_plus:g}"
          f"  alpha = {s.alpha:g}  n = {s.n}  [a] = {s.holder_seminorm:.6g}"
          + (" (sampled)" if sc.seminorm.sampled else ""))
    print(f"threshold min(p- + alpha, n(p- - 1)/(n - p-)) = {rep.threshold:.6g}")
    for clause, ok in rep.rows():
        print(f"  {'ok  ' if ok else 'FAIL'}  {clause}")
    print("valid" if rep.valid else "invalid")
    return 0 if rep.valid else 1


def cmd_solve(args) -> int:
    cfg = load(args.config, args.set)
    sc = fiber.build_scenario(cfg)
    result = sc.solve(1.0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / ".solution.csv.tmp"
    write_solution_csv(result, tmp)
    os.replace(tmp, out / "solution.csv")
    summary = {**result.summary(), "u_center": fiber.center_value(result),
               "exponents_valid": sc.validation.valid}
    atomic_write(out / "summary.json", _json(summary))
    print(f"converged={result.converged} iterations={result.iterations} "
          f"energy={result.energy:.10g} residual={result.weak_residual:.3e} "
          f"u_center={summary['u_center']:.6g}")
    return 0 if result.converged else 1


def _exponent(sc, choice):
    if choice == "p":
        return sc.summary.p_minus
    if choice == "q":
        return sc.summary.q_plus
    try:
        return float(choice)
    except ValueError:
        raise UsageError(f"--exponent must be p, q or a number, got {choice!r}") from None


def _measure(spec):
    path = Path(spec)
    text = path.read_text() if path.exists() else spec
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--measure is neither a file nor JSON: {exc}") from None
    atoms = [(a["location"], a["mass"]) for a in raw.get("atoms", [])]
    return atoms, bool(raw.get("include_density", False)), float(raw.get("beta", 1.0))


def cmd_wolff(args) -> int:
    cfg = load(args.config, args.set)
    sc = fiber.build_scenario(cfg)
    p = _exponent(sc, args.exponent)
    src = sc.density if sc.density is not None else sc.f
    w = cfg.wolff
    if args.measure:
        atoms, with_density, beta = _measure(args.measure)
        mu = MeasureData(src if with_density else None, atoms)
        res = wolff_measure(mu, args.point, args.radius, beta, p, sc.grid.n, w.j_max, w.tail_tol)
    else:
        res = wolff_constant(src, args.point, args.radius, p, sc.grid.n, w.j_max, w.tail_tol)
    print(f"value {res.value:.12g}  status {res.status}  J {res.truncation_index}"
          f"  tail {res.tail_bound:.3e}  partial {res.partial_sum:.12g}")
    for j, t in enumerate(res.terms):
        print(f"  j={j:<3d} rho={args.radius / 2 ** j:<12.6g} term={t:.6e}")
    if args.out:
        atomic_write(Path(args.out) / "wolff.json", _json(res.to_dict()))
    return 0


def _point_report(cfg, point, radius):
    sc = fiber.build_scenario(cfg)
    if not sc.validation.valid:
        return sc, None, None
    problem = sc.problem()
    sol = problem.solution(1.0)
    f, density = problem.data(1.0)
    rep = verify_theorem(sol, f, sc.fields, point, radius, sc.summary, density,
                         problem.wolff)
    return sc, sol, rep


def cmd_verify(args) -> int:
    cfg = load(args.config, args.set)
    point = args.point if args.point else list(cfg.evaluate.points[0])
    radius = args.radius if args.radius else cfg.evaluate.radii[0]
    sc, sol, rep = _point_report(cfg, point, radius)
    if rep is None:
        print("exponent condition fails; verification skipped", file=sys.stderr)
        return 1
    _print_report(rep)
    if args.out:
        atomic_write(Path(args.out) / "report.json", _json(rep.to_dict()))
    return 0 if sol.converged else 1


def cmd_sweep(args) -> int:
    cfg = load(args.config, args.set)
    ev = cfg.evaluate
    if not ev.points or not ev.radii or not ev.f_scales:
        raise UsageError("evaluate.points, evaluate.radii and evaluate.f_scales must be non-empty")
    report = fiber.run_scenario(cfg)
    out = Path(args.out)
    atomic_write(out / "sweep.csv", _csv(SWEEP_HEADER, sweep_rows(report.reports)))
    atomic_write(out / "sweep_summary.json",
                 _json({"summary": report.sweep_summary,
                        "verification_skipped": report.verification_skipped,
                        "solves": report.to_dict()["solves"]}))
    atomic_write(out / "report.json", _json(report.to_dict()))
    profile = fiber.ray_profile(report)
    atomic_write(out / "profile.csv",
                 _csv(["r", "u", "W"], [[_fmt(a), _fmt(b), _fmt(c)] for a, b, c in profile]))
    for name, stats in report.sweep_summary.items():
        print(f"{name}: n={stats['count']} min={stats['min']:.6g} max={stats['max']:.6g} "
              f"ratio={stats['ratio']:.4g}")
    if report.verification_skipped:
        print("exponent condition fails; verification skipped", file=sys.stderr)
        return 1
    ok = all(s["converged"] for s in report.solves.values())
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpwolff",
        description="Double-phase solver and Wolff-potential estimate checks on layered domains.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("config", help="scenario JSON file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, e.g. solver.max_iter=10 (repeatable)")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("validate", help="check the exponent condition")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve and write solution.csv and summary.json")
    common(p, out_required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("wolff", help="evaluate a Wolff potential of f or of a measure")
    common(p)
    p.add_argument("--point", type=float, nargs="+", required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--exponent", default="p", help="p (p-), q (q+) or a number")
    p.add_argument("--measure", help="JSON (or file) with atoms, include_density, beta")
    p.set_defaults(func=cmd_wolff)

    p = sub.add_parser("verify", help="check the pointwise estimate at one point")
    common(p)
    p.add_argument("--point", type=float, nargs="+")
    p.add_argument("--radius", type=float)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="verify over the configured points, radii and scales")
    common(p, out_required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GeometryError, SolverError, WolffError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
