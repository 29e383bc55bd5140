"""Command-line front end.

Every subcommand prints one JSON report (sorted keys) on standard output.
Exit status: 0 success, 1 a verification failed, 2 bad input.  Wall-clock
timing goes to standard error so reports stay byte-identical across runs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import Sequence

from . import reproduce as repro
from .assignment import (DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE, ConvergenceError, TollVector,
                         UnsupportedScenarioError, search_system_optimal,
                         solve_exogenous_equilibrium, total_system_cost)
from .cprr import (AlphaPolicy, CprrError, MaxMinPolicy, ProportionalPolicy,
                   optimal_cprr_pipeline)
from .inequality import IncomeDistribution, IncomeDomainError, ex_post_income, gini
from .network import (BUILTIN_SCENARIOS, Scenario, ScenarioError, dump_scenario, load_scenario)
from .verify import verify_cost_identity, verify_endogenous_equilibrium, verify_exogenous_equilibrium

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _pairs(items: Sequence[str] | None, what: str) -> dict[str, float]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InputError(f"{what} must look like id=value, got {item!r}")
        try:
            out[key] = float(value)
        except ValueError:
            raise InputError(f"{what} value for {key} is not a number: {value!r}") from None
    return out


def _scenario(ref: str) -> Scenario:
    if ref in BUILTIN_SCENARIOS:
        return load_scenario(ref)
    try:
        text = Path(ref).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read scenario {ref!r}: {exc.strerror}") from None
    return load_scenario(text)


def _tolls(args, s: Scenario) -> TollVector:
    try:
        tolls = TollVector(_pairs(args.toll, "toll"))
        tolls.as_array(s)
    except (ValueError, KeyError) as exc:
        raise InputError(str(exc).strip("'\"")) from None
    return tolls


def _policy_class(args):
    kind, *rest = args.policy
    if kind == "maxmin" and not rest:
        return MaxMinPolicy, {}
    if kind == "proportional" and not rest:
        return ProportionalPolicy, {}
    if kind == "custom-alpha":
        return AlphaPolicy, {"alphas": _pairs(rest, "alpha")}
    raise InputError("policy must be maxmin, proportional or custom-alpha G=ALPHA ...")


def _policy(args, s: Scenario, eq0):
    cls, extra = _policy_class(args)
    return cls(s, eq0, **extra)


def _solve(args, s: Scenario, tolls):
    return solve_exogenous_equilibrium(s, tolls, args.tolerance, args.max_iters)


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(args, s):
    eq = _solve(args, s, _tolls(args, s))
    return EXIT_OK, {"equilibrium": eq.to_report(),
                     "cost_identity_residual": verify_cost_identity(eq)}


def cmd_refund(args, s):
    tolls = _tolls(args, s)
    eq0 = _solve(args, s, TollVector())
    policy, extra = _policy_class(args)
    res = optimal_cprr_pipeline(s, tolls, policy, args.tolerance, untolled=eq0,
                                tolled=_solve(args, s, tolls), **extra)
    return EXIT_OK, {"policy": args.policy[0], "scheme": res.to_report()}


def cmd_gini(args, s):
    eq0 = _solve(args, s, TollVector())
    ex_ante = IncomeDistribution.ex_ante(s)
    before = ex_post_income(s, eq0.group_cost)
    out = {"gini_ex_ante": gini(ex_ante), "gini_ex_post_untolled": gini(before),
           "income_ex_ante": ex_ante.to_report(), "income_ex_post_untolled": before.to_report()}
    tolls = _tolls(args, s)
    if len(tolls):
        policy, extra = _policy_class(args)
        res = optimal_cprr_pipeline(s, tolls, policy, args.tolerance, untolled=eq0, **extra)
        out.update({"gini_after": res.gini_after, "income_ex_post": res.ex_post.to_report()})
    return EXIT_OK, out


def cmd_verify_exo(args, s):
    tolls = _tolls(args, s)
    eq = _solve(args, s, tolls)
    rep = verify_exogenous_equilibrium(s, tolls, eq.flows, args.path_tol)
    residual = verify_cost_identity(eq)
    ok = rep.ok and residual <= 1e-8 * max(1.0, eq.total_cost)
    return (EXIT_OK if ok else EXIT_FAILED), {
        "pass": ok, "exogenous": rep.to_report(), "cost_identity_residual": residual,
        "equilibrium": eq.to_report()}


def cmd_verify_endo(args, s):
    tolls = _tolls(args, s)
    eq0 = _solve(args, s, TollVector())
    eq = _solve(args, s, tolls)
    policy = _policy(args, s, eq0)
    devs = verify_endogenous_equilibrium(s, tolls, policy, eq.flows, args.grid)
    best = {}
    for d in devs:
        if d.group not in best or d.gain > best[d.group].gain:
            best[d.group] = d
    failed = bool(devs) and args.expect_equilibrium
    return (EXIT_FAILED if failed else EXIT_OK), {
        "endogenous_equilibrium": not devs,
        "profitable_deviations": len(devs),
        "best_deviation_per_group": {g: d.to_report() for g, d in best.items()},
        "deviations": [d.to_report() for d in devs],
        "equilibrium": eq.to_report()}


def cmd_so_search(args, s):
    f = search_system_optimal(s, args.grid)
    eq0 = _solve(args, s, TollVector())
    return EXIT_OK, {"grid": args.grid, "total_cost": total_system_cost(s, f),
                     "untolled_total_cost": eq0.total_cost, **f.to_report()}


def cmd_reproduce(args, s):
    check = repro.CHECKS[args.name]()
    return (EXIT_OK if check.ok else EXIT_FAILED), check.to_report()


COMMANDS = {
    "solve": (cmd_solve, "solve the exogenous equilibrium under tolls"),
    "refund": (cmd_refund, "build the refund scheme for a toll vector"),
    "gini": (cmd_gini, "ex-ante and ex-post Gini coefficients"),
    "verify-exo": (cmd_verify_exo, "check the exogenous equilibrium conditions"),
    "verify-endo": (cmd_verify_endo, "search for profitable group deviations"),
    "so-search": (cmd_so_search, "grid search for the minimum total-cost flow"),
    "reproduce": (cmd_reproduce, "run a built-in end-to-end check"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", default="appendix-g",
                        help="scenario file or built-in name (%(default)s)")
    common.add_argument("--toll", nargs="+", action="extend", metavar="EDGE=VALUE",
                        help="per-edge tolls; unlisted edges are untolled")
    common.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    common.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERATIONS)
    common.add_argument("--grid", type=int, default=100)
    common.add_argument("--policy", nargs="+", default=["maxmin"], metavar="POLICY",
                        help="maxmin | proportional | custom-alpha G=ALPHA ...")
    common.add_argument("--format", choices=("structured", "csv"), default="structured")
    common.add_argument("--expect-equilibrium", action="store_true",
                        help="exit 1 when a profitable deviation is found")
    common.add_argument("--path-tol", type=float, default=1e-6,
                        help="relative path-cost gap accepted by verify-exo")

    parser = argparse.ArgumentParser(prog="equitoll", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=helptext)
        if name == "reproduce":
            p.add_argument("name", choices=sorted(repro.CHECKS))
    return parser


def _check_finite(obj, where="report"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError(f"non-finite number at {where}")
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_finite(v, f"{where}[{i}]")


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def render(report: dict, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in _flatten(report):
            if isinstance(v, float):
                v = repr(v)
            elif not isinstance(v, str):
                v = json.dumps(v)
            w.writerow([k, v])
        return buf.getvalue()
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    started = time.perf_counter()
    try:
        if args.tolerance <= 0 or args.max_iters < 1 or args.grid < 2:
            raise InputError("--tolerance must be > 0, --max-iters >= 1 and --grid >= 2")
        if args.command == "reproduce":
            s = None
        else:
            s = _scenario(args.scenario)
        handler = COMMANDS[args.command][0]
        code, payload = handler(args, s)
    except (InputError, ScenarioError, UnsupportedScenarioError, IncomeDomainError,
            CprrError) as exc:
        print(f"equitoll: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        print(f"equitoll: {exc}", file=sys.stderr)
        return EXIT_FAILED

    report = {"command": args.command, "report": payload}
    if s is not None:
        report["scenario_digest"] = hashlib.sha256(dump_scenario(s).encode()).hexdigest()
        report["solver"] = {"tolerance": args.tolerance, "max_iterations": args.max_iters}
    _check_finite(report)
    sys.stdout.write(render(report, args.format))
    print(f"equitoll: {args.command} took {time.perf_counter() - started:.3f}s", file=sys.stderr)
    if code == EXIT_FAILED and args.command == "reproduce":
        for line in payload.get("failures", []):
            print(f"equitoll: {line}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
