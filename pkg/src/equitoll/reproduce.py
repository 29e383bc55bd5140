"""End-to-end checks on the built-in scenarios.

Each check returns a :class:`Check` holding a report payload and a list of
failed expectations (expected vs computed).  The CLI ``reproduce`` command
and the acceptance tests call these directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .assignment import (DEFAULT_TOLERANCE, TollVector, search_system_optimal,
                         simplex_compositions, solve_exogenous_equilibrium, total_system_cost)
from .cprr import (MaxMinPolicy, ProportionalPolicy, check_user_favorable,
                   ex_post_after_transfers, optimal_cprr_pipeline)
from .inequality import IncomeDistribution, gini
from .network import Scenario, builtin
from .verify import deviation_candidates, verify_endogenous_equilibrium

APPENDIX_G_TOLL = {"e1": 8.0}


@dataclass
class Check:
    name: str
    report: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def expect(self, cond: bool, what: str, expected, computed) -> None:
        if not cond:
            self.failures.append(f"{what}: expected {expected}, computed {computed}")

    def to_report(self) -> dict:
        return {"check": self.name, "pass": self.ok, "failures": self.failures, **self.report}


def prop1(s: Scenario | None = None, tolls=None, tolerance: float = DEFAULT_TOLERANCE) -> Check:
    """Uniform transfers shift every ex-post income by the same amount."""
    s = s or builtin("appendix-g")
    out = Check("prop1")
    eq0 = solve_exogenous_equilibrium(s, TollVector(), tolerance)
    cases = {"tolled": tolls if tolls is not None else APPENDIX_G_TOLL, "untolled": {}}
    for label, tau in cases.items():
        res = optimal_cprr_pipeline(s, tau, ProportionalPolicy, tolerance, untolled=eq0)
        shift = res.ex_post.incomes - res.ex_post_untolled.incomes
        lam = s.beta * res.budget / sum(g.demand for g in s.groups)
        fav = check_user_favorable(res.eq, res.scheme.refunds, eq0)
        out.report[label] = {"lambda": lam, "shift": dict(zip(s.group_ids, shift.tolist())),
                             "gini_before": res.gini_before, "gini_after": res.gini_after}
        out.expect(bool(np.all(np.abs(shift - lam) <= 1e-9 * max(1.0, lam))),
                   f"{label}: constant income shift", lam, shift.tolist())
        out.expect(lam >= 0, f"{label}: nonnegative shift", ">= 0", lam)
        out.expect(res.gini_after <= res.gini_before + 1e-12, f"{label}: Gini does not increase",
                   f"<= {res.gini_before}", res.gini_after)
        out.expect(fav.ok, f"{label}: user-favorable", "all groups", fav.violations)
    return out


def prop2(s: Scenario | None = None, tolled_edges=("e2", "e3"), lo: float = 0.0,
          hi: float = 2.0, points: int = 21, splits: int = 101,
          tolerance: float = DEFAULT_TOLERANCE) -> Check:
    """Two disjoint O-D pairs: no toll and refund split brings Gini below ex-ante."""
    s = s or builtin("appendix-d")
    out = Check("prop2")
    eq0 = solve_exogenous_equilibrium(s, TollVector(), tolerance)
    ex_ante = gini(IncomeDistribution.ex_ante(s))
    dem = {g.id: g.demand for g in s.groups}
    grid = np.linspace(lo, hi, points)
    min_gini, argmin, evaluated, skipped = math.inf, None, 0, 0
    for t1 in grid:
        for t2 in grid:
            tau = dict(zip(tolled_edges, (float(t1), float(t2))))
            eq = solve_exogenous_equilibrium(s, tau, tolerance)
            budget = eq0.total_cost - eq.total_cost
            if budget < -1e-12 * max(1.0, eq0.total_cost):
                skipped += 1   # no user-favorable scheme exists for this toll
                continue
            budget = max(budget, 0.0)
            for w in _simplex(len(s.groups), splits):
                c = {g: float(a) * budget / dem[g] for g, a in zip(s.group_ids, w)}
                val = gini(ex_post_after_transfers(s, eq0, c))
                evaluated += 1
                if val < min_gini:
                    min_gini, argmin = val, {"tolls": tau, "transfers": c}
    out.report.update({"gini_ex_ante": ex_ante, "min_gini_ex_post": min_gini, "argmin": argmin,
                       "schemes_evaluated": evaluated, "tolls_without_scheme": skipped})
    out.expect(min_gini > ex_ante, "ex-post Gini strictly above ex-ante", f"> {ex_ante}", min_gini)
    return out


def _simplex(n: int, points: int):
    """Weight vectors on the unit simplex in steps of ``1 / (points - 1)``."""
    steps = points - 1
    return simplex_compositions(steps, n) / steps


def prop4(s: Scenario | None = None, tolls=None, grid: int = 100,
          tolerance: float = DEFAULT_TOLERANCE) -> Check:
    """The refund-blind equilibrium admits a profitable group deviation."""
    s = s or builtin("appendix-g")
    tolls = tolls if tolls is not None else APPENDIX_G_TOLL
    out = Check("prop4")
    eq0 = solve_exogenous_equilibrium(s, TollVector(), tolerance)
    eq = solve_exogenous_equilibrium(s, tolls, tolerance)
    policy = MaxMinPolicy(s, eq0)
    devs = verify_endogenous_equilibrium(s, tolls, policy, eq.flows, grid)
    pure = next((d for d in deviation_candidates(s, tolls, policy, eq.flows, "M", grid)
                 if d.split.get("e1") == s.group("M").demand), None)
    out.report.update({
        "profitable_deviations": len(devs),
        "best": max(devs, key=lambda d: d.gain).to_report() if devs else None,
        "group_M_to_e1": pure.to_report() if pure else None,
    })
    out.expect(bool(devs), "a profitable deviation exists", "nonempty report", "empty")
    if pure is not None:
        out.expect(0.1 < pure.gain < 0.2, "gain of group M moving to edge e1", "in (0.1, 0.2)",
                   pure.gain)
    return out


def cor1(s: Scenario | None = None, tolls=None, tolerance: float = DEFAULT_TOLERANCE) -> Check:
    """Single O-D pair with value-of-time proportional to income."""
    s = s or builtin("appendix-g")
    tolls = tolls if tolls is not None else APPENDIX_G_TOLL
    out = Check("cor1")
    res = optimal_cprr_pipeline(s, tolls, tolerance=tolerance)
    out.report.update({"gini_ex_ante": res.gini_ex_ante, "gini_ex_post_untolled": res.gini_before,
                       "gini_after": res.gini_after})
    out.expect(abs(res.gini_before - res.gini_ex_ante) <= 1e-12, "untolled ex-post Gini equals ex-ante",
               res.gini_ex_ante, res.gini_before)
    out.expect(res.gini_after <= min(res.gini_before, res.gini_ex_ante) + 1e-12,
               "optimal scheme Gini at most both", min(res.gini_before, res.gini_ex_ante),
               res.gini_after)
    return out


def lemma3(s: Scenario | None = None, edge: str = "e1", lo: float = 0.0, hi: float = 20.0,
           points: int = 50, tolerance: float = DEFAULT_TOLERANCE) -> Check:
    """Lower total cost never yields a higher optimal-scheme Gini."""
    s = s or builtin("appendix-g")
    out = Check("lemma3")
    eq0 = solve_exogenous_equilibrium(s, TollVector(), tolerance)
    rows = []
    for t in np.linspace(lo, hi, points):
        eq = solve_exogenous_equilibrium(s, {edge: float(t)}, tolerance)
        if eq.total_cost > eq0.total_cost:
            continue
        res = optimal_cprr_pipeline(s, {edge: float(t)}, tolerance=tolerance, untolled=eq0, tolled=eq)
        rows.append((eq.total_cost, res.gini_after, float(t)))
    rows.sort()
    worst = 0.0
    for (c_a, g_a, _), (c_b, g_b, _) in zip(rows, rows[1:]):
        worst = max(worst, g_a - g_b)
    out.report.update({"kept_tolls": len(rows), "max_violation": worst,
                       "sweep": [{"toll": t, "C_tau": c, "gini_after": g} for c, g, t in rows]})
    out.expect(worst <= 1e-9, "Gini nonincreasing as total cost falls", "<= 1e-9", worst)
    return out


def cost_minimizing_toll(s: Scenario, edge: str = "e1", lo: float = 0.0, hi: float = 20.0,
                         points: int = 201, tolerance: float = DEFAULT_TOLERANCE) -> tuple[float, float]:
    """Grid search for the toll on ``edge`` minimizing total cost, then a bounded refinement."""
    grid = np.linspace(lo, hi, points)

    def cost(t: float) -> float:
        return solve_exogenous_equilibrium(s, {edge: float(t)}, tolerance).total_cost

    costs = [cost(t) for t in grid]
    k = int(np.argmin(costs))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
    res = minimize_scalar(cost, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    if res.fun <= costs[k]:
        return float(res.x), float(res.fun)
    return float(grid[k]), float(costs[k])


def lemma4(s: Scenario | None = None, edge: str = "e1", grid: int = 100,
           tolerance: float = DEFAULT_TOLERANCE) -> Check:
    """At the cost-minimizing toll no group gains by deviating."""
    s = s or builtin("appendix-g")
    out = Check("lemma4")
    toll, c_min = cost_minimizing_toll(s, edge, tolerance=tolerance)
    eq0 = solve_exogenous_equilibrium(s, TollVector(), tolerance)
    eq = solve_exogenous_equilibrium(s, {edge: toll}, tolerance)
    so = search_system_optimal(s, 200)
    devs = verify_endogenous_equilibrium(s, {edge: toll}, MaxMinPolicy(s, eq0), eq.flows, grid)
    out.report.update({"toll": toll, "C_tau": c_min, "C_grid_optimum": total_system_cost(s, so),
                       "profitable_deviations": [d.to_report() for d in devs]})
    out.expect(not devs, "no profitable deviation at the cost-minimizing toll", "empty report",
               f"{len(devs)} deviations")
    return out


CHECKS = {"prop1": prop1, "prop2": prop2, "prop4": prop4, "cor1": cor1, "lemma3": lemma3,
          "lemma4": lemma4}
