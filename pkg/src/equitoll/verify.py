"""Equilibrium verifiers.

Exogenous check: no group uses a path costlier than its cheapest one.
Endogenous check: no whole group can lower its refunded cost by rerouting,
once the refund policy reacts to the new flows.  The latter searches pure
shifts and a grid over each group's path simplex, so an empty result
certifies the equilibrium only at that resolution.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .assignment import (EquilibriumSolution, FlowPattern, _latency_arrays, _times, as_tolls,
                         total_revenue)
from .network import Path, Scenario, ScenarioError, enumerate_paths

GAIN_TOL = 1e-9
USED_FLOW_TOL = 1e-9

RefundFn = Callable[[Mapping[str, float], float], Mapping[str, float]]


class CertificationError(ScenarioError):
    """Path enumeration hit its cap, so no certificate can be issued."""


def _money_path_costs(s: Scenario, tau: np.ndarray, x: np.ndarray, g: int,
                      paths) -> np.ndarray:
    t = _times(_latency_arrays(s), x)
    w = s.groups[g].vot * t + tau
    return np.array([sum(w[s.edge_index(e)] for e in p.edges) for p in paths])


def group_cost_under_flow(s: Scenario, tolls, f: FlowPattern, group_id: str) -> float:
    """Per-user cost of a group, averaged over its used paths by flow.

    A group carrying no flow is charged its cheapest listed path.
    """
    tau = as_tolls(tolls).as_array(s)
    g = s.group_index(group_id)
    costs = _money_path_costs(s, tau, f.edge_flows, g, f.paths[g])
    flow = f.flows[g]
    total = flow.sum()
    if total <= 0:
        return float(costs.min()) if costs.size else 0.0
    return float(costs @ flow / total)


def _all_group_costs(s: Scenario, tau: np.ndarray, f: FlowPattern) -> dict[str, float]:
    t = _times(_latency_arrays(s), f.edge_flows)
    out = {}
    for g, grp in enumerate(s.groups):
        c = f.incidence[g].T @ (grp.vot * t + tau)
        flow = f.flows[g]
        total = flow.sum()
        out[grp.id] = float(c @ flow / total) if total > 0 else float(c.min()) if c.size else 0.0
    return out


def _paths_for(s: Scenario, group_id: str) -> tuple[Path, ...]:
    ps = enumerate_paths(s, group_id)
    if ps.truncated:
        raise CertificationError(f"path enumeration truncated for group {group_id}")
    return tuple(ps)


# --------------------------------------------------------------------------
# exogenous


@dataclass
class ExogenousReport:
    ok: bool
    gaps: dict[str, float]
    min_cost: dict[str, float]
    failing: list[str] = field(default_factory=list)

    def to_report(self) -> dict:
        return {"pass": self.ok, "gaps": self.gaps, "min_cost": self.min_cost,
                "failing": self.failing}


def verify_exogenous_equilibrium(s: Scenario, tolls, f: FlowPattern, tol: float = 1e-6,
                                 flow_tol: float = USED_FLOW_TOL) -> ExogenousReport:
    """Per group, the worst used-path cost minus the cheapest path cost.

    A path counts as used when it carries more than ``flow_tol * max(1, d_g)``.
    Passes when every gap is within ``tol * max(1, min cost)``.
    """
    tau = as_tolls(tolls).as_array(s)
    gaps, mins, failing = {}, {}, []
    for g, grp in enumerate(s.groups):
        every = _paths_for(s, grp.id)
        best = float(_money_path_costs(s, tau, f.edge_flows, g, every).min())
        used = [p for p, v in zip(f.paths[g], f.flows[g]) if v > flow_tol * max(1.0, grp.demand)]
        worst = float(_money_path_costs(s, tau, f.edge_flows, g, used).max()) if used else best
        gaps[grp.id] = max(0.0, worst - best)
        mins[grp.id] = best
        if gaps[grp.id] > tol * max(1.0, best):
            failing.append(grp.id)
    return ExogenousReport(not failing, gaps, mins, failing)


def verify_cost_identity(eq: EquilibriumSolution) -> float:
    """``|C - (sum_g mu_g d_g - revenue)|``; never raises."""
    paid = sum(eq.group_cost.get(g.id, 0.0) * g.demand for g in eq.scenario.groups)
    return abs(eq.total_cost - (paid - eq.revenue))


# --------------------------------------------------------------------------
# endogenous


@dataclass(frozen=True)
class DeviationReport:
    group: str
    split: dict[str, float]
    cost_before: float
    cost_after: float
    gain: float
    profitable: bool
    candidate: int = 0

    def to_report(self) -> dict:
        return {"group": self.group, "split": self.split, "cost_before": self.cost_before,
                "cost_after": self.cost_after, "gain": self.gain, "profitable": self.profitable}


def _grid_splits(n_paths: int, grid: int) -> list[tuple[int, ...]]:
    pure = [tuple(grid if i == j else 0 for i in range(n_paths)) for j in range(n_paths)]
    rest = [c for c in itertools.product(range(grid + 1), repeat=n_paths)
            if sum(c) == grid and c not in pure]
    return pure + rest


def deviation_candidates(s: Scenario, tolls, refund_policy: RefundFn, f: FlowPattern,
                         group_id: str, grid: int = 100) -> list[DeviationReport]:
    """Every candidate reassignment of one group, profitable or not."""
    if grid < 2:
        raise ValueError("grid must be >= 2")
    tolls = as_tolls(tolls)
    tau = tolls.as_array(s)
    grp = s.group(group_id)

    def refunded(pattern: FlowPattern) -> float:
        costs = _all_group_costs(s, tau, pattern)
        refunds = refund_policy(costs, total_revenue(tolls, pattern.edge_flows, s))
        return costs[group_id] - refunds[group_id]

    before = refunded(f)
    paths = _paths_for(s, group_id)
    out = []
    for k, split in enumerate(_grid_splits(len(paths), grid)):
        flows = np.array(split, dtype=float) * (grp.demand / grid)
        after = refunded(f.replace_group(group_id, paths, flows))
        gain = before - after
        out.append(DeviationReport(
            group_id, {str(p): float(v) for p, v in zip(paths, flows)},
            before, after, gain, gain > GAIN_TOL, k))
    return out


def verify_endogenous_equilibrium(s: Scenario, tolls, refund_policy: RefundFn, f: FlowPattern,
                                  grid: int = 100) -> list[DeviationReport]:
    """Profitable single-group deviations, ordered by group then candidate.

    Each group's demand is moved to every single path and to every split in
    steps of ``d_g / grid`` while the other groups keep their path flows; the
    refund policy is re-evaluated on the deviated flow.  An empty list means
    no profitable deviation exists at that resolution.
    """
    found = []
    for grp in s.groups:
        if len(_paths_for(s, grp.id)) < 2:
            continue
        found.extend(d for d in deviation_candidates(s, tolls, refund_policy, f, grp.id, grid)
                     if d.profitable)
    return found
