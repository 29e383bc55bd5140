"""Congestion pricing with revenue refunding (CPRR).

A scheme pairs tolls with per-group refunds that hand the collected revenue
back.  Writing the refund as ``r_g = mu_g(tau) - mu_g(0) + c_g`` splits it
into "undo the group's cost change" and a transfer ``c_g``; the transfers
are funded by the cost saving ``C_0 - C_tau`` of the tolled equilibrium.
Max-min (water-filling) transfers give the lowest Gini among user-favorable
schemes for a given toll.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .assignment import (DEFAULT_TOLERANCE, EquilibriumSolution, TollVector, as_tolls,
                         simplex_compositions, solve_exogenous_equilibrium)
from .inequality import IncomeDistribution, ex_post_income, gini
from .network import Scenario

POOL_REL_TOL = 1e-9
VALIDITY_REL_TOL = 1e-9


class CprrError(ValueError):
    pass


class _GroupVector(Mapping[str, float]):
    def __init__(self, values: Mapping[str, float]):
        self._v = {str(k): float(v) for k, v in values.items()}

    def __getitem__(self, g: str) -> float:
        return self._v[g]

    def __iter__(self) -> Iterator[str]:
        return iter(self._v)

    def __len__(self) -> int:
        return len(self._v)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._v!r})"

    def to_dict(self) -> dict[str, float]:
        return dict(self._v)

    def weighted_sum(self, demands: Mapping[str, float]) -> float:
        return math.fsum(self._v[g] * float(demands[g]) for g in self._v)


class TransferVector(_GroupVector):
    """Per-user transfer ``c_g >= 0`` for each group."""

    def __init__(self, values: Mapping[str, float]):
        super().__init__(values)
        bad = [g for g, v in self._v.items() if not v >= 0]
        if bad:
            raise CprrError(f"negative transfer for group(s) {', '.join(bad)}")


class RefundVector(_GroupVector):
    """Per-user refund ``r_g``; sign is unrestricted, validity is checked separately."""

    def validity_residual(self, demands: Mapping[str, float], revenue: float) -> float:
        return abs(self.weighted_sum(demands) - revenue)

    def is_valid(self, demands: Mapping[str, float], revenue: float,
                 rel_tol: float = VALIDITY_REL_TOL) -> bool:
        return self.validity_residual(demands, revenue) <= rel_tol * max(1.0, abs(revenue))


@dataclass(frozen=True)
class CprrScheme:
    tolls: TollVector
    refunds: RefundVector
    transfers: TransferVector
    alphas: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.alphas is not None:
            _check_alphas(self.alphas)

    def to_report(self) -> dict:
        out = {"tolls": self.tolls.to_dict(), "refunds": self.refunds.to_dict(),
               "transfers": self.transfers.to_dict()}
        if self.alphas is not None:
            out["alphas"] = dict(self.alphas)
        return out


def _check_alphas(alphas: Mapping[str, float]) -> None:
    if any(not a >= 0 for a in alphas.values()):
        raise CprrError("refund weights must be nonnegative")
    if abs(math.fsum(alphas.values()) - 1.0) > 1e-12:
        raise CprrError("refund weights must sum to one")


def _demands(eq: EquilibriumSolution) -> dict[str, float]:
    return {g.id: g.demand for g in eq.scenario.groups}


def cost_saving(eq_tolled: EquilibriumSolution, eq_untolled: EquilibriumSolution) -> float:
    return eq_untolled.total_cost - eq_tolled.total_cost


# --------------------------------------------------------------------------
# refund constructions


def pareto_refund(eq_tolled: EquilibriumSolution, eq_untolled: EquilibriumSolution,
                  alpha: Mapping[str, float] | None = None) -> RefundVector:
    """Refunds leaving every group at its untolled cost plus a share of the saving.

    ``alpha`` splits the saving between groups and defaults to demand shares.
    """
    dem = _demands(eq_tolled)
    saving = cost_saving(eq_tolled, eq_untolled)
    if saving < -1e-9 * max(1.0, eq_untolled.total_cost):
        raise CprrError("tolls do not reduce total cost")
    saving = max(saving, 0.0)
    if alpha is None:
        total = math.fsum(dem.values())
        alpha = {g: d / total for g, d in dem.items()}
    _check_alphas(alpha)
    return RefundVector({
        g: eq_tolled.group_cost[g] - eq_untolled.group_cost[g] + alpha.get(g, 0.0) * saving / d
        for g, d in dem.items()
    })


def max_min_transfers(incomes, demands, budget: float,
                      ids: Sequence[str] | None = None) -> TransferVector:
    """Water-filling: lift the poorest pool until it meets the next level or money runs out.

    ``incomes`` and ``demands`` are sequences (group order given by ``ids``)
    or mappings keyed by group id.  Incomes within a relative 1e-9 of the
    minimum are pooled.
    """
    if isinstance(incomes, IncomeDistribution):
        ids, demands, incomes = incomes.ids, incomes.demands, incomes.incomes
    if isinstance(incomes, Mapping):
        ids = list(incomes)
        q = np.array([float(incomes[g]) for g in ids])
        d = np.array([float(demands[g]) for g in ids])
    else:
        q = np.array(incomes, dtype=float)
        d = np.array(demands, dtype=float)
        ids = list(ids) if ids is not None else [f"g{i}" for i in range(q.size)]
    if budget < 0:
        raise CprrError("transfer budget must be nonnegative")
    if np.any(q <= 0) or np.any(d <= 0):
        raise CprrError("incomes and demands must be positive")

    level = q.copy()
    c = np.zeros_like(q)
    remaining = float(budget)
    while remaining > 0:
        low = level.min()
        pool = level <= low + POOL_REL_TOL * abs(low)
        weight = d[pool].sum()
        above = level[~pool]
        step = above.min() - low if above.size else math.inf
        if remaining / weight <= step:
            c[pool] += remaining / weight
            remaining = 0.0
        else:
            c[pool] += step
            level[pool] = above.min()
            remaining -= step * weight
    return TransferVector(dict(zip(ids, c.tolist())))


def transfers_to_refunds(eq_tolled: EquilibriumSolution, eq_untolled: EquilibriumSolution,
                         transfers: Mapping[str, float], rel_tol: float = 1e-6) -> RefundVector:
    dem = _demands(eq_tolled)
    budget = cost_saving(eq_tolled, eq_untolled)
    spent = math.fsum(transfers.get(g, 0.0) * d for g, d in dem.items())
    if abs(spent - budget) > rel_tol * max(1.0, abs(budget)):
        raise CprrError(f"transfers spend {spent!r} but the budget is {budget!r}")
    return RefundVector({
        g: eq_tolled.group_cost[g] - eq_untolled.group_cost[g] + transfers.get(g, 0.0)
        for g in dem
    })


@dataclass(frozen=True)
class FavorabilityReport:
    ok: bool
    slack: dict[str, float]
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def check_user_favorable(eq_tolled: EquilibriumSolution, refunds: Mapping[str, float],
                         eq_untolled: EquilibriumSolution, tol: float = 1e-9) -> FavorabilityReport:
    """Every group must pay at most its untolled cost once refunded."""
    slack = {}
    bad = []
    for g in eq_tolled.scenario.group_ids:
        s = eq_untolled.group_cost[g] - (eq_tolled.group_cost[g] - refunds.get(g, 0.0))
        slack[g] = s
        if s < -tol:
            bad.append(g)
    return FavorabilityReport(not bad, slack, bad)


# --------------------------------------------------------------------------
# brute force oracle


def brute_force_min_gini_transfers(incomes, demands, budget: float, grid: int = 300,
                                   ids: Sequence[str] | None = None) -> TransferVector:
    """Gini-minimizing split of ``budget`` over at most three groups, on a grid.

    Each group receives an integer number of ``budget / grid`` slices.  Ties
    go to the lexicographically first split.
    """
    q = np.asarray(incomes, dtype=float)
    d = np.asarray(demands, dtype=float)
    ids = list(ids) if ids is not None else [f"g{i}" for i in range(q.size)]
    if q.size > 3:
        raise CprrError("brute-force oracle supports at most three groups")
    if grid < 10:
        raise ValueError("grid must be >= 10")
    if budget < 0:
        raise CprrError("transfer budget must be nonnegative")
    if budget == 0:
        return TransferVector(dict.fromkeys(ids, 0.0))
    shares = simplex_compositions(grid, q.size) * (budget / grid)
    c = shares / d
    post = q + c
    total = d.sum()
    mean = (post @ d) / total
    diffs = np.abs(post[:, :, None] - post[:, None, :]) * np.outer(d, d)
    w = diffs.sum(axis=(1, 2)) / (2 * total**2 * mean)
    best = int(np.argmin(w))
    return TransferVector(dict(zip(ids, c[best].tolist())))


def gini_grid_lipschitz(incomes, demands, budget: float, grid: int) -> float:
    """Largest Gini change from moving one ``budget / grid`` slice between groups."""
    q = np.asarray(incomes, dtype=float)
    d = np.asarray(demands, dtype=float)
    mean_after = (q @ d + budget) / d.sum()
    return 2.0 * (budget / grid) / (d.sum() * mean_after)


# --------------------------------------------------------------------------
# refund policies


class RefundPolicy:
    """Refunds as a function of the groups' costs and the revenue only.

    A policy remembers the untolled baseline.  Given per-user group costs
    under some flow and the revenue collected there, it hands out
    ``r_g = mu_g - mu_g(0) + c_g`` where the transfers ``c`` divide the
    saving ``C_0 - (sum_g mu_g d_g - revenue)``.
    """

    name = "policy"

    def __init__(self, scenario: Scenario, untolled: EquilibriumSolution):
        self.scenario = scenario
        self.untolled = untolled
        self.demand = {g.id: g.demand for g in scenario.groups}
        self.baseline_income = ex_post_income(scenario, untolled.group_cost)

    def budget(self, group_costs: Mapping[str, float], revenue: float) -> float:
        paid = math.fsum(group_costs[g] * d for g, d in self.demand.items())
        return self.untolled.total_cost - (paid - revenue)

    def transfers(self, budget: float) -> Mapping[str, float]:
        raise NotImplementedError

    def __call__(self, group_costs: Mapping[str, float], revenue: float) -> RefundVector:
        c = self.transfers(self.budget(group_costs, revenue))
        return RefundVector({g: group_costs[g] - self.untolled.group_cost[g] + c[g]
                             for g in self.demand})

    def _shortfall(self, budget: float) -> dict[str, float]:
        # a flow costlier than the untolled one: spread the deficit per user
        per_user = budget / math.fsum(self.demand.values())
        return dict.fromkeys(self.demand, per_user)


class MaxMinPolicy(RefundPolicy):
    name = "maxmin"

    def transfers(self, budget: float) -> Mapping[str, float]:
        if budget < 0:
            return self._shortfall(budget)
        base = self.baseline_income
        # ex-post income rises by beta * c, so water-fill in units of q / beta
        return max_min_transfers(base.incomes / self.scenario.beta, base.demands, budget, base.ids)


class AlphaPolicy(RefundPolicy):
    name = "custom-alpha"

    def __init__(self, scenario: Scenario, untolled: EquilibriumSolution,
                 alphas: Mapping[str, float]):
        super().__init__(scenario, untolled)
        missing = set(alphas) - set(self.demand)
        if missing:
            raise CprrError(f"weights given for unknown group(s) {', '.join(sorted(missing))}")
        self.alphas = {g: float(alphas.get(g, 0.0)) for g in self.demand}
        _check_alphas(self.alphas)

    def transfers(self, budget: float) -> Mapping[str, float]:
        if budget < 0:
            return self._shortfall(budget)
        return TransferVector({g: self.alphas[g] * budget / d for g, d in self.demand.items()})


class ProportionalPolicy(AlphaPolicy):
    """Equal transfer per user (weights proportional to demand)."""

    name = "proportional"

    def __init__(self, scenario: Scenario, untolled: EquilibriumSolution):
        total = math.fsum(g.demand for g in scenario.groups)
        super().__init__(scenario, untolled, {g.id: g.demand / total for g in scenario.groups})


# --------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class PipelineResult:
    scheme: CprrScheme
    eq: EquilibriumSolution
    eq_untolled: EquilibriumSolution
    ex_ante: IncomeDistribution
    ex_post_untolled: IncomeDistribution
    ex_post: IncomeDistribution
    gini_ex_ante: float
    gini_before: float
    gini_after: float

    @property
    def budget(self) -> float:
        return cost_saving(self.eq, self.eq_untolled)

    def to_report(self) -> dict:
        ids = self.eq.scenario.group_ids
        return {
            **self.scheme.to_report(),
            "cost_before": dict(self.eq_untolled.group_cost),
            "cost_after": {g: self.eq.group_cost[g] - self.scheme.refunds[g] for g in ids},
            "tolled_cost": dict(self.eq.group_cost),
            "revenue": self.eq.revenue,
            "C0": self.eq_untolled.total_cost,
            "C_tau": self.eq.total_cost,
            "budget": self.budget,
            "income_ex_ante": self.ex_ante.to_report(),
            "income_ex_post": self.ex_post.to_report(),
            "gini_ex_ante": self.gini_ex_ante,
            "gini_before": self.gini_before,
            "gini_after": self.gini_after,
        }


def optimal_cprr_pipeline(s: Scenario, tolls=None, policy: type[RefundPolicy] | None = None,
                          tolerance: float = DEFAULT_TOLERANCE,
                          untolled: EquilibriumSolution | None = None,
                          tolled: EquilibriumSolution | None = None,
                          **policy_args) -> PipelineResult:
    """Solve both equilibria, water-fill the saving, and assemble the scheme.

    ``policy`` defaults to :class:`MaxMinPolicy`; precomputed equilibria may
    be passed to skip the solves.
    """
    tolls = as_tolls(tolls)
    eq0 = untolled or solve_exogenous_equilibrium(s, TollVector(), tolerance)
    eq = tolled or solve_exogenous_equilibrium(s, tolls, tolerance)
    if eq.total_cost > eq0.total_cost + 1e-9 * max(1.0, eq0.total_cost):
        raise CprrError("tolls do not reduce total cost")
    budget = max(cost_saving(eq, eq0), 0.0)

    pol = (policy or MaxMinPolicy)(s, eq0, **policy_args)
    transfers = TransferVector(pol.transfers(budget))
    refunds = RefundVector({g: eq.group_cost[g] - eq0.group_cost[g] + transfers[g]
                            for g in s.group_ids})
    alphas = getattr(pol, "alphas", None)
    scheme = CprrScheme(tolls, refunds, transfers, alphas)

    fav = check_user_favorable(eq, refunds, eq0, tol=1e-9 * max(1.0, eq0.total_cost))
    if not fav.ok:
        raise AssertionError(f"scheme is not user-favorable for {fav.violations}")
    # refunds are built from group costs, so they inherit the cost-identity error
    scale = max(1.0, eq0.total_cost, abs(eq.revenue))
    if refunds.validity_residual(_demands(eq), eq.revenue) > 1e-8 * scale:
        raise AssertionError("refunds do not hand back the collected revenue")

    ex_ante = IncomeDistribution.ex_ante(s)
    before = ex_post_income(s, eq0.group_cost)
    after = ex_post_income(s, {g: eq.group_cost[g] - refunds[g] for g in s.group_ids})
    return PipelineResult(scheme, eq, eq0, ex_ante, before, after,
                          gini(ex_ante), gini(before), gini(after))


def ex_post_after_transfers(s: Scenario, eq_untolled: EquilibriumSolution,
                            transfers: Mapping[str, float]) -> IncomeDistribution:
    """Ex-post incomes of a scheme described only by its transfers."""
    return ex_post_income(s, {g: eq_untolled.group_cost[g] - transfers[g] for g in s.group_ids})


__all__ = [
    "AlphaPolicy", "CprrError", "CprrScheme", "FavorabilityReport", "MaxMinPolicy",
    "PipelineResult", "ProportionalPolicy", "RefundPolicy", "RefundVector", "TransferVector",
    "brute_force_min_gini_transfers", "check_user_favorable", "cost_saving",
    "ex_post_after_transfers", "gini_grid_lipschitz", "max_min_transfers",
    "optimal_cprr_pipeline", "pareto_refund", "transfers_to_refunds",
]
