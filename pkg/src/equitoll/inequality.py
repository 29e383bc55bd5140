"""Income distributions, ex-post incomes and the discrete Gini coefficient."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .network import Scenario


class IncomeDomainError(ValueError):
    pass


@dataclass(frozen=True)
class IncomeDistribution:
    """Per-group income with demand weights (number of users in the group)."""

    ids: tuple[str, ...]
    incomes: np.ndarray
    demands: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.incomes, dtype=float).copy()
        d = np.asarray(self.demands, dtype=float).copy()
        if q.shape != d.shape or q.ndim != 1 or len(self.ids) != q.size:
            raise ValueError("ids, incomes and demands must have matching length")
        if np.any(d <= 0):
            raise ValueError("demand weights must be positive")
        q.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "incomes", q)
        object.__setattr__(self, "demands", d)

    @classmethod
    def from_arrays(cls, incomes: Sequence[float], demands: Sequence[float] | None = None,
                    ids: Sequence[str] | None = None) -> "IncomeDistribution":
        incomes = list(incomes)
        if demands is None:
            demands = [1.0] * len(incomes)
        if ids is None:
            ids = [f"g{i}" for i in range(len(incomes))]
        return cls(tuple(ids), np.asarray(incomes, float), np.asarray(demands, float))

    @classmethod
    def ex_ante(cls, s: Scenario) -> "IncomeDistribution":
        return cls(s.group_ids, np.array([g.income for g in s.groups]),
                   np.array([g.demand for g in s.groups]))

    def __getitem__(self, group_id: str) -> float:
        return float(self.incomes[self.ids.index(group_id)])

    def as_dict(self) -> dict[str, float]:
        return {g: float(q) for g, q in zip(self.ids, self.incomes)}

    def to_report(self) -> dict:
        return {g: {"income": float(q), "demand": float(d)}
                for g, q, d in zip(self.ids, self.incomes, self.demands)}

    def with_incomes(self, incomes) -> "IncomeDistribution":
        return IncomeDistribution(self.ids, np.asarray(incomes, float), self.demands)


def mean_income(q: IncomeDistribution) -> float:
    return float(np.dot(q.incomes, q.demands) / q.demands.sum())


def gini_arrays(incomes, demands) -> float:
    """Discrete Gini over ordered group pairs, weighted by demand."""
    q = np.asarray(incomes, dtype=float)
    d = np.asarray(demands, dtype=float)
    if np.any(q <= 0):
        raise IncomeDomainError("Gini is defined for strictly positive incomes only")
    total = d.sum()
    mean = np.dot(q, d) / total
    pair = np.abs(q[:, None] - q[None, :]) * np.outer(d, d)
    return float(pair.sum() / (2.0 * total**2 * mean))


def gini(q: IncomeDistribution) -> float:
    return gini_arrays(q.incomes, q.demands)


def ex_post_income(s: Scenario, costs: Mapping[str, float] | Sequence[float]) -> IncomeDistribution:
    """Income left after the trip: ``q0 - beta * cost`` for each group.

    ``costs`` are per-user travel costs net of any refund, keyed by group id
    or given in scenario group order.
    """
    if isinstance(costs, Mapping):
        mu = np.array([float(costs[g]) for g in s.group_ids])
    else:
        mu = np.asarray(costs, dtype=float)
    q0 = np.array([g.income for g in s.groups])
    q = q0 - s.beta * mu
    if np.any(q <= 0):
        raise IncomeDomainError("beta too large for scenario")
    return IncomeDistribution(s.group_ids, q, np.array([g.demand for g in s.groups]))


# --------------------------------------------------------------------------
# axioms


@dataclass
class AxiomReport:
    samples: int
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _regressive_multipliers(rng: np.random.Generator, q: np.ndarray) -> np.ndarray:
    # one factor per distinct income level, nondecreasing in income
    levels = np.unique(q)
    factors = np.sort(rng.uniform(0.2, 3.0, size=levels.size))
    return factors[np.searchsorted(levels, q)]


def _progressive_multipliers(rng: np.random.Generator, q: np.ndarray) -> np.ndarray:
    # nonincreasing in income, but never so steep that two groups swap rank
    levels = np.unique(q)
    factors = np.empty(levels.size)
    factors[0] = rng.uniform(0.2, 3.0)
    for k in range(1, levels.size):
        floor = factors[k - 1] * levels[k - 1] / levels[k]
        factors[k] = rng.uniform(floor, factors[k - 1])
    return factors[np.searchsorted(levels, q)]


def check_inequality_axioms(q: IncomeDistribution, samples: int = 1,
                            rng: np.random.Generator | int | None = None,
                            rel_tol: float = 1e-12) -> AxiomReport:
    """Randomized checks of the Gini axioms on ``q``.

    Covers scale independence, regressive and progressive multipliers and the
    constant-transfer property; each violated check is a report entry.
    Progressive multipliers are drawn rank-preserving: a factor schedule
    steep enough to reorder incomes can raise the Gini.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng)
    report = AxiomReport(samples)
    inc, d = q.incomes, q.demands
    base = gini_arrays(inc, d)
    slack = rel_tol * max(1.0, base) + 1e-15
    for k in range(samples):
        lam = float(np.exp(rng.uniform(-5, 5)))
        w = gini_arrays(lam * inc, d)
        if abs(w - base) > rel_tol * max(base, 1e-300) + 1e-15:
            report.failures.append(f"sample {k}: scale {lam:g} changed Gini {base!r} -> {w!r}")

        up = _regressive_multipliers(rng, inc)
        if gini_arrays(inc * up, d) < base - slack:
            report.failures.append(f"sample {k}: regressive multipliers decreased Gini")
        down = _progressive_multipliers(rng, inc)
        if gini_arrays(inc * down, d) > base + slack:
            report.failures.append(f"sample {k}: progressive multipliers increased Gini")

        lam = float(rng.uniform(0, 1)) * float(inc.min())
        if gini_arrays(inc + lam, d) > base + slack:
            report.failures.append(f"sample {k}: adding {lam:g} to every income increased Gini")
        if gini_arrays(inc - lam, d) < base - slack:
            report.failures.append(f"sample {k}: removing {lam:g} from every income decreased Gini")
    return report
