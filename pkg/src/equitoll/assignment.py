"""Multi-class traffic assignment under tolls.

Each group g perceives edge e at generalized time ``t_e(x_e) + tau_e / v_g``.
An exogenous equilibrium minimizes the multi-class Beckmann potential

    Phi(f) = sum_e int_0^{x_e} t_e + sum_e sum_g x_e^g tau_e / v_g

over feasible path flows.  The solver is Frank-Wolfe with exact bisection
line search, augmented with a per-group pairwise step (move flow from the
costliest used path to the cheapest one) so that the tight residuals needed
by the cost identity are reached in a handful of iterations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .network import (DisconnectedError, Path, Scenario, enumerate_paths,
                      shortest_path)

BISECTION_STEPS = 50
DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 100_000
MAX_SO_PATHS = 6
# used paths may exceed the cheapest one by at most this many tolerances
PATH_GAP_FACTOR = 10.0


class ConvergenceError(RuntimeError):
    """Raised when the solver hits its iteration limit.

    ``best`` holds the iterate with the smallest relative gap seen.
    """

    def __init__(self, message: str, best: "EquilibriumSolution"):
        super().__init__(message)
        self.best = best
        self.gap = best.gap


class UnsupportedScenarioError(ValueError):
    pass


class TollVector(Mapping[str, float]):
    """Nonnegative per-edge tolls; edges not listed carry no toll."""

    def __init__(self, tolls: Mapping[str, float] | None = None, **kw: float):
        data = dict(tolls or {})
        data.update(kw)
        clean = {}
        for e, v in data.items():
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"toll on edge {e} must be nonnegative, got {v}")
            clean[str(e)] = v
        self._tolls = clean

    def __getitem__(self, edge_id: str) -> float:
        return self._tolls.get(edge_id, 0.0)

    def __iter__(self) -> Iterator[str]:
        return iter(self._tolls)

    def __len__(self) -> int:
        return len(self._tolls)

    def __contains__(self, edge_id: object) -> bool:
        return edge_id in self._tolls

    def __repr__(self) -> str:
        return f"TollVector({self._tolls!r})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mapping):
            return NotImplemented
        keys = set(self) | set(other)
        return all(self[k] == other.get(k, 0.0) for k in keys)

    def as_array(self, s: Scenario) -> np.ndarray:
        unknown = set(self._tolls) - set(s.edge_ids)
        if unknown:
            raise KeyError(f"toll on unknown edge(s): {', '.join(sorted(unknown))}")
        return np.array([self[e] for e in s.edge_ids], dtype=float)

    def to_dict(self) -> dict[str, float]:
        return dict(self._tolls)


def as_tolls(tolls: TollVector | Mapping[str, float] | None) -> TollVector:
    return tolls if isinstance(tolls, TollVector) else TollVector(tolls)


# --------------------------------------------------------------------------
# flows


def _incidence(s: Scenario, paths: Sequence[Path]) -> np.ndarray:
    A = np.zeros((len(s.edges), len(paths)))
    for j, p in enumerate(paths):
        for e in p.edges:
            A[s.edge_index(e), j] = 1.0
    return A


@dataclass(frozen=True, eq=False)
class FlowPattern:
    """Path flows for every group plus the edge flows they induce."""

    scenario: Scenario
    paths: tuple[tuple[Path, ...], ...]
    flows: tuple[np.ndarray, ...]
    incidence: tuple[np.ndarray, ...] = field(default=(), repr=False)
    group_edge_flows: np.ndarray = field(init=False, repr=False)
    edge_flows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = self.scenario
        if len(self.paths) != len(s.groups) or len(self.flows) != len(s.groups):
            raise ValueError("one path list and flow vector per group is required")
        flows = []
        for g, (ps, f) in enumerate(zip(self.paths, self.flows)):
            f = np.array(f, dtype=float)
            if f.shape != (len(ps),):
                raise ValueError(f"flow vector for group {s.groups[g].id} has wrong length")
            if np.any(f < 0):
                raise ValueError(f"negative path flow for group {s.groups[g].id}")
            f.flags.writeable = False
            flows.append(f)
        inc = self.incidence or tuple(_incidence(s, ps) for ps in self.paths)
        xg = np.array([A @ f for A, f in zip(inc, flows)]).reshape(len(s.groups), len(s.edges))
        xg.flags.writeable = False
        x = xg.sum(axis=0)
        x.flags.writeable = False
        object.__setattr__(self, "paths", tuple(tuple(ps) for ps in self.paths))
        object.__setattr__(self, "flows", tuple(flows))
        object.__setattr__(self, "incidence", tuple(inc))
        object.__setattr__(self, "group_edge_flows", xg)
        object.__setattr__(self, "edge_flows", x)

    @classmethod
    def from_path_flows(cls, s: Scenario,
                        path_flows: Mapping[str, Mapping[Sequence[str] | str, float]]) -> "FlowPattern":
        """Build from ``{group: {path: flow}}``; a path is an edge-id tuple or "e1-e2"."""
        paths, flows = [], []
        for g in s.group_ids:
            ps, fs = [], []
            for key, value in sorted(path_flows.get(g, {}).items(), key=lambda kv: _path_key(kv[0])):
                ps.append(Path(_path_key(key), g))
                fs.append(float(value))
            paths.append(tuple(ps))
            flows.append(np.array(fs))
        return cls(s, tuple(paths), tuple(flows))

    def check_feasible(self, rel_tol: float = 1e-12) -> None:
        for grp, f in zip(self.scenario.groups, self.flows):
            if abs(f.sum() - grp.demand) > rel_tol * max(1.0, grp.demand):
                raise ValueError(f"group {grp.id} routes {f.sum()!r} but demands {grp.demand!r}")

    def edge_flow(self, edge_id: str) -> float:
        return float(self.edge_flows[self.scenario.edge_index(edge_id)])

    def path_flows(self, group_id: str) -> dict[tuple[str, ...], float]:
        g = self.scenario.group_index(group_id)
        return {p.edges: float(v) for p, v in zip(self.paths[g], self.flows[g])}

    def replace_group(self, group_id: str, paths: Sequence[Path], flows) -> "FlowPattern":
        g = self.scenario.group_index(group_id)
        ps = list(self.paths)
        fs = list(self.flows)
        inc = list(self.incidence)
        ps[g] = tuple(paths)
        fs[g] = np.asarray(flows, dtype=float)
        inc[g] = _incidence(self.scenario, ps[g]) if tuple(paths) != self.paths[g] else inc[g]
        return FlowPattern(self.scenario, tuple(ps), tuple(fs), tuple(inc))

    def to_report(self) -> dict:
        s = self.scenario
        return {
            "edge_flows": {e: float(v) for e, v in zip(s.edge_ids, self.edge_flows)},
            "path_flows": {
                grp.id: {str(p): float(v) for p, v in zip(ps, f) if v > 0}
                for grp, ps, f in zip(s.groups, self.paths, self.flows)
            },
        }


def _path_key(key) -> tuple[str, ...]:
    if isinstance(key, str):
        return tuple(key.split("-"))
    return tuple(key)


def _latency_arrays(s: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.array([e.latency.free_flow for e in s.edges])
    b = np.array([e.latency.coeff for e in s.edges])
    p = np.array([e.latency.exponent for e in s.edges])
    return a, b, p


def _times(lat, x: np.ndarray) -> np.ndarray:
    a, b, p = lat
    return a + b * np.power(np.maximum(x, 0.0), p)


def _integrals(lat, x: np.ndarray) -> np.ndarray:
    a, b, p = lat
    return a * x + b * np.power(np.maximum(x, 0.0), p + 1.0) / (p + 1.0)


# --------------------------------------------------------------------------
# evaluation


def beckmann_potential(s: Scenario, tolls, f: FlowPattern) -> float:
    tau = as_tolls(tolls).as_array(s)
    lat = _latency_arrays(s)
    vot = np.array([g.vot for g in s.groups])
    toll_term = float(np.sum((f.group_edge_flows @ tau) / vot)) if len(vot) else 0.0
    return float(_integrals(lat, f.edge_flows).sum()) + toll_term


def edge_times(s: Scenario, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("edge flows must be nonnegative")
    return _times(_latency_arrays(s), x)


def total_system_cost(s: Scenario, f: FlowPattern) -> float:
    """Time cost in money: sum over edges and groups of ``v_g x_e^g t_e(x_e)``."""
    if not s.groups:
        return 0.0
    t = _times(_latency_arrays(s), f.edge_flows)
    vot = np.array([g.vot for g in s.groups])
    return float(vot @ (f.group_edge_flows @ t))


def total_revenue(tolls, x, s: Scenario | None = None) -> float:
    """Toll revenue ``sum_e tau_e x_e``.

    ``x`` is a mapping edge id -> flow, or an array in scenario edge order
    (then ``s`` is required).
    """
    tolls = as_tolls(tolls)
    if isinstance(x, Mapping):
        if any(v < 0 for v in x.values()):
            raise ValueError("edge flows must be nonnegative")
        return float(sum(tolls[e] * float(v) for e, v in x.items()))
    if s is None:
        raise TypeError("an edge-flow array needs the scenario for edge order")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("edge flows must be nonnegative")
    return float(tolls.as_array(s) @ x)


def path_costs(s: Scenario, tau: np.ndarray, f: FlowPattern, g: int) -> np.ndarray:
    """Money cost ``sum_{e in P} (v_g t_e + tau_e)`` of every path of group ``g`` in ``f``."""
    t = _times(_latency_arrays(s), f.edge_flows)
    return f.incidence[g].T @ (s.groups[g].vot * t + tau)


def group_generalized_shortest_path(s: Scenario, tolls, group_id: str, x) -> Path:
    """Cheapest path for a group under weights ``t_e(x_e) + tau_e / v_g``."""
    tau = as_tolls(tolls).as_array(s)
    if isinstance(x, Mapping):
        x = np.array([float(x.get(e, 0.0)) for e in s.edge_ids])
    t = edge_times(s, x)
    grp = s.group(group_id)
    weights = dict(zip(s.edge_ids, (t + tau / grp.vot).tolist()))
    return shortest_path(s, grp.origin, grp.destination, weights, grp.id)


# --------------------------------------------------------------------------
# solutions


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    scenario: Scenario
    tolls: TollVector
    flows: FlowPattern
    group_cost: dict[str, float]
    total_cost: float
    revenue: float
    gap: float
    iterations: int
    potential: float = float("nan")

    @property
    def edge_flows(self) -> np.ndarray:
        return self.flows.edge_flows

    def cost_identity_residual(self) -> float:
        demand = {g.id: g.demand for g in self.scenario.groups}
        paid = sum(self.group_cost[g] * d for g, d in demand.items())
        return abs(self.total_cost - (paid - self.revenue))

    def to_report(self) -> dict:
        return {
            "tolls": {e: self.tolls[e] for e in self.scenario.edge_ids},
            "group_cost": dict(self.group_cost),
            "total_cost": self.total_cost,
            "revenue": self.revenue,
            "gap": self.gap,
            "iterations": self.iterations,
            **self.flows.to_report(),
        }


def _solution(s: Scenario, tolls: TollVector, f: FlowPattern, gap: float, it: int,
              potential: float) -> EquilibriumSolution:
    tau = tolls.as_array(s)
    mu = {}
    for g, grp in enumerate(s.groups):
        sp = group_generalized_shortest_path(s, tolls, grp.id, f.edge_flows)
        idx = [s.edge_index(e) for e in sp.edges]
        t = _times(_latency_arrays(s), f.edge_flows)
        mu[grp.id] = float(np.sum(grp.vot * t[idx] + tau[idx]))
    return EquilibriumSolution(
        s, tolls, f, mu, total_system_cost(s, f), total_revenue(tolls, f.edge_flows, s),
        gap, it, potential,
    )


# --------------------------------------------------------------------------
# Frank-Wolfe


def _bisect(dphi, hi: float) -> float:
    """Step in [0, hi] minimizing a convex function given its derivative."""
    if hi <= 0 or dphi(0.0) >= 0:
        return 0.0
    if dphi(hi) <= 0:
        return hi
    lo = 0.0
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if dphi(mid) < 0:
            lo = mid
        else:
            hi = mid
    # the lower end never overshoots, so the potential cannot go up
    return lo


class _State:
    """Mutable working copy of the path flows during one solve."""

    def __init__(self, s: Scenario, tau: np.ndarray):
        self.s = s
        self.tau = tau
        self.lat = _latency_arrays(s)
        self.vot = np.array([g.vot for g in s.groups])
        self.paths: list[list[Path]] = [[] for _ in s.groups]
        self.cols: list[list[np.ndarray]] = [[] for _ in s.groups]
        self.flows: list[list[float]] = [[] for _ in s.groups]
        self.x = np.zeros(len(s.edges))

    def column(self, g: int, path: Path) -> int:
        for j, p in enumerate(self.paths[g]):
            if p.edges == path.edges:
                return j
        col = np.zeros(len(self.s.edges))
        for e in path.edges:
            col[self.s.edge_index(e)] = 1.0
        self.paths[g].append(path)
        self.cols[g].append(col)
        self.flows[g].append(0.0)
        return len(self.paths[g]) - 1

    def group_x(self, g: int) -> np.ndarray:
        if not self.cols[g]:
            return np.zeros(len(self.s.edges))
        return np.array(self.cols[g]).T @ np.array(self.flows[g])

    def refresh(self) -> None:
        self.x = sum((self.group_x(g) for g in range(len(self.paths))), np.zeros(len(self.s.edges)))

    def cost(self) -> float:
        t = _times(self.lat, self.x)
        return sum(self.vot[g] * float(self.group_x(g) @ t) for g in range(len(self.paths)))

    def potential(self) -> float:
        toll = sum(float(self.tau @ self.group_x(g)) / self.vot[g] for g in range(len(self.paths)))
        return float(_integrals(self.lat, self.x).sum()) + toll

    def shortest(self) -> list[int]:
        """Add each group's current cheapest path as a column; return its index."""
        t = _times(self.lat, self.x)
        best = []
        for g, grp in enumerate(self.s.groups):
            w = dict(zip(self.s.edge_ids, (t + self.tau / grp.vot).tolist()))
            best.append(self.column(g, shortest_path(self.s, grp.origin, grp.destination, w, grp.id)))
        return best

    def gaps(self, best: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """Per-group linearization gap (generalized time) and worst used-path
        excess over the cheapest path, relative to the group's money cost."""
        t = _times(self.lat, self.x)
        out = np.zeros(len(self.paths))
        worst = np.zeros(len(self.paths))
        for g in range(len(self.paths)):
            if not self.cols[g]:
                continue
            c = np.array(self.cols[g]) @ (t + self.tau / self.vot[g])
            f = np.array(self.flows[g])
            out[g] = max(0.0, float(f @ c - f.sum() * c[best[g]]))
            used = f > 0
            if used.any():
                mu = self.vot[g] * c[best[g]]
                worst[g] = self.vot[g] * (c[used].max() - c[best[g]]) / max(1.0, abs(mu))
        return out, worst

    def frank_wolfe_step(self, best: list[int]) -> None:
        G = len(self.paths)
        dirs, dxg = [], []
        for g in range(G):
            f = np.array(self.flows[g])
            y = np.zeros_like(f)
            y[best[g]] = f.sum()
            dirs.append(y - f)
            dxg.append(np.array(self.cols[g]).T @ (y - f) if self.cols[g] else np.zeros(len(self.x)))
        dx = sum(dxg, np.zeros(len(self.x)))
        const = sum(float(self.tau @ dxg[g]) / self.vot[g] for g in range(G))
        x0 = self.x.copy()
        lat = self.lat

        def dphi(gamma: float) -> float:
            return float(_times(lat, x0 + gamma * dx) @ dx) + const

        gamma = _bisect(dphi, 1.0)
        if gamma > 0:
            for g in range(G):
                self.flows[g] = list(np.maximum(np.array(self.flows[g]) + gamma * dirs[g], 0.0))
                if gamma == 1.0:
                    self.flows[g] = [0.0] * len(self.flows[g])
                    self.flows[g][best[g]] = self.s.groups[g].demand
            self.refresh()

    def pairwise_step(self, g: int) -> bool:
        t = _times(self.lat, self.x)
        cols = np.array(self.cols[g])
        c = cols @ (t + self.tau / self.vot[g])
        f = np.array(self.flows[g])
        used = np.flatnonzero(f > 0)
        if used.size == 0:
            return False
        a = int(used[np.argmax(c[used])])
        b = int(np.argmin(c))
        if a == b or c[a] <= c[b]:
            return False
        diff = cols[b] - cols[a]
        idx = np.flatnonzero(diff)
        d = diff[idx]
        x0 = self.x[idx]
        lat = tuple(arr[idx] for arr in self.lat)
        const = float(self.tau[idx] @ d) / self.vot[g]

        def dphi(delta: float) -> float:
            return float(_times(lat, x0 + delta * d) @ d) + const

        delta = _bisect(dphi, f[a])
        if delta <= 0:
            return False
        self.flows[g][b] += delta
        self.flows[g][a] = 0.0 if delta == f[a] else f[a] - delta
        self.x[idx] = np.maximum(x0 + delta * d, 0.0)
        return True

    def swap_steps(self) -> None:
        """Trade flow between two groups so that edge flows stay put.

        Along such a trade the potential is linear (only the toll term moves),
        while single-group steps see congestion on both sides and crawl.
        """
        t = _times(self.lat, self.x)
        G = len(self.paths)
        for g, h in itertools.combinations(range(G), 2):
            if not self.cols[g] or not self.cols[h]:
                continue
            Cg, Ch = np.array(self.cols[g]), np.array(self.cols[h])
            cg = Cg @ (t + self.tau / self.vot[g])
            ch = Ch @ (t + self.tau / self.vot[h])
            scale = 1e-14 * (abs(cg).max() + abs(ch).max())
            for a, b in itertools.permutations(range(len(Cg)), 2):
                dg = Cg[b] - Cg[a]
                for a2, b2 in itertools.permutations(range(len(Ch)), 2):
                    fa, fa2 = self.flows[g][a], self.flows[h][a2]
                    if fa <= 0 or fa2 <= 0:
                        continue
                    if (cg[b] - cg[a]) + (ch[b2] - ch[a2]) >= -scale:
                        continue
                    if not np.array_equal(Ch[b2] - Ch[a2], -dg):
                        continue
                    delta = min(fa, fa2)
                    self.flows[g][a] = fa - delta if delta < fa else 0.0
                    self.flows[g][b] += delta
                    self.flows[h][a2] = fa2 - delta if delta < fa2 else 0.0
                    self.flows[h][b2] += delta

    def pattern(self) -> FlowPattern:
        paths, flows, inc = [], [], []
        for g in range(len(self.paths)):
            order = sorted(range(len(self.paths[g])), key=lambda j: self.paths[g][j].edges)
            paths.append(tuple(self.paths[g][j] for j in order))
            flows.append(np.array([self.flows[g][j] for j in order]))
            inc.append(np.array([self.cols[g][j] for j in order]).T.reshape(len(self.x), len(order)))
        return FlowPattern(self.s, tuple(paths), tuple(flows), tuple(inc))


def solve_exogenous_equilibrium(s: Scenario, tolls=None, tolerance: float = DEFAULT_TOLERANCE,
                                max_iterations: int = DEFAULT_MAX_ITERATIONS) -> EquilibriumSolution:
    """Exogenous (refund-blind) equilibrium under ``tolls``.

    Stops once the relative Frank-Wolfe gap and the cost-identity residual
    are both within ``tolerance`` and no used path costs more than
    ``PATH_GAP_FACTOR * tolerance`` (relative) above its group's cheapest.  Raises :class:`ConvergenceError` after
    ``max_iterations`` and :class:`DisconnectedError` for unroutable groups.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    tolls = as_tolls(tolls)
    tau = tolls.as_array(s)
    st = _State(s, tau)
    best = st.shortest()
    for g, grp in enumerate(s.groups):
        st.flows[g][best[g]] = grp.demand
    st.refresh()

    phi = st.potential()
    best_sol: EquilibriumSolution | None = None
    it = 0
    while True:
        best = st.shortest()
        gaps, worst = st.gaps(best)
        gap_total = float(gaps.sum())
        rel = gap_total / abs(phi) if phi != 0 else (0.0 if gap_total == 0 else math.inf)
        money = float(st.vot @ gaps) if len(gaps) else 0.0
        scale = max(1.0, st.cost())
        if money <= tolerance * scale and rel <= tolerance and worst.max(initial=0.0) <= PATH_GAP_FACTOR * tolerance:
            return _solution(s, tolls, st.pattern(), rel, it, phi)
        if best_sol is None or rel < best_sol.gap:
            best_sol = _solution(s, tolls, st.pattern(), rel, it, phi)
        if it >= max_iterations:
            raise ConvergenceError(
                f"no convergence after {it} iterations (relative gap {best_sol.gap:.3e})", best_sol)
        it += 1

        st.frank_wolfe_step(best)
        st.swap_steps()
        for g in range(len(s.groups)):
            # repeat so stray flow on several costly paths drains in one iteration
            for _ in range(len(st.paths[g])):
                if not st.pairwise_step(g):
                    break
        st.refresh()
        new_phi = st.potential()
        if new_phi > phi + 1e-12 * max(1.0, abs(phi)):
            raise AssertionError(f"potential increased at iteration {it}: {phi!r} -> {new_phi!r}")
        phi = new_phi


# --------------------------------------------------------------------------
# closed form for parallel affine networks


def _parallel_check(s: Scenario) -> tuple[str, str]:
    if not s.edges:
        raise UnsupportedScenarioError("no edges")
    tail, head = s.edges[0].tail, s.edges[0].head
    for e in s.edges:
        if (e.tail, e.head) != (tail, head):
            raise UnsupportedScenarioError("closed form needs parallel edges between two nodes")
        if e.latency.exponent != 1:
            raise UnsupportedScenarioError("closed form needs affine latencies")
        if e.latency.coeff <= 0 and len(s.edges) > 1:
            raise UnsupportedScenarioError("closed form needs strictly increasing latencies")
    for g in s.groups:
        if (g.origin, g.destination) != (tail, head):
            raise UnsupportedScenarioError("closed form needs a single O-D pair")
    return tail, head


def _staircases(n_rows: int, n_cols: int) -> Iterator[list[tuple[int, int]]]:
    """Monotone lattice paths from (0, 0) to (n_rows-1, n_cols-1), diagonal moves allowed."""
    def walk(i, j, trail):
        if (i, j) == (n_rows - 1, n_cols - 1):
            yield list(trail)
            return
        for di, dj in ((0, 1), (1, 0), (1, 1)):
            ni, nj = i + di, j + dj
            if ni < n_rows and nj < n_cols:
                trail.append((ni, nj))
                yield from walk(ni, nj, trail)
                trail.pop()
    yield from walk(0, 0, [(0, 0)])


def solve_parallel_affine_closed_form(s: Scenario, tolls=None,
                                      feas_tol: float = 1e-10) -> EquilibriumSolution:
    """Exact equilibrium on two-node networks of parallel affine edges.

    High value-of-time groups sit on high-toll edges, so with groups sorted
    by value-of-time and toll classes sorted by toll, the group-to-class
    support is a monotone staircase.  Each candidate support gives a square
    linear system; the first candidate passing all sign and optimality checks
    is the equilibrium.
    """
    _parallel_check(s)
    tolls = as_tolls(tolls)
    tau = tolls.as_array(s)
    a = np.array([e.latency.free_flow for e in s.edges])
    b = np.array([e.latency.coeff for e in s.edges])
    E = len(s.edges)
    paths = tuple(tuple(Path((e.id,), g.id) for e in s.edges) for g in s.groups)
    if not s.groups:
        return _solution(s, tolls, FlowPattern(s, paths, tuple(np.zeros(E) for _ in s.groups)), 0.0, 0, 0.0)
    if E == 1:
        flows = tuple(np.array([g.demand]) for g in s.groups)
        f = FlowPattern(s, paths, flows)
        return _solution(s, tolls, f, 0.0, 0, beckmann_potential(s, tolls, f))

    # merge groups with identical value-of-time; they face the same costs
    vots = sorted({g.vot for g in s.groups}, reverse=True)
    dem = np.array([sum(g.demand for g in s.groups if g.vot == v) for v in vots])
    vv = np.array(vots)
    G = len(vots)

    for size in range(E, 0, -1):
        for used in itertools.combinations(range(E), size):
            used = list(used)
            unused = [e for e in range(E) if e not in used]
            levels = sorted({tau[e] for e in used}, reverse=True)
            classes = [[e for e in used if tau[e] == lv] for lv in levels]
            K = len(classes)
            for stair in _staircases(G, K):
                sol = _solve_support(vv, dem, a, b, np.array(levels), classes, stair)
                if sol is None:
                    continue
                T, mu, cell = sol
                if not _support_ok(vv, a, b, tau, np.array(levels), classes, unused, stair, T, mu, cell,
                                   feas_tol * max(1.0, float(np.max(np.abs(mu))))):
                    continue
                return _assemble(s, tolls, paths, vv, a, b, classes, stair, T, cell)
    raise RuntimeError("closed form found no consistent support")


def _solve_support(v, d, a, b, lev, classes, stair):
    G, K, S = len(v), len(classes), len(stair)
    n = K + G + S
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    row = 0
    for c, (g, k) in enumerate(stair):
        # v_g T_k + tau_k - mu_g = 0
        M[row, k] = v[g]
        M[row, K + g] = -1.0
        rhs[row] = -lev[k]
        row += 1
    for g in range(G):
        for c, (gg, _) in enumerate(stair):
            if gg == g:
                M[row, K + G + c] = 1.0
        rhs[row] = d[g]
        row += 1
    for k, cls in enumerate(classes):
        # routed flow equals sum over class edges of (T_k - a_e) / b_e
        for c, (_, kk) in enumerate(stair):
            if kk == k:
                M[row, K + G + c] = 1.0
        M[row, k] = -sum(1.0 / b[e] for e in cls)
        rhs[row] = -sum(a[e] / b[e] for e in cls)
        row += 1
    try:
        z = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(z)) or np.linalg.cond(M) > 1e12:
        return None
    return z[:K], z[K:K + G], z[K + G:]


def _support_ok(v, a, b, tau, lev, classes, unused, stair, T, mu, cell, tol) -> bool:
    if np.any(cell < -tol):
        return False
    for k, cls in enumerate(classes):
        for e in cls:
            if T[k] - a[e] < -tol:
                return False
    on = set(stair)
    for g in range(len(v)):
        for k in range(len(classes)):
            if (g, k) not in on and v[g] * T[k] + lev[k] < mu[g] - tol:
                return False
        for e in unused:
            if v[g] * a[e] + tau[e] < mu[g] - tol:
                return False
    return True


def _assemble(s, tolls, paths, vv, a, b, classes, stair, T, cell) -> EquilibriumSolution:
    E = len(s.edges)
    flows = []
    for grp in s.groups:
        gi = int(np.flatnonzero(vv == grp.vot)[0])
        merged = sum(g.demand for g in s.groups if g.vot == grp.vot)
        share = grp.demand / merged
        f = np.zeros(E)
        for c, (g, k) in enumerate(stair):
            if g != gi:
                continue
            cls = classes[k]
            xe = np.array([max(T[k] - a[e], 0.0) / b[e] for e in cls])
            if xe.sum() > 0:
                f[cls] += share * max(cell[c], 0.0) * xe / xe.sum()
        flows.append(f)
    f = FlowPattern(s, paths, tuple(flows))
    return _solution(s, tolls, f, 0.0, 0, beckmann_potential(s, tolls, f))


# --------------------------------------------------------------------------
# system optimum by exhaustive grid


def simplex_compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``, lexicographic."""
    if parts == 1:
        return np.array([[total]])
    blocks = [np.column_stack([np.full(len(rest), k), rest])
              for k in range(total + 1)
              for rest in [simplex_compositions(total - k, parts - 1)]]
    return np.vstack(blocks)


def search_system_optimal(s: Scenario, grid: int = 100, chunk: int = 1 << 20) -> FlowPattern:
    """Minimum total-cost flow over per-group path splits in steps of ``d_g / grid``.

    Exhaustive and exact on the grid; ties go to the first candidate in
    lexicographic order of (group, split).
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    paths = []
    for grp in s.groups:
        ps = enumerate_paths(s, grp.id)
        if ps.truncated:
            raise UnsupportedScenarioError(f"too many paths for group {grp.id}")
        paths.append(tuple(ps))
    if sum(len(p) for p in paths) > MAX_SO_PATHS:
        raise UnsupportedScenarioError(
            f"grid search supports at most {MAX_SO_PATHS} paths in total")
    if not s.groups:
        return FlowPattern(s, (), ())

    lat = _latency_arrays(s)
    vot = np.array([g.vot for g in s.groups])
    splits, edge_x = [], []
    for grp, ps in zip(s.groups, paths):
        comp = simplex_compositions(grid, len(ps)) * (grp.demand / grid)
        splits.append(comp)
        edge_x.append(comp @ _incidence(s, ps).T)
    sizes = [len(c) for c in splits]
    n = int(np.prod(sizes))
    best_cost, best_flat = math.inf, -1
    for start in range(0, n, chunk):
        flat = np.arange(start, min(n, start + chunk))
        idx = np.unravel_index(flat, sizes)
        x = np.zeros((flat.size, len(s.edges)))
        vx = np.zeros_like(x)
        for g in range(len(sizes)):
            xg = edge_x[g][idx[g]]
            x += xg
            vx += vot[g] * xg
        cost = np.sum(_times(lat, x) * vx, axis=1)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost, best_flat = float(cost[j]), int(flat[j])
    idx = np.unravel_index(best_flat, sizes)
    flows = tuple(splits[g][idx[g]] for g in range(len(sizes)))
    return FlowPattern(s, tuple(paths), flows)
