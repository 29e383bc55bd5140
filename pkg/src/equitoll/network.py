"""Scenario data model: road network, latency functions and user groups.

A scenario is a directed graph whose edges carry polynomial latencies
``t(x) = a + b * x**p`` plus a list of user groups, each with its own
value-of-time, ex-ante income, demand and origin-destination pair.

Scenarios are exchanged as JSON documents::

    {
      "nodes": ["s", "t"],
      "edges": [{"id": "e1", "tail": "s", "head": "t", "a": "0", "b": "2", "p": "1"}],
      "groups": [{"id": "H", "vot": "2", "income": "2000", "demand": "2",
                  "origin": "s", "destination": "t"}],
      "beta": "1"
    }

Numbers may be JSON literals or decimal strings; unknown keys are rejected.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Any, Iterator, Sequence

DEFAULT_PATH_CAP = 64


class ScenarioError(ValueError):
    """Malformed or invalid scenario input."""


class ScenarioParseError(ScenarioError):
    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ScenarioValidationError(ScenarioError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario: " + "; ".join(self.problems))


class DisconnectedError(ScenarioError):
    """No path joins a group's origin and destination."""


@dataclass(frozen=True)
class LatencyFn:
    """Edge travel time ``a + b * x**p``."""

    free_flow: float
    coeff: float = 0.0
    exponent: float = 1.0

    def __call__(self, x):
        return self.free_flow + self.coeff * x**self.exponent

    def integral(self, x):
        """Closed-form ``int_0^x t(w) dw``."""
        p = self.exponent
        return self.free_flow * x + self.coeff * x ** (p + 1.0) / (p + 1.0)


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    latency: LatencyFn


@dataclass(frozen=True)
class UserGroup:
    id: str
    vot: float
    income: float
    demand: float
    origin: str
    destination: str


@dataclass(frozen=True)
class Path:
    """A simple path, stored as its edge-id sequence, for one group."""

    edges: tuple[str, ...]
    group: str

    def __str__(self) -> str:
        return "-".join(self.edges)


@dataclass(frozen=True)
class PathEnumeration:
    paths: tuple[Path, ...]
    truncated: bool = False

    def __iter__(self) -> Iterator[Path]:
        return iter(self.paths)

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i):
        return self.paths[i]


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    groups: tuple[UserGroup, ...]
    beta: float = 1.0
    _edge_pos: dict = field(init=False, repr=False, compare=False, hash=False)
    _group_pos: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "_edge_pos", {e.id: i for i, e in enumerate(self.edges)})
        object.__setattr__(self, "_group_pos", {g.id: i for i, g in enumerate(self.groups)})

    @property
    def edge_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.edges)

    @property
    def group_ids(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.groups)

    def edge_index(self, edge_id: str) -> int:
        return self._edge_pos[edge_id]

    def edge(self, edge_id: str) -> Edge:
        return self.edges[self._edge_pos[edge_id]]

    def group_index(self, group_id: str) -> int:
        return self._group_pos[group_id]

    def group(self, group_id: str) -> UserGroup:
        try:
            return self.groups[self._group_pos[group_id]]
        except KeyError:
            raise KeyError(f"unknown group {group_id!r}") from None

    def with_beta(self, beta: float) -> "Scenario":
        return Scenario(self.nodes, self.edges, self.groups, beta)


def travel_time(edge: Edge, x: float) -> float:
    if x < 0:
        raise ValueError(f"negative flow {x} on edge {edge.id}")
    return edge.latency(x)


# --------------------------------------------------------------------------
# validation


def validate_scenario(s: Scenario) -> list[str]:
    """Return a list of problems; an empty list means the scenario is valid."""
    problems: list[str] = []
    nodes = set(s.nodes)
    if len(nodes) != len(s.nodes):
        problems.append("duplicate node ids")
    seen: set[str] = set()
    for e in s.edges:
        if e.id in seen:
            problems.append(f"duplicate edge id {e.id}")
        seen.add(e.id)
        for end in (e.tail, e.head):
            if end not in nodes:
                problems.append(f"edge {e.id} references unknown node {end}")
        if e.tail == e.head:
            problems.append(f"self-loop edge {e.id}")
        lat = e.latency
        if not all(math.isfinite(v) for v in (lat.free_flow, lat.coeff, lat.exponent)):
            problems.append(f"non-finite latency parameter on edge {e.id}")
            continue
        if lat.free_flow < 0:
            problems.append(f"negative free-flow time on edge {e.id}")
        if lat.coeff < 0:
            problems.append(f"negative congestion coefficient on edge {e.id}")
        if lat.exponent < 1:
            problems.append(f"latency exponent below 1 on edge {e.id}")

    seen = set()
    for g in s.groups:
        if g.id in seen:
            problems.append(f"duplicate group id {g.id}")
        seen.add(g.id)
        for name in ("vot", "income", "demand"):
            value = getattr(g, name)
            if not (math.isfinite(value) and value > 0):
                problems.append(f"group {g.id}: {name} must be positive, got {value}")
        ends_known = True
        for end in (g.origin, g.destination):
            if end not in nodes:
                problems.append(f"group {g.id} references unknown node {end}")
                ends_known = False
        if not ends_known:
            continue
        if g.origin == g.destination:
            problems.append(f"degenerate O-D pair for group {g.id}")
        elif not _reachable(s, g.origin, g.destination):
            problems.append(f"disconnected O-D pair for group {g.id}")

    if not (math.isfinite(s.beta) and s.beta > 0):
        problems.append(f"beta must be positive, got {s.beta}")
    return problems


def _adjacency(s: Scenario) -> dict[str, list[Edge]]:
    adj: dict[str, list[Edge]] = {n: [] for n in s.nodes}
    for e in s.edges:
        if e.tail != e.head:
            adj.setdefault(e.tail, []).append(e)
    for out in adj.values():
        out.sort(key=lambda e: e.id)
    return adj


def _reachable(s: Scenario, src: str, dst: str) -> bool:
    adj = _adjacency(s)
    stack, seen = [src], {src}
    while stack:
        u = stack.pop()
        if u == dst:
            return True
        for e in adj.get(u, ()):
            if e.head not in seen:
                seen.add(e.head)
                stack.append(e.head)
    return False


# --------------------------------------------------------------------------
# paths


def enumerate_paths(s: Scenario, group_id: str, cap: int = DEFAULT_PATH_CAP) -> PathEnumeration:
    """All simple paths for a group's O-D pair, lexicographic by edge ids.

    At most ``cap`` paths are returned; ``truncated`` is set when more exist.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    g = s.group(group_id)
    if g.origin == g.destination:
        raise DisconnectedError(f"degenerate O-D pair for group {g.id}")
    adj = _adjacency(s)
    found: list[tuple[str, ...]] = []

    def dfs(node: str, visited: set[str], trail: list[str]) -> None:
        for e in adj.get(node, ()):
            if e.head in visited:
                continue
            trail.append(e.id)
            if e.head == g.destination:
                found.append(tuple(trail))
            else:
                visited.add(e.head)
                dfs(e.head, visited, trail)
                visited.discard(e.head)
            trail.pop()

    dfs(g.origin, {g.origin}, [])
    if not found:
        raise DisconnectedError(f"disconnected O-D pair for group {g.id}")
    found.sort()
    truncated = len(found) > cap
    return PathEnumeration(tuple(Path(p, g.id) for p in found[:cap]), truncated)


def shortest_path(s: Scenario, origin: str, destination: str, weights: dict[str, float],
                  group_id: str = "") -> Path:
    """Dijkstra on nonnegative edge weights.

    Equal-cost paths are ordered by their edge-id sequence, so the result is
    the lexicographically smallest among the cheapest simple paths.
    """
    adj = _adjacency(s)
    heap: list[tuple[float, tuple[str, ...], str]] = [(0.0, (), origin)]
    settled: set[str] = set()
    while heap:
        cost, trail, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == destination:
            return Path(trail, group_id)
        for e in adj.get(node, ()):
            if e.head not in settled:
                w = weights[e.id]
                if w < 0:
                    raise ValueError(f"negative weight on edge {e.id}")
                heapq.heappush(heap, (cost + w, trail + (e.id,), e.head))
    raise DisconnectedError(f"no path from {origin} to {destination}")


# --------------------------------------------------------------------------
# interchange format

_TOP_KEYS = {"nodes", "edges", "groups", "beta"}
_EDGE_KEYS = {"id", "tail", "head", "a", "b", "p"}
_GROUP_KEYS = {"id", "vot", "income", "demand", "origin", "destination"}


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool):
        raise ScenarioParseError("expected a number", where)
    if isinstance(value, (int, float, Decimal)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Decimal(value.strip()))
        except InvalidOperation:
            raise ScenarioParseError(f"not a decimal number: {value!r}", where) from None
    raise ScenarioParseError("expected a number", where)


def _string(value: Any, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise ScenarioParseError("expected a non-empty string", where)
    return value


def _check_keys(obj: Any, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioParseError("expected an object", where)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ScenarioParseError(f"unknown key(s) {', '.join(unknown)}", where)
    missing = sorted(required - set(obj))
    if missing:
        raise ScenarioParseError(f"missing key(s) {', '.join(missing)}", where)


def parse_scenario(text: str) -> Scenario:
    """Parse a scenario document without validating it."""
    try:
        doc = json.loads(text, parse_float=Decimal, parse_int=Decimal)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, f"line {exc.lineno}, column {exc.colno}") from None
    _check_keys(doc, _TOP_KEYS, {"nodes", "edges", "groups"}, "document")

    if not isinstance(doc["nodes"], list):
        raise ScenarioParseError("expected a list", "nodes")
    nodes = tuple(_string(n, f"nodes[{i}]") for i, n in enumerate(doc["nodes"]))

    if not isinstance(doc["edges"], list):
        raise ScenarioParseError("expected a list", "edges")
    edges = []
    for i, raw in enumerate(doc["edges"]):
        where = f"edges[{i}]"
        _check_keys(raw, _EDGE_KEYS, {"id", "tail", "head", "a"}, where)
        lat = LatencyFn(
            _number(raw["a"], f"{where}.a"),
            _number(raw.get("b", 0), f"{where}.b"),
            _number(raw.get("p", 1), f"{where}.p"),
        )
        edges.append(Edge(_string(raw["id"], f"{where}.id"), _string(raw["tail"], f"{where}.tail"),
                          _string(raw["head"], f"{where}.head"), lat))

    if not isinstance(doc["groups"], list):
        raise ScenarioParseError("expected a list", "groups")
    groups = []
    for i, raw in enumerate(doc["groups"]):
        where = f"groups[{i}]"
        _check_keys(raw, _GROUP_KEYS, _GROUP_KEYS, where)
        groups.append(UserGroup(
            _string(raw["id"], f"{where}.id"),
            _number(raw["vot"], f"{where}.vot"),
            _number(raw["income"], f"{where}.income"),
            _number(raw["demand"], f"{where}.demand"),
            _string(raw["origin"], f"{where}.origin"),
            _string(raw["destination"], f"{where}.destination"),
        ))
    beta = _number(doc.get("beta", 1), "beta")
    return Scenario(nodes, tuple(edges), tuple(groups), beta)


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document, or a built-in scenario name."""
    if text.strip() in BUILTIN_SCENARIOS:
        text = BUILTIN_SCENARIOS[text.strip()]
    s = parse_scenario(text)
    problems = validate_scenario(s)
    if problems:
        raise ScenarioValidationError(problems)
    return s


def _dec(x: float) -> str:
    # repr is the shortest string that round-trips to the same double
    return repr(float(x))


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "nodes": list(s.nodes),
        "edges": [
            {"id": e.id, "tail": e.tail, "head": e.head, "a": _dec(e.latency.free_flow),
             "b": _dec(e.latency.coeff), "p": _dec(e.latency.exponent)}
            for e in s.edges
        ],
        "groups": [
            {"id": g.id, "vot": _dec(g.vot), "income": _dec(g.income), "demand": _dec(g.demand),
             "origin": g.origin, "destination": g.destination}
            for g in s.groups
        ],
        "beta": _dec(s.beta),
    }


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2)


# --------------------------------------------------------------------------
# built-in instances

# q_M = 1000 fixes q_L through q_M (1 - 0.008) = q_L (1 - 0.010) + 0.014 q_M / 5,
# i.e. q_L = 989.2 / 0.99; values of time are 0.001 * income.
_Q_L = "999.191919191919191919191919"
_V_L = "0.999191919191919191919191919"

APPENDIX_G = f"""{{
  "nodes": ["s", "t"],
  "edges": [
    {{"id": "e1", "tail": "s", "head": "t", "a": "0", "b": "2", "p": "1"}},
    {{"id": "e2", "tail": "s", "head": "t", "a": "4", "b": "1", "p": "1"}}
  ],
  "groups": [
    {{"id": "H", "vot": "2", "income": "2000", "demand": "2", "origin": "s", "destination": "t"}},
    {{"id": "M", "vot": "1", "income": "1000", "demand": "1", "origin": "s", "destination": "t"}},
    {{"id": "L", "vot": "{_V_L}", "income": "{_Q_L}", "demand": "5", "origin": "s", "destination": "t"}}
  ],
  "beta": "1"
}}"""

# omega = 0.1, q_H = 2, q_L = 1
APPENDIX_D = """{
  "nodes": ["v1", "v2", "v3", "v4"],
  "edges": [
    {"id": "e1", "tail": "v1", "head": "v2", "a": "0", "b": "0.5", "p": "1"},
    {"id": "e2", "tail": "v3", "head": "v4", "a": "0", "b": "1", "p": "1"},
    {"id": "e3", "tail": "v3", "head": "v4", "a": "1", "b": "0", "p": "1"}
  ],
  "groups": [
    {"id": "H", "vot": "0.2", "income": "2", "demand": "1", "origin": "v1", "destination": "v2"},
    {"id": "L", "vot": "0.1", "income": "1", "demand": "1", "origin": "v3", "destination": "v4"}
  ],
  "beta": "1"
}"""

BUILTIN_SCENARIOS = {"appendix-g": APPENDIX_G, "appendix-d": APPENDIX_D}


def builtin(name: str) -> Scenario:
    try:
        return load_scenario(BUILTIN_SCENARIOS[name])
    except KeyError:
        raise KeyError(f"no built-in scenario {name!r}") from None
