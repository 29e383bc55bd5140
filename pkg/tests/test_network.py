import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equitoll.network import (DisconnectedError, Edge, LatencyFn, Scenario, ScenarioParseError,
                              ScenarioValidationError, UserGroup, builtin, dump_scenario,
                              enumerate_paths, load_scenario, parse_scenario, travel_time,
                              validate_scenario)


def doc(**overrides):
    base = json.loads(dump_scenario(builtin("appendix-d")))
    base.update(overrides)
    return base


def test_appendix_g_builtin():
    s = builtin("appendix-g")
    assert s.nodes == ("s", "t")
    assert [(e.latency.free_flow, e.latency.coeff) for e in s.edges] == [(0, 2), (4, 1)]
    assert [g.demand for g in s.groups] == [2, 1, 5]
    assert s.group("L").income == pytest.approx(989.2 / 0.99, rel=1e-15)
    assert s.group("L").vot == pytest.approx(0.001 * 989.2 / 0.99, rel=1e-15)
    assert s.beta == 1
    assert validate_scenario(s) == []


def test_appendix_d_builtin():
    s = builtin("appendix-d")
    assert len(s.nodes) == 4 and len(s.edges) == 3
    assert [e.latency(1.0) for e in s.edges] == [0.5, 1.0, 1.0]
    assert s.group("H").origin == "v1" and s.group("L").origin == "v3"
    assert [g.demand for g in s.groups] == [1, 1]


def test_negative_demand_names_group():
    d = doc()
    d["groups"][1]["demand"] = "-1"
    with pytest.raises(ScenarioValidationError, match="group L"):
        load_scenario(json.dumps(d))


def test_unreachable_destination_reported():
    s = builtin("appendix-d")
    bad = Scenario(s.nodes, s.edges, (UserGroup("g", 1, 1, 1, "v2", "v1"),))
    assert "disconnected O-D pair for group g" in validate_scenario(bad)


def test_low_exponent_reported():
    s = Scenario(("a", "b"), (Edge("e", "a", "b", LatencyFn(1, 1, 0.5)),),
                 (UserGroup("g", 1, 1, 1, "a", "b"),))
    assert any("latency exponent below 1" in p for p in validate_scenario(s))


def test_self_loop_and_duplicates_reported():
    lat = LatencyFn(1, 1, 1)
    s = Scenario(("a", "b"), (Edge("e", "a", "b", lat), Edge("e", "a", "a", lat)),
                 (UserGroup("g", 1, 1, 1, "a", "b"), UserGroup("g", 1, 1, 1, "a", "b")))
    problems = validate_scenario(s)
    assert any("self-loop" in p for p in problems)
    assert any("duplicate edge id" in p for p in problems)
    assert any("duplicate group id" in p for p in problems)


def test_parse_errors_carry_location():
    with pytest.raises(ScenarioParseError, match="line 1, column"):
        parse_scenario('{"nodes": [')
    d = doc()
    d["groups"][0]["colour"] = "red"
    with pytest.raises(ScenarioParseError, match=r"groups\[0\].*colour"):
        parse_scenario(json.dumps(d))
    d = doc()
    d["edges"][2]["a"] = "one"
    with pytest.raises(ScenarioParseError, match=r"edges\[2\]\.a"):
        parse_scenario(json.dumps(d))
    with pytest.raises(ScenarioParseError, match="unknown key"):
        parse_scenario(json.dumps(doc(extra=1)))


def test_numeric_literals_and_strings_agree():
    d = doc()
    d["edges"][0]["b"] = 0.5
    assert parse_scenario(json.dumps(d)) == builtin("appendix-d")


def test_travel_time_examples():
    s = builtin("appendix-g")
    e1, e2 = s.edges
    assert travel_time(e1, 4) == 8
    assert travel_time(e2, 6) == 10
    assert travel_time(e2, 0) == 4
    with pytest.raises(ValueError):
        travel_time(e1, -0.1)


def test_enumerate_paths_examples():
    g = builtin("appendix-g")
    for grp in g.group_ids:
        assert [p.edges for p in enumerate_paths(g, grp)] == [("e1",), ("e2",)]
    d = builtin("appendix-d")
    assert [p.edges for p in enumerate_paths(d, "L")] == [("e2",), ("e3",)]
    lat = LatencyFn(1, 1, 1)
    tri = Scenario(("a", "b", "c"),
                   (Edge("ab", "a", "b", lat), Edge("bc", "b", "c", lat), Edge("ca", "c", "a", lat)),
                   (UserGroup("g", 1, 1, 1, "a", "a"),))
    with pytest.raises(DisconnectedError):
        enumerate_paths(tri, "g")


def test_enumerate_paths_truncation_flag():
    lat = LatencyFn(1, 1, 1)
    edges = tuple(Edge(f"e{i}", "a", "b", lat) for i in range(5))
    s = Scenario(("a", "b"), edges, (UserGroup("g", 1, 1, 1, "a", "b"),))
    full = enumerate_paths(s, "g")
    capped = enumerate_paths(s, "g", cap=3)
    assert not full.truncated and len(full) == 5
    assert capped.truncated and [p.edges for p in capped] == [p.edges for p in full][:3]


def test_enumerate_paths_lexicographic_multi_hop():
    lat = LatencyFn(1, 1, 1)
    s = Scenario(("a", "b", "c"),
                 (Edge("z", "a", "c", lat), Edge("b1", "a", "b", lat), Edge("b2", "b", "c", lat),
                  Edge("a1", "a", "b", lat)),
                 (UserGroup("g", 1, 1, 1, "a", "c"),))
    paths = [p.edges for p in enumerate_paths(s, "g")]
    assert paths == [("a1", "b2"), ("b1", "b2"), ("z",)]
    assert len(set(paths)) == len(paths)
    assert paths == [p.edges for p in enumerate_paths(s, "g")]


latency = st.builds(LatencyFn, st.floats(0, 100), st.floats(0, 100), st.floats(1, 5))
flows = st.floats(0, 1e3)


@given(latency, flows, flows)
def test_latency_monotone(lat, x1, x2):
    lo, hi = sorted((x1, x2))
    e = Edge("e", "a", "b", lat)
    assert travel_time(e, hi) >= travel_time(e, lo)


@given(latency, flows, flows, st.floats(0, 1))
def test_latency_convex(lat, x1, x2, lam):
    e = Edge("e", "a", "b", lat)
    mid = travel_time(e, lam * x1 + (1 - lam) * x2)
    chord = lam * travel_time(e, x1) + (1 - lam) * travel_time(e, x2)
    assert mid <= chord * (1 + 1e-12) + 1e-9


finite = st.floats(0.001, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50)
@given(st.lists(st.tuples(finite, finite, st.floats(1, 4)), min_size=1, max_size=4),
       st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=3), finite)
def test_round_trip_is_bit_exact(edges, groups, beta):
    s = Scenario(("a", "b"),
                 tuple(Edge(f"e{i}", "a", "b", LatencyFn(*p)) for i, p in enumerate(edges)),
                 tuple(UserGroup(f"g{i}", *p, "a", "b") for i, p in enumerate(groups)), beta)
    back = load_scenario(dump_scenario(s))
    assert back == s
    for e1, e2 in zip(s.edges, back.edges):
        assert np.float64(e1.latency.coeff).tobytes() == np.float64(e2.latency.coeff).tobytes()
