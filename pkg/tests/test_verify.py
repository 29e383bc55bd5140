import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from generators import random_parallel_affine
from equitoll.assignment import (EquilibriumSolution, FlowPattern, search_system_optimal,
                                 solve_exogenous_equilibrium)
from equitoll.cprr import MaxMinPolicy
from equitoll.network import Edge, LatencyFn, Scenario, UserGroup, builtin
from equitoll.reproduce import cost_minimizing_toll, lemma4, prop4
from equitoll.verify import (CertificationError, deviation_candidates, group_cost_under_flow,
                             verify_cost_identity, verify_endogenous_equilibrium,
                             verify_exogenous_equilibrium)


@pytest.fixture(scope="module")
def g():
    return builtin("appendix-g")


@pytest.fixture(scope="module")
def eqs(g):
    return solve_exogenous_equilibrium(g), solve_exogenous_equilibrium(g, {"e1": 8})


def split(s, **groups):
    return FlowPattern.from_path_flows(s, groups)


def test_group_cost_at_deviated_flow(g):
    # M joins H on the tolled edge: x = (3, 5)
    f = split(g, H={"e1": 2}, M={"e1": 1}, L={"e2": 5})
    assert group_cost_under_flow(g, {"e1": 8}, f, "M") == pytest.approx(14, rel=1e-14)
    assert group_cost_under_flow(g, {"e1": 8}, f, "H") == pytest.approx(20, rel=1e-14)


def test_group_cost_averages_over_used_paths(g):
    f = split(g, H={"e1": 1, "e2": 1}, M={"e2": 1}, L={"e2": 5})
    # times are 2 and 11; H pays (2 * 2 + 2 * 11) / 2
    assert group_cost_under_flow(g, {}, f, "H") == pytest.approx(13, rel=1e-14)


def test_exogenous_pass_and_fail(g, eqs):
    _, eq = eqs
    assert verify_exogenous_equilibrium(g, {"e1": 8}, eq.flows).ok
    # untolled split (4, 4) under the toll: H is stuck on a now dearer edge
    rep = verify_exogenous_equilibrium(g, {"e1": 8}, eqs[0].flows)
    assert rep.failing[0] == "H" and rep.gaps["H"] == pytest.approx(8, rel=1e-6)
    f = split(g, H={"e1": 2}, M={"e1": 1}, L={"e1": 1, "e2": 4})
    rep = verify_exogenous_equilibrium(g, {"e1": 8}, f)
    assert rep.failing == ["H", "M", "L"]
    assert rep.gaps["H"] == pytest.approx(8, rel=1e-14)


def test_exogenous_zero_demand_group(g):
    s = Scenario(g.nodes, g.edges, g.groups + (UserGroup("Z", 1, 10, 0, "s", "t"),))
    eq = solve_exogenous_equilibrium(s, {"e1": 8})
    rep = verify_exogenous_equilibrium(s, {"e1": 8}, eq.flows)
    assert rep.ok and rep.gaps["Z"] == 0


def test_cost_identity(eqs):
    for eq in eqs:
        assert verify_cost_identity(eq) <= 1e-8 * max(1.0, eq.total_cost)
    bad = eqs[1]
    broken = EquilibriumSolution(bad.scenario, bad.tolls, bad.flows,
                                 {**bad.group_cost, "H": bad.group_cost["H"] + 1},
                                 bad.total_cost, bad.revenue, bad.gap, bad.iterations,
                                 bad.potential)
    assert verify_cost_identity(broken) == pytest.approx(2, rel=1e-9)


def test_prop4_deviation(g, eqs):
    eq0, eq = eqs
    devs = deviation_candidates(g, {"e1": 8}, MaxMinPolicy(g, eq0), eq.flows, "M", 100)
    pure = next(d for d in devs if d.split["e1"] == 1)
    assert pure.candidate == 0
    assert 0.1 < pure.gain < 0.2
    assert pure.gain == pytest.approx(0.16599, abs=1e-5)
    check = prop4()
    assert check.ok, check.failures


def test_lemma4_report_empty():
    toll, cost = cost_minimizing_toll(builtin("appendix-g"))
    assert toll == pytest.approx(4.00202, abs=1e-4)
    check = lemma4()
    assert check.ok and check.report["profitable_deviations"] == []


def test_single_path_groups_are_skipped():
    s = Scenario(("a", "b"), (Edge("e", "a", "b", LatencyFn(1, 1, 1)),),
                 (UserGroup("g", 1, 10, 2, "a", "b"),))
    eq0 = solve_exogenous_equilibrium(s)
    assert verify_endogenous_equilibrium(s, {"e": 1}, MaxMinPolicy(s, eq0), eq0.flows) == []


def test_truncated_enumeration_refuses_certificate():
    lat = LatencyFn(1, 1, 1)
    nodes = tuple(f"n{i}" for i in range(8))
    edges = tuple(Edge(f"{u}{v}{k}", u, v, lat) for u, v in zip(nodes, nodes[1:]) for k in "ab")
    s = Scenario(nodes, edges, (UserGroup("g", 1, 1, 1, "n0", "n7"),))
    eq = solve_exogenous_equilibrium(s)
    with pytest.raises(CertificationError):
        verify_exogenous_equilibrium(s, {}, eq.flows)


def test_deviation_grid_validation(g, eqs):
    eq0, eq = eqs
    with pytest.raises(ValueError):
        deviation_candidates(g, {"e1": 8}, MaxMinPolicy(g, eq0), eq.flows, "M", 1)


def _no_refund(costs, revenue):
    return dict.fromkeys(costs, 0.0)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**32 - 1))
def test_lone_group_at_grid_optimum_has_no_deviation(seed):
    # one group rerouting as a block minimizes its own total cost, which is C
    rng = np.random.default_rng(seed)
    s = random_parallel_affine(rng, n_edges=(2, 3), n_groups=(1, 1))
    so = search_system_optimal(s, 20)
    assert verify_endogenous_equilibrium(s, {}, _no_refund, so, grid=20) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_no_refund_gain_matches_cost_difference(seed):
    rng = np.random.default_rng(seed)
    s = random_parallel_affine(rng, n_edges=(2, 3), n_groups=(1, 3))
    eq = solve_exogenous_equilibrium(s)
    gid = s.group_ids[0]
    before = group_cost_under_flow(s, {}, eq.flows, gid)
    for d in deviation_candidates(s, {}, _no_refund, eq.flows, gid, grid=5):
        assert d.cost_before == pytest.approx(before, rel=1e-12)
        assert d.gain == pytest.approx(d.cost_before - d.cost_after, abs=1e-15)
