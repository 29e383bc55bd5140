"""Random scenario builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from equitoll.network import (DisconnectedError, Edge, LatencyFn, Scenario, UserGroup,
                              enumerate_paths)


def random_scenario(rng: np.random.Generator, n_edges=(2, 6), n_groups=(1, 4),
                    bpr_share: float = 0.5) -> Scenario:
    """Small connected network with affine or quartic (BPR-like) latencies."""
    E = int(rng.integers(n_edges[0], n_edges[1] + 1))
    n_nodes = int(rng.integers(2, min(E, 4) + 1))
    nodes = [f"n{i}" for i in range(n_nodes)]
    ends = [(nodes[i], nodes[i + 1]) for i in range(n_nodes - 1)]
    while len(ends) < E:
        u, v = rng.choice(n_nodes, size=2, replace=False)
        ends.append((nodes[u], nodes[v]))
    edges = []
    for k, (u, v) in enumerate(ends):
        if rng.random() < bpr_share:
            lat = LatencyFn(float(rng.uniform(0.5, 5)), float(rng.uniform(0.01, 1)), 4.0)
        else:
            lat = LatencyFn(float(rng.uniform(0, 5)), float(rng.uniform(0.1, 3)), 1.0)
        edges.append(Edge(f"e{k + 1}", u, v, lat))
    base = Scenario(tuple(nodes), tuple(edges), ())
    groups = []
    for k in range(int(rng.integers(n_groups[0], n_groups[1] + 1))):
        while True:
            o, d = rng.choice(n_nodes, size=2, replace=False)
            probe = Scenario(base.nodes, base.edges,
                             (UserGroup("x", 1, 1, 1, nodes[o], nodes[d]),))
            try:
                enumerate_paths(probe, "x")
                break
            except DisconnectedError:
                continue
        groups.append(UserGroup(f"G{k}", float(rng.uniform(0.2, 3)), float(rng.uniform(50, 500)),
                                float(rng.uniform(0.5, 5)), nodes[o], nodes[d]))
    return Scenario(base.nodes, base.edges, tuple(groups))


def random_tolls(rng: np.random.Generator, s: Scenario, zero_share: float = 0.4) -> dict:
    return {e.id: (0.0 if rng.random() < zero_share else float(rng.uniform(0, 5)))
            for e in s.edges}


def random_parallel_affine(rng: np.random.Generator, n_edges=(1, 5), n_groups=(1, 4)) -> Scenario:
    E = int(rng.integers(n_edges[0], n_edges[1] + 1))
    edges = tuple(Edge(f"e{k + 1}", "s", "t",
                       LatencyFn(float(rng.uniform(0, 5)), float(rng.uniform(0.1, 3)), 1.0))
                  for k in range(E))
    groups = tuple(UserGroup(f"G{k}", float(rng.uniform(0.2, 3)), float(rng.uniform(50, 500)),
                             float(rng.uniform(0.5, 5)), "s", "t")
                   for k in range(int(rng.integers(n_groups[0], n_groups[1] + 1))))
    return Scenario(("s", "t"), edges, groups)
