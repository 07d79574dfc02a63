import math

import numpy as np
import pytest

from terraplan.search import (
    SearchResult,
    dijkstra_oracle,
    one_to_any_dijkstra,
    weighted_astar,
)


def graph_successors(edges):
    adj = {}
    for u, v, w in edges:
        adj.setdefault(u, []).append((f"{u}->{v}", v, w))
    return lambda s: adj.get(s, [])


def random_graph(rng, n=60, m=240):
    edges = []
    for _ in range(m):
        u, v = rng.integers(0, n, 2)
        if u != v:
            edges.append((int(u), int(v), float(rng.uniform(0.1, 5.0))))
    return edges


def bellman_ford(edges, source, n):
    """Independent shortest-path oracle."""
    dist = {source: 0.0}
    for _ in range(n):
        changed = False
        for u, v, w in edges:
            if u in dist and dist[u] + w < dist.get(v, math.inf):
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            break
    return dist


class TestWeightedAStar:
    def test_start_equals_goal(self):
        res = weighted_astar("a", "a", lambda s: [], lambda s: 0.0)
        assert res.total_cost == 0.0
        assert res.states == ["a"]
        assert res.actions == []
        assert res.expansions == 1

    def test_requires_w_at_least_one(self):
        with pytest.raises(ValueError):
            weighted_astar("a", "b", lambda s: [], lambda s: 0.0, W=0.5)

    def test_no_path_returns_none(self):
        succ = graph_successors([("a", "b", 1.0)])
        assert weighted_astar("a", "z", succ, lambda s: 0.0) is None

    def test_matches_dijkstra_on_random_graphs(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            edges = random_graph(rng)
            succ = graph_successors(edges)
            goal = int(rng.integers(1, 60))
            a = weighted_astar(0, goal, succ, lambda s: 0.0, W=1.0)
            d = dijkstra_oracle(0, goal, succ)
            assert (a is None) == (d is None)
            if a is not None:
                assert a.total_cost == d.total_cost

    def test_w_monotone_degradation(self):
        rng = np.random.default_rng(1)
        for _ in range(8):
            edges = random_graph(rng)
            succ = graph_successors(edges)
            goal = int(rng.integers(1, 60))
            d = dijkstra_oracle(0, goal, succ)
            if d is None:
                continue
            # an admissible heuristic from the true remaining distances
            rev = [(v, u, w) for u, v, w in edges]
            back = bellman_ford(rev, goal, 60)
            h = lambda s: 0.8 * back.get(s, 0.0)
            costs = []
            for W in (1.0, 1.25, 2.0):
                r = weighted_astar(0, goal, succ, h, W=W)
                assert r is not None
                assert r.total_cost <= W * d.total_cost + 1e-9
                costs.append(r.total_cost)
            assert costs[0] == pytest.approx(d.total_cost)
            assert costs[0] <= costs[1] + 1e-12 and costs[1] <= costs[2] + 1e-12

    def test_admissible_heuristic_reduces_expansions(self):
        rng = np.random.default_rng(2)
        edges = random_graph(rng, n=200, m=900)
        succ = graph_successors(edges)
        d = None
        goal = None
        for g in range(1, 200):
            d = dijkstra_oracle(0, g, succ)
            if d is not None and d.expansions > 50:
                goal = g
                break
        assert goal is not None
        rev = [(v, u, w) for u, v, w in edges]
        back = bellman_ford(rev, goal, 200)
        a = weighted_astar(0, goal, succ, lambda s: back.get(s, 0.0), W=1.0)
        assert a.total_cost == pytest.approx(d.total_cost)
        assert a.expansions <= d.expansions

    def test_deterministic_expansions(self):
        rng = np.random.default_rng(3)
        edges = random_graph(rng)
        succ = graph_successors(edges)
        runs = [weighted_astar(0, 7, succ, lambda s: 0.0) for _ in range(2)]
        if runs[0] is not None:
            assert runs[0].expansions == runs[1].expansions
            assert runs[0].states == runs[1].states

    def test_path_cost_consistency(self):
        edges = [("a", "b", 1.0), ("b", "c", 2.0), ("a", "c", 4.0)]
        succ = graph_successors(edges)
        r = weighted_astar("a", "c", succ, lambda s: 0.0)
        assert r.total_cost == 3.0
        assert r.states == ["a", "b", "c"]
        assert r.actions == ["a->b", "b->c"]
        assert r.path == ["a", "a->b", "b", "b->c", "c"]


class TestDijkstraOracle:
    def test_start_equals_goal(self):
        assert dijkstra_oracle("a", "a", lambda s: []).total_cost == 0.0

    def test_forced_corridor(self):
        edges = [(i, i + 1, 0.5 + 0.1 * i) for i in range(5)]
        succ = graph_successors(edges)
        r = dijkstra_oracle(0, 5, succ)
        assert r.total_cost == pytest.approx(sum(0.5 + 0.1 * i for i in range(5)))
        assert r.expansions == 6

    def test_lower_bounds_weighted_astar(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            edges = random_graph(rng)
            succ = graph_successors(edges)
            goal = int(rng.integers(1, 60))
            d = dijkstra_oracle(0, goal, succ)
            if d is None:
                continue
            h = lambda s: 0.0
            for W in (1.25, 2.0):
                r = weighted_astar(0, goal, succ, h, W=W)
                assert d.total_cost <= r.total_cost + 1e-12


class TestOneToAny:
    def test_single_state(self):
        assert one_to_any_dijkstra("s", lambda s: []) == {"s": 0.0}

    def test_two_states(self):
        field = one_to_any_dijkstra("s", lambda s: [("t", 3.0)] if s == "s" else [])
        assert field == {"s": 0.0, "t": 3.0}

    def test_matches_bellman_ford(self):
        rng = np.random.default_rng(5)
        for _ in range(8):
            edges = random_graph(rng, n=50, m=200)
            adj = {}
            for u, v, w in edges:
                adj.setdefault(u, []).append((v, w))
            field = one_to_any_dijkstra(0, lambda s: adj.get(s, []))
            expected = bellman_ford(edges, 0, 50)
            assert set(field) == set(expected)
            for k in field:
                assert field[k] == pytest.approx(expected[k], rel=1e-12)

    def test_relaxation_property(self):
        rng = np.random.default_rng(6)
        edges = random_graph(rng, n=40, m=160)
        adj = {}
        for u, v, w in edges:
            adj.setdefault(u, []).append((v, w))
        field = one_to_any_dijkstra(0, lambda s: adj.get(s, []))
        for u, v, w in edges:
            if u in field:
                assert field.get(v, math.inf) <= field[u] + w + 1e-12
