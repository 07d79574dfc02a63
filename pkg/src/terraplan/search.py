"""Generic graph search over callback-defined successor functions.

These are the reference implementations: readable, exact, and suitable
for tests and small problems. Large detailed-space queries go through the
compiled engine (terraplan.engine), which is equivalence-tested against
these on small instances.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field


@dataclass
class SearchResult:
    states: list
    actions: list
    total_cost: float
    expansions: int
    wall_time: float = 0.0

    @property
    def path(self) -> list:
        """Interleaved state/action sequence from start to goal."""
        out = [self.states[0]]
        for a, s in zip(self.actions, self.states[1:]):
            out.append(a)
            out.append(s)
        return out


def weighted_astar(start, goal, successor_fn, heuristic_fn,
                   W: float = 1.0) -> SearchResult | None:
    """Best-first search with priority g + W*h.

    States are expanded at most once; ties on priority break toward the
    larger g. With W = 1 and an admissible heuristic the result is optimal;
    for W > 1 the cost is at most W times optimal. Returns None when the
    open list exhausts without reaching the goal.
    """
    if W < 1.0:
        raise ValueError("W must be >= 1")
    t0 = time.perf_counter()
    g = {start: 0.0}
    parent = {}
    closed = set()
    tick = 0
    h0 = heuristic_fn(start)
    open_list = [(W * h0, 0.0, tick, start)]
    expansions = 0
    while open_list:
        f, neg_g, _, s = heapq.heappop(open_list)
        if s in closed:
            continue
        closed.add(s)
        expansions += 1
        if s == goal:
            states, actions = _reconstruct(parent, s)
            return SearchResult(states, actions, g[s], expansions,
                                time.perf_counter() - t0)
        gs = g[s]
        for action, ns, c in successor_fn(s):
            if ns in closed:
                continue
            ng = gs + c
            if ng < g.get(ns, math.inf):
                g[ns] = ng
                parent[ns] = (s, action)
                tick += 1
                heapq.heappush(open_list,
                               (ng + W * heuristic_fn(ns), -ng, tick, ns))
    return None


def dijkstra_oracle(start, goal, successor_fn) -> SearchResult | None:
    """Exact shortest path by uniform-cost search; ground truth for tests
    and labeling."""
    t0 = time.perf_counter()
    g = {start: 0.0}
    parent = {}
    done = set()
    tick = 0
    open_list = [(0.0, tick, start)]
    expansions = 0
    while open_list:
        gs, _, s = heapq.heappop(open_list)
        if s in done:
            continue
        done.add(s)
        expansions += 1
        if s == goal:
            states, actions = _reconstruct(parent, s)
            return SearchResult(states, actions, gs, expansions,
                                time.perf_counter() - t0)
        for action, ns, c in successor_fn(s):
            if ns in done:
                continue
            ng = gs + c
            if ng < g.get(ns, math.inf):
                g[ns] = ng
                parent[ns] = (s, action)
                tick += 1
                heapq.heappush(open_list, (ng, tick, ns))
    return None


def one_to_any_dijkstra(source, edge_fn) -> dict:
    """Cost field over every state reachable from ``source``.

    ``edge_fn(state)`` yields ``(next_state, weight)`` pairs with positive
    weights. States absent from the returned dict are unreachable.
    """
    g = {source: 0.0}
    done = set()
    tick = 0
    open_list = [(0.0, tick, source)]
    while open_list:
        gs, _, s = heapq.heappop(open_list)
        if s in done:
            continue
        done.add(s)
        for ns, c in edge_fn(s):
            ng = gs + c
            if ng < g.get(ns, math.inf):
                g[ns] = ng
                tick += 1
                heapq.heappush(open_list, (ng, tick, ns))
    return g


def _reconstruct(parent, goal):
    states = [goal]
    actions = []
    s = goal
    while s in parent:
        s, a = parent[s]
        states.append(s)
        actions.append(a)
    states.reverse()
    actions.reverse()
    return states, actions
