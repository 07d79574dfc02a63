"""Equivalence of the compiled search kernels with the pure-Python
reference searches: identical costs (bit-exact) and valid paths on
randomized maps."""

import math

import numpy as np
import pytest

from terraplan.detailed import (
    FOOT_LATTICE_FULL,
    FOOT_LATTICE_REDUCED,
    DetailedSpace,
    DetailedState,
)
from terraplan.engine import (
    DONE,
    EXHAUSTED,
    EngineModel,
    dijkstra_costs,
    plan,
)
from terraplan.heuristics import geometric_heuristic
from terraplan.search import dijkstra_oracle, weighted_astar
from terraplan.terrain import HeightMap, compute_cost_maps


def random_map(rng, size=48):
    h = np.zeros((size, size))
    for _ in range(rng.integers(1, 3)):
        x, y = rng.integers(4, size - 8, 2)
        w, d = rng.integers(2, 5, 2)
        h[y:y + d, x:x + w] = rng.uniform(0.05, 0.28)
    return HeightMap(h)


def random_state(rng, space, size=48):
    for _ in range(200):
        s = DetailedState(int(rng.integers(18, size - 18)),
                          int(rng.integers(18, size - 18)),
                          int(rng.integers(0, 64)),
                          tuple(rng.choice(space.lattice, 4).tolist()))
        if math.isfinite(space.state_cost(s)):
            return s
    raise RuntimeError("no feasible state found")


class TestEngineEquivalence:
    def test_costs_match_pure_dijkstra_exactly(self):
        rng = np.random.default_rng(10)
        matched = 0
        for trial in range(8):
            hmap = random_map(rng)
            cmap = compute_cost_maps(hmap)
            space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
            model = EngineModel(space)
            start = random_state(rng, space)
            goal = DetailedState(start.x + int(rng.integers(-3, 4)),
                                 start.y + int(rng.integers(-3, 4)),
                                 (start.theta + int(rng.integers(-1, 2))) % 64,
                                 start.feet)
            # engine first: exhausting an unreachable component is cheap
            # compiled but takes minutes in pure Python; likewise skip
            # detour-heavy instances whose pure search sphere is large
            costs, exp, status = dijkstra_costs(model, start, [goal])
            if not math.isfinite(costs[0]) or costs[0] > 0.2:
                continue
            pure = dijkstra_oracle(start, goal, space.successors)
            assert pure is not None
            assert costs[0] == pure.total_cost  # bit-exact
            matched += 1
        assert matched >= 4

    def test_unreachable_goal_agrees_on_corridor(self):
        # a narrow corridor with a blocking wall keeps the reachable
        # component small enough for the pure search to exhaust it too
        h = np.zeros((44, 90))
        h[:4, :] = 1.0
        h[40:, :] = 1.0
        h[:, 36:40] = 1.0  # blocks the corridor halfway
        cmap = compute_cost_maps(HeightMap(h))
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        start = DetailedState(20, 22, 0, (0, 0, 0, 0))
        assert math.isfinite(space.state_cost(start))
        goal = DetailedState(66, 22, 0, (0, 0, 0, 0))  # beyond the block
        assert math.isfinite(space.state_cost(goal))
        pure = dijkstra_oracle(start, goal, space.successors)
        costs, _, _ = dijkstra_costs(model, start, [goal])
        assert pure is None
        assert not math.isfinite(costs[0])

    def test_astar_matches_and_path_is_valid(self):
        rng = np.random.default_rng(11)
        for trial in range(3):
            hmap = random_map(rng)
            cmap = compute_cost_maps(hmap)
            space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
            model = EngineModel(space)
            start = random_state(rng, space)
            goal = DetailedState(start.x + 3, start.y - 2, start.theta, start.feet)
            res, status, exp, _ = plan(model, start, goal, W=1.0)
            if res is None or res.total_cost > 0.2:
                continue
            pure = dijkstra_oracle(start, goal, space.successors)
            assert pure is not None
            assert res.total_cost == pure.total_cost
            # replay the engine path through the pure successor model
            total = 0.0
            for s, a, ns in zip(res.states, res.actions, res.states[1:]):
                edge = {(aa, n2): c for aa, n2, c in space.successors(s)}
                assert (a, ns) in edge
                total += edge[(a, ns)]
            assert total == res.total_cost

    def test_full_lattice_agreement(self):
        rng = np.random.default_rng(12)
        hmap = random_map(rng)
        cmap = compute_cost_maps(hmap)
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_FULL)
        model = EngineModel(space)
        start = random_state(rng, space)
        goal = DetailedState(start.x + 4, start.y, start.theta, start.feet)
        pure = dijkstra_oracle(start, goal, space.successors)
        costs, _, _ = dijkstra_costs(model, start, [goal])
        if pure is None:
            assert not math.isfinite(costs[0])
        else:
            assert costs[0] == pure.total_cost

    def test_weighted_astar_bounded_suboptimality(self):
        rng = np.random.default_rng(13)
        hmap = random_map(rng)
        cmap = compute_cost_maps(hmap)
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        start = random_state(rng, space)
        goal = DetailedState(start.x + 3, start.y + 2, start.theta, start.feet)
        opt, *_ = plan(model, start, goal, W=1.0)
        if opt is None:
            pytest.skip("instance unreachable")
        prev = opt.total_cost
        for W in (1.25, 2.0):
            res, *_ = plan(model, start, goal, W=W)
            assert res is not None
            assert res.total_cost <= W * opt.total_cost * (1 + 1e-12)
            assert res.total_cost >= prev - 1e-12
            prev = res.total_cost

    def test_engine_astar_matches_pure_weighted_astar_cost(self):
        rng = np.random.default_rng(14)
        hmap = random_map(rng)
        cmap = compute_cost_maps(hmap)
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        start = random_state(rng, space)
        goal = DetailedState(start.x - 3, start.y + 2, start.theta, start.feet)
        res, *_ = plan(model, start, goal, W=1.0)
        if res is None or res.total_cost > 0.2:
            pytest.skip("instance too heavy for the pure search")
        h = lambda s: geometric_heuristic(s, goal, space)
        pure = weighted_astar(start, goal, space.successors, h, W=1.0)
        assert pure is not None
        assert res.total_cost == pure.total_cost

    def test_multi_goal_matches_individual_runs(self):
        rng = np.random.default_rng(15)
        hmap = random_map(rng)
        cmap = compute_cost_maps(hmap)
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        start = random_state(rng, space)
        goals = [DetailedState(start.x + dx, start.y + dy, start.theta, start.feet)
                 for dx, dy in ((4, 0), (0, 4), (-3, -3))]
        combined, _, _ = dijkstra_costs(model, start, goals)
        for g, expect in zip(goals, combined):
            single, _, _ = dijkstra_costs(model, start, [g])
            assert (math.isfinite(expect) == math.isfinite(single[0]))
            if math.isfinite(expect):
                assert single[0] == expect

    def test_expansion_counts_deterministic(self):
        rng = np.random.default_rng(16)
        hmap = random_map(rng)
        cmap = compute_cost_maps(hmap)
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        start = random_state(rng, space)
        goal = DetailedState(start.x + 6, start.y, start.theta, start.feet)
        runs = [plan(model, start, goal, W=1.25) for _ in range(2)]
        assert runs[0][2] == runs[1][2]
        if runs[0][0] is not None:
            assert runs[0][0].total_cost == runs[1][0].total_cost

    def test_start_equals_goal(self):
        cmap = compute_cost_maps(HeightMap(np.zeros((48, 48))))
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        s = DetailedState(24, 24, 0, (0, 0, 0, 0))
        res, status, exp, _ = plan(model, s, s)
        assert status == DONE
        assert res.total_cost == 0.0
        assert res.expansions == 1
        assert res.states == [s]

    def test_infeasible_start_exhausts(self):
        h = np.zeros((48, 48))
        h[20:28, 20:28] = 1.0
        cmap = compute_cost_maps(HeightMap(h))
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        s = DetailedState(24, 24, 0, (0, 0, 0, 0))
        assert math.isinf(space.state_cost(s))
        res, status, *_ = plan(model, s, DetailedState(36, 24, 0, (0, 0, 0, 0)))
        assert res is None
        assert status == EXHAUSTED

    def test_expansion_cap_reported(self):
        cmap = compute_cost_maps(HeightMap(np.zeros((48, 48))))
        space = DetailedSpace(cmap, lattice=FOOT_LATTICE_REDUCED)
        model = EngineModel(space)
        start = DetailedState(20, 24, 0, (0, 0, 0, 0))
        goal = DetailedState(32, 24, 0, (0, 0, 0, 0))
        res, status, exp, _ = plan(model, start, goal, exp_cap=5)
        assert res is None
        assert exp == 5
