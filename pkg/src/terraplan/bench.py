"""Benchmark execution and CSV reporting.

Each (goal, heuristic, W) combination is one weighted-A* query on the
arena. Learned-heuristic rows include the per-goal field construction
time; the per-map edge-cache precomputation is reported once in the run
metadata, mirroring how a deployed planner amortizes it across queries.
Expansion counts and path costs are deterministic; wall times are not.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np

from terraplan.abstraction import to_detailed
from terraplan.detailed import CostParamsD, DetailedSpace, FOOT_LATTICE_REDUCED
from terraplan.engine import (
    COST_CAPPED,
    DONE,
    EXHAUSTED,
    EXPANSION_CAPPED,
    EngineModel,
    plan,
)
from terraplan.heuristics import EdgeCostCache, build_field, precompute_edges
from terraplan.terrain import HeightMap, compute_cost_maps

CSV_COLUMNS = ("goal_id", "heuristic", "W", "expansions", "field_build_s",
               "search_s", "total_s", "path_cost", "cost_increase_pct",
               "status")

# Deterministic stand-in for a wall-clock timeout: the compiled search
# cannot be interrupted mid-run, so the budget is counted in expansions.
EXPANSIONS_PER_SECOND_BUDGET = 150_000


@dataclass
class BenchmarkRow:
    goal_id: str
    heuristic: str
    W: float
    expansions: int
    field_build_s: float
    search_s: float
    total_s: float
    path_cost: float
    cost_increase_pct: float
    status: str

    def as_csv(self) -> list:
        return [
            self.goal_id, self.heuristic, f"{self.W:g}", self.expansions,
            f"{self.field_build_s:.3f}", f"{self.search_s:.3f}",
            f"{self.total_s:.3f}",
            "" if math.isnan(self.path_cost) else repr(self.path_cost),
            "" if math.isnan(self.cost_increase_pct)
            else f"{self.cost_increase_pct:.2f}",
            self.status,
        ]


_STATUS = {DONE: "ok", EXHAUSTED: "nopath", COST_CAPPED: "timeout",
           EXPANSION_CAPPED: "timeout"}


def run_benchmark(hmap: HeightMap, net, start, goals,
                  Ws=(1.0, 1.25, 2.0), heuristics=("learned", "geometric"),
                  planner_params: CostParamsD | None = None,
                  lattice=FOOT_LATTICE_REDUCED,
                  cache: EdgeCostCache | None = None,
                  timeout_s: float = 300.0,
                  progress=None):
    """Run all (goal, heuristic, W) combinations; returns (rows, meta).

    The W = 1 geometric query is always run per goal (it defines the
    optimum that cost increases are measured against), even when not part
    of the requested grid.
    """
    cmap = compute_cost_maps(hmap)
    space = DetailedSpace(cmap, planner_params, lattice)
    model = EngineModel(space)
    exp_cap = int(timeout_s * EXPANSIONS_PER_SECOND_BUDGET)

    meta = {"cache_build_s": 0.0, "lattice": tuple(lattice)}
    if "learned" in heuristics and cache is None:
        t0 = time.perf_counter()
        cache = precompute_edges(hmap, net, progress=progress)
        meta["cache_build_s"] = time.perf_counter() - t0

    rows = []
    for goal in goals:
        gd = to_detailed(goal.state, cmap, space=space)
        if gd is None:
            for h in heuristics:
                for W in Ws:
                    rows.append(BenchmarkRow(goal.name, h, W, 0, 0.0, 0.0, 0.0,
                                             math.nan, math.nan, "nopath"))
            continue

        ref_cost = math.nan
        ref_row = None
        queries = [("geometric", 1.0)] + [
            (h, W) for h in heuristics for W in Ws
            if not (h == "geometric" and W == 1.0)]

        field = None
        field_s = 0.0
        for h, W in queries:
            if h == "learned" and field is None:
                t0 = time.perf_counter()
                field = build_field(gd, cache)
                field_s = time.perf_counter() - t0
            t0 = time.perf_counter()
            res, status, exp, _ = plan(
                model, start, gd, W=W,
                field=field.values if h == "learned" else None,
                exp_cap=exp_cap, track_path=False, init_cap=1 << 20)
            search_s = time.perf_counter() - t0
            cost = res.total_cost if res else math.nan
            fb = field_s if h == "learned" else 0.0
            row = BenchmarkRow(
                goal.name, h, W, exp, fb, search_s, fb + search_s, cost,
                math.nan, _STATUS[status])
            if h == "geometric" and W == 1.0:
                ref_cost = cost
                ref_row = row
            if not math.isnan(cost) and not math.isnan(ref_cost):
                row.cost_increase_pct = 100.0 * (cost - ref_cost) / ref_cost
            if ("geometric" in heuristics and 1.0 in Ws) or row is not ref_row:
                rows.append(row)
            if progress is not None:
                progress(f"{goal.name}/{h}/W={W}: {row.status} "
                         f"exp={exp} cost={cost:.3f}")
        meta.setdefault("ref_costs", {})[goal.name] = ref_cost

    return rows, meta


def write_csv(rows, meta, path: str) -> None:
    with open(path, "w", newline="") as f:
        for k in sorted(meta):
            f.write(f"# {k}: {meta[k]}\n")
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv())


def speedup_table(rows) -> dict:
    """Expansion-ratio speedups vs the geometric W=1 reference per goal."""
    ref = {r.goal_id: r.expansions for r in rows
           if r.heuristic == "geometric" and r.W == 1.0 and r.status == "ok"}
    out = {}
    for r in rows:
        if r.status != "ok" or r.goal_id not in ref:
            continue
        out[(r.goal_id, r.heuristic, r.W)] = ref[r.goal_id] / max(1, r.expansions)
    return out
