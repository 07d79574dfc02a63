"""Heuristics for the detailed search: the admissible geometric bound and
the learned cost-to-goal field.

The learned field is built per goal by a backward one-to-any Dijkstra over
the abstract graph whose edge costs come from the network (precomputed
once per map as an edge-cost cache). The field carries no admissibility
guarantee; the geometric heuristic does, and also serves as the fallback
wherever the field is infinite so that a wrong infeasibility prediction
can never disconnect the detailed search.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra as csgraph_dijkstra

from terraplan.abstraction import (
    ABSTRACT_ACTIONS,
    AbstractMove,
    AbstractState,
    to_abstract,
)
from terraplan.detailed import DetailedSpace, DetailedState, THETA_STEP
from terraplan.errors import FormatError
from terraplan.mapgen import COST_SCALE
from terraplan.terrain import HeightMap, extract_patch

N_ABS_THETA = 16
N_ACTIONS = 22
EDGE_COST_FLOOR = 1e-3  # positive edges keep Dijkstra sound


def geometric_heuristic(s: DetailedState, goal: DetailedState,
                        space: DetailedSpace) -> float:
    """Euclidean distance plus rotational difference, scaled by the
    admissible cost lower bounds of the action set."""
    c_per_meter, c_per_step = space.geometric_constants()
    res = space.cmap.resolution
    d = math.hypot(s.x - goal.x, s.y - goal.y) * res
    dt = abs(s.theta - goal.theta)
    dt = min(dt, 64 - dt)
    return d * c_per_meter + dt * c_per_step


@dataclass
class EdgeCostCache:
    """Network-predicted cost of every abstract action at every state.

    ``costs[ay, ax, atheta, action]`` is the de-normalized cost (network
    output times COST_SCALE, clamped at a small positive floor) or NaN
    where the action is predicted infeasible or leaves the map.
    """

    costs: np.ndarray  # f32 [Ha, Wa, 16, 22]
    resolution: float
    origin: tuple

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.costs.shape[0], self.costs.shape[1]


def abstract_grid_shape(hmap: HeightMap) -> tuple[int, int]:
    """Abstract rows/cols whose anchor detailed cell is inside the map."""
    return ((hmap.height_cells - 1) // 4 + 1, (hmap.width_cells - 1) // 4 + 1)


def precompute_edges(hmap: HeightMap, net, batch_states: int = 24,
                     progress=None) -> EdgeCostCache:
    """Evaluate the network for all 22 actions of every abstract state.

    States are batched: one trunk pass per batch of patches, then a single
    head pass over all 22 goals per state. Patches at map borders pad with
    the unknown sentinel, consistent with training-time unknown handling.
    """
    ha, wa = abstract_grid_shape(hmap)
    goals = np.array(
        [(a.dx, a.dy, 0) if isinstance(a, AbstractMove) else (0, 0, a.dt)
         for a in ABSTRACT_ACTIONS], dtype=np.float32)
    out = np.full((ha, wa, N_ABS_THETA, N_ACTIONS), np.nan, dtype=np.float32)

    states = [AbstractState(x, y, t)
              for y in range(ha) for x in range(wa) for t in range(N_ABS_THETA)]
    for lo in range(0, len(states), batch_states):
        chunk = states[lo:lo + batch_states]
        patches = np.stack([extract_patch(hmap, s).values for s in chunk])
        feats = net.trunk_forward(patches)
        n = len(chunk)
        rep = np.repeat(np.arange(n), N_ACTIONS)
        raw = net.head_forward(feats[rep], np.tile(goals, (n, 1)))
        prob = 1.0 / (1.0 + np.exp(-raw[:, 1].astype(np.float64)))
        cost = raw[:, 0].astype(np.float64) * COST_SCALE
        cost = np.maximum(cost, EDGE_COST_FLOOR)
        cost[prob <= 0.5] = np.nan
        cost = cost.reshape(n, N_ACTIONS)
        for i, s in enumerate(chunk):
            out[s.y, s.x, s.theta] = cost[i]
        if progress is not None:
            progress(min(lo + batch_states, len(states)), len(states))

    _mask_out_of_map_actions(out, ha, wa)
    return EdgeCostCache(costs=out, resolution=hmap.resolution, origin=hmap.origin)


def _mask_out_of_map_actions(costs: np.ndarray, ha: int, wa: int) -> None:
    """Border states keep only actions whose target stays on the grid."""
    for ai, action in enumerate(ABSTRACT_ACTIONS):
        if not isinstance(action, AbstractMove):
            continue
        dx, dy = action.dx, action.dy
        if dx > 0:
            costs[:, wa - dx:, :, ai] = np.nan
        elif dx < 0:
            costs[:, :-dx, :, ai] = np.nan
        if dy > 0:
            costs[ha - dy:, :, :, ai] = np.nan
        elif dy < 0:
            costs[:-dy, :, :, ai] = np.nan


@dataclass
class HeuristicField:
    """Cost-to-goal estimates per abstract state; inf where unreachable."""

    values: np.ndarray  # f32 [Ha, Wa, 16]
    goal: AbstractState

    def lookup(self, s: DetailedState) -> float:
        a = to_abstract(s)
        ay = min(a.y, self.values.shape[0] - 1)
        ax = min(a.x, self.values.shape[1] - 1)
        return float(self.values[ay, ax, a.theta])


def build_field(goal_d: DetailedState, cache: EdgeCostCache) -> HeuristicField:
    """Backward one-to-any Dijkstra from the goal's abstract state.

    The search runs on reversed edges: the predecessor n of m via action a
    satisfies n + a = m and contributes weight cache[n, a]. Arrival costs
    become the per-state heuristic values.
    """
    ha, wa = cache.grid_shape
    goal_a = to_abstract(goal_d)
    gy = min(goal_a.y, ha - 1)
    gx = min(goal_a.x, wa - 1)

    n_nodes = ha * wa * N_ABS_THETA

    def node_id(ys, xs, ts):
        return (ys * wa + xs) * N_ABS_THETA + ts

    rows = []
    cols = []
    vals = []
    yy, xx, tt = np.meshgrid(np.arange(ha), np.arange(wa), np.arange(N_ABS_THETA),
                             indexing="ij")
    for ai, action in enumerate(ABSTRACT_ACTIONS):
        w = cache.costs[:, :, :, ai]
        ok = np.isfinite(w)
        if isinstance(action, AbstractMove):
            my = yy + action.dy
            mx = xx + action.dx
            mt = tt
            ok = ok & (my >= 0) & (my < ha) & (mx >= 0) & (mx < wa)
        else:
            my = yy
            mx = xx
            mt = (tt + action.dt) % N_ABS_THETA
        rows.append(node_id(my[ok], mx[ok], mt[ok]))   # from successor m ...
        cols.append(node_id(yy[ok], xx[ok], tt[ok]))   # ... back to predecessor n
        vals.append(w[ok].astype(np.float64))

    graph = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes, n_nodes)).tocsr()
    dist = csgraph_dijkstra(graph, directed=True,
                            indices=node_id(gy, gx, goal_a.theta))
    values = dist.reshape(ha, wa, N_ABS_THETA).astype(np.float32)
    return HeuristicField(values=values, goal=goal_a)


def learned_heuristic(field: HeuristicField, s: DetailedState,
                      goal: DetailedState, space: DetailedSpace) -> float:
    """Field lookup with geometric fallback on infinite cells."""
    v = field.lookup(s)
    if math.isfinite(v):
        return v
    return geometric_heuristic(s, goal, space)


# -- edge cache file (TPEC1) ----------------------------------------------------

_EC_MAGIC = b"TPEC1"


def save_edge_cache(cache: EdgeCostCache, path: str) -> None:
    ha, wa = cache.grid_shape
    with open(path, "wb") as f:
        f.write(_EC_MAGIC)
        f.write(struct.pack("<IIIIfff", ha, wa, N_ABS_THETA, N_ACTIONS,
                            cache.resolution, cache.origin[0], cache.origin[1]))
        f.write(cache.costs.astype("<f4").tobytes())


def load_edge_cache(path: str) -> EdgeCostCache:
    with open(path, "rb") as f:
        if f.read(5) != _EC_MAGIC:
            raise FormatError(f"bad magic in {path}")
        try:
            ha, wa, nt, na, res, ox, oy = struct.unpack("<IIIIfff", f.read(28))
        except struct.error as e:
            raise FormatError(f"truncated header in {path}") from e
        if nt != N_ABS_THETA or na != N_ACTIONS:
            raise FormatError(f"unsupported extents in {path}")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != ha * wa * nt * na:
        raise FormatError(f"truncated cache data in {path}")
    return EdgeCostCache(costs=data.reshape(ha, wa, nt, na).copy(),
                         resolution=float(res), origin=(float(ox), float(oy)))
