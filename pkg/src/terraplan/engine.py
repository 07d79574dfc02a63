"""Compiled detailed-space search kernels.

Pure-Python successor enumeration tops out around 10^4 expansions per
second, far short of what dataset labeling and the benchmark arena need,
so the hot searches run here: states packed into int64, an open-addressing
hash table for g-values, and a binary heap, all JIT-compiled.

The successor model and every cost expression mirror
``DetailedSpace.successors`` exactly (same precomputed tables, same
float64 operation order), which makes path costs bit-identical to the
pure implementation; the equivalence is covered by tests on randomized
small maps.
"""

from __future__ import annotations

import math
import time

import numpy as np
from numba import njit

from terraplan.detailed import (
    NEIGHBORHOOD_20,
    Drive,
    DetailedSpace,
    DetailedState,
    MoveFoot,
    ShiftBase,
    Step,
    Turn,
)
from terraplan.search import SearchResult
from terraplan.terrain import TerrainClass

STATE_MASK = (1 << 34) - 1

# status codes
DONE = 0
EXHAUSTED = 1
COST_CAPPED = 2
EXPANSION_CAPPED = 3


class EngineModel:
    """Precomputed arrays binding a cost map, cost params, and foot lattice."""

    def __init__(self, space: DetailedSpace):
        cmap = space.cmap
        if cmap.width_cells > 256 or cmap.height_cells > 256:
            raise ValueError("engine supports maps up to 256x256 cells")
        self.space = space
        self.landing = np.ascontiguousarray(cmap.landing_cost, dtype=np.float32)
        self.base = np.ascontiguousarray(cmap.base_cost, dtype=np.float32)
        self.height = np.ascontiguousarray(cmap.heights, dtype=np.float32)
        cls = cmap.terrain_class
        self.drivable = np.ascontiguousarray(
            ((cls == TerrainClass.FLAT) | (cls == TerrainClass.ROUGH)).astype(np.uint8))
        self.foot_rel = np.ascontiguousarray(space.foot_table)
        self.shift_vec = np.ascontiguousarray(space.shift_table)
        self.misalign = np.ascontiguousarray(space.misalign)
        self.drive_off = np.array(NEIGHBORHOOD_20, dtype=np.int8)
        self.drive_len = np.ascontiguousarray(space.drive_len_m)
        self.sweeps = np.ascontiguousarray(space.sweeps)
        self.sweep_lens = np.ascontiguousarray(space.sweep_lens)
        self.lattice = np.array(space.lattice, dtype=np.int8)
        p = space.params
        self.cost_args = (
            p.drive_cost_per_meter, p.turn_cost_per_step,
            p.foot_move_cost_per_meter, p.base_shift_cost_per_meter,
            p.step_fixed_cost,
            cmap.params.drivable_delta, cmap.params.max_step_height,
            cmap.resolution, float(space.spacing),
        )
        self.c_per_meter, self.c_per_theta_step = space.geometric_constants()

    # -- state packing -------------------------------------------------------

    def pack(self, s: DetailedState) -> int:
        idx = self.space.off_index
        k = s.x | (s.y << 8) | (s.theta << 16)
        k |= idx[s.feet[0]] << 22
        k |= idx[s.feet[1]] << 25
        k |= idx[s.feet[2]] << 28
        k |= idx[s.feet[3]] << 31
        return k

    def unpack(self, k: int) -> DetailedState:
        lat = self.space.lattice
        return DetailedState(
            k & 255, (k >> 8) & 255, (k >> 16) & 63,
            (lat[(k >> 22) & 7], lat[(k >> 25) & 7],
             lat[(k >> 28) & 7], lat[(k >> 31) & 7]),
        )

    def decode_action(self, code: int):
        L = len(self.space.lattice)
        if code < 20:
            dx, dy = NEIGHBORHOOD_20[code]
            return Drive(dx, dy)
        if code == 20:
            return Turn(1)
        if code == 21:
            return Turn(-1)
        code -= 22
        if code < 4 * L:
            return MoveFoot(code // L, int(self.space.lattice[code % L]))
        code -= 4 * L
        if code < 2:
            return ShiftBase(1 if code == 0 else -1)
        code -= 2
        return Step(code // L, int(self.space.lattice[code % L]))


# -- hash table and heap primitives -------------------------------------------


@njit(inline="always", cache=True)
def _ht_slot(keys, key):
    mask = np.uint64(keys.shape[0] - 1)
    z = np.uint64(key)
    z = (z ^ (z >> np.uint64(33))) * np.uint64(0xFF51AFD7ED558CCD)
    z = (z ^ (z >> np.uint64(33))) * np.uint64(0xC4CEB9FE1A85EC53)
    i = np.int64((z ^ (z >> np.uint64(33))) & mask)
    while keys[i] != -1 and keys[i] != key:
        i = (i + 1) & np.int64(mask)
    return i


@njit(cache=True)
def _ht_rehash(keys, gv, flags, par):
    cap = keys.shape[0] * 2
    nk = np.full(cap, -1, dtype=np.int64)
    ng = np.empty(cap, dtype=np.float64)
    nf = np.zeros(cap, dtype=np.uint8)
    npar = np.empty(cap, dtype=np.int64)
    for i in range(keys.shape[0]):
        k = keys[i]
        if k == -1:
            continue
        j = _ht_slot(nk, k)
        nk[j] = k
        ng[j] = gv[i]
        nf[j] = flags[i]
        npar[j] = par[i]
    return nk, ng, nf, npar


@njit(inline="always", cache=True)
def _heap_less(kf, kg, a, b):
    if kf[a] != kf[b]:
        return kf[a] < kf[b]
    return kg[a] > kg[b]  # ties: prefer larger g


@njit(inline="always", cache=True)
def _heap_push(kf, kg, pay, n, f, g, p):
    kf[n] = f
    kg[n] = g
    pay[n] = p
    i = n
    while i > 0:
        up = (i - 1) >> 1
        if not _heap_less(kf, kg, i, up):
            break
        kf[i], kf[up] = kf[up], kf[i]
        kg[i], kg[up] = kg[up], kg[i]
        pay[i], pay[up] = pay[up], pay[i]
        i = up
    return n + 1


@njit(inline="always", cache=True)
def _heap_pop(kf, kg, pay, n):
    f = kf[0]
    g = kg[0]
    p = pay[0]
    n -= 1
    kf[0] = kf[n]
    kg[0] = kg[n]
    pay[0] = pay[n]
    i = 0
    while True:
        l = 2 * i + 1
        if l >= n:
            break
        s = l
        r = l + 1
        if r < n and _heap_less(kf, kg, r, l):
            s = r
        if not _heap_less(kf, kg, s, i):
            break
        kf[i], kf[s] = kf[s], kf[i]
        kg[i], kg[s] = kg[s], kg[i]
        pay[i], pay[s] = pay[s], pay[i]
        i = s
    return f, g, p, n


@njit(cache=True)
def _grow_f64(a):
    b = np.empty(a.shape[0] * 2, dtype=np.float64)
    b[:a.shape[0]] = a
    return b


@njit(cache=True)
def _grow_i64(a):
    b = np.empty(a.shape[0] * 2, dtype=np.int64)
    b[:a.shape[0]] = a
    return b


# -- in-kernel successor model -------------------------------------------------


@njit(inline="always", cache=True)
def _state_cost(landing, base, foot_rel, x, y, t, i0, i1, i2, i3):
    H, W = landing.shape
    if x < 0 or x >= W or y < 0 or y >= H:
        return np.inf
    total = np.float64(base[y, x])
    fx = x + foot_rel[t, 0, i0, 0]
    fy = y + foot_rel[t, 0, i0, 1]
    if fx < 0 or fx >= W or fy < 0 or fy >= H:
        return np.inf
    total = total + np.float64(landing[fy, fx])
    fx = x + foot_rel[t, 1, i1, 0]
    fy = y + foot_rel[t, 1, i1, 1]
    if fx < 0 or fx >= W or fy < 0 or fy >= H:
        return np.inf
    total = total + np.float64(landing[fy, fx])
    fx = x + foot_rel[t, 2, i2, 0]
    fy = y + foot_rel[t, 2, i2, 1]
    if fx < 0 or fx >= W or fy < 0 or fy >= H:
        return np.inf
    total = total + np.float64(landing[fy, fx])
    fx = x + foot_rel[t, 3, i3, 0]
    fy = y + foot_rel[t, 3, i3, 1]
    if fx < 0 or fx >= W or fy < 0 or fy >= H:
        return np.inf
    total = total + np.float64(landing[fy, fx])
    return total


@njit(inline="always", cache=True)
def _quantize(c):
    return math.ceil(c * 1073741824.0) / 1073741824.0


@njit(inline="always", cache=True)
def _heuristic(hmode, x, y, t, res, c_per_m, c_per_step,
               goal_x, goal_y, goal_t, fieldv):
    if hmode == 0:
        return 0.0
    if hmode == 2:
        ax = (x + 2) >> 2
        ay = (y + 2) >> 2
        at = ((t + 2) >> 2) & 15
        if ax >= fieldv.shape[1]:
            ax = fieldv.shape[1] - 1
        if ay >= fieldv.shape[0]:
            ay = fieldv.shape[0] - 1
        v = fieldv[ay, ax, at]
        if np.isfinite(v):
            return np.float64(v)
    dx = (x - goal_x) * res
    dy = (y - goal_y) * res
    dd = math.sqrt(dx * dx + dy * dy) * c_per_m
    dt = t - goal_t
    if dt < 0:
        dt = -dt
    if dt > 32:
        dt = 64 - dt
    return dd + dt * c_per_step


@njit(inline="always", cache=True)
def _relax(keys, gv, flags, par, cnt, kf, kg, pay, hn,
           ns, ng, fprio, ppack, track):
    slot = _ht_slot(keys, ns)
    if keys[slot] == -1:
        keys[slot] = ns
        gv[slot] = ng
        if track:
            par[slot] = ppack
        cnt += 1
        hn = _heap_push(kf, kg, pay, hn, fprio, ng, ns)
    elif flags[slot] == 0 and ng < gv[slot]:
        gv[slot] = ng
        if track:
            par[slot] = ppack
        hn = _heap_push(kf, kg, pay, hn, fprio, ng, ns)
    return cnt, hn


@njit(cache=True)
def _search(landing, drivable, base, height,
            foot_rel, shift_vec, misalign, drive_off, drive_len,
            sweeps, sweep_lens, lattice,
            drive_rate, turn_rate, foot_rate, shift_rate, step_fixed,
            drivable_delta, max_step_height, res, spacing,
            start, goals, W, hmode, c_per_m, c_per_step,
            goal_x, goal_y, goal_t, fieldv,
            cost_cap, exp_cap, track_parents, init_cap):
    H, Wd = landing.shape
    L = lattice.shape[0]
    ngoals = goals.shape[0]
    goal_costs = np.full(ngoals, np.inf, dtype=np.float64)
    remaining = ngoals

    cap = init_cap
    keys = np.full(cap, -1, dtype=np.int64)
    gv = np.empty(cap, dtype=np.float64)
    flags = np.zeros(cap, dtype=np.uint8)
    par = np.zeros(cap, dtype=np.int64)
    cnt = 0

    kf = np.empty(1 << 14, dtype=np.float64)
    kg = np.empty(1 << 14, dtype=np.float64)
    pay = np.empty(1 << 14, dtype=np.int64)
    hn = 0

    sx = start & 255
    sy = (start >> 8) & 255
    st = (start >> 16) & 63
    h0 = _heuristic(hmode, sx, sy, st, res, c_per_m, c_per_step,
                    goal_x, goal_y, goal_t, fieldv)
    slot = _ht_slot(keys, start)
    keys[slot] = start
    gv[slot] = 0.0
    par[slot] = -1
    cnt = 1
    hn = _heap_push(kf, kg, pay, hn, W * h0, 0.0, start)

    expansions = 0
    status = EXHAUSTED

    while hn > 0:
        fprio, gs, s, hn = _heap_pop(kf, kg, pay, hn)
        slot = _ht_slot(keys, s)
        if flags[slot] == 1 or gs > gv[slot]:
            continue
        if gs > cost_cap:
            status = COST_CAPPED
            break
        flags[slot] = 1
        expansions += 1

        hit = False
        for gi in range(ngoals):
            if goals[gi] == s and not np.isfinite(goal_costs[gi]):
                goal_costs[gi] = gs
                remaining -= 1
                hit = True
        if hit and remaining == 0:
            status = DONE
            break
        if expansions >= exp_cap:
            status = EXPANSION_CAPPED
            break

        # capacity for one expansion's worth of inserts
        if (cnt + 64) * 5 >= keys.shape[0] * 3:
            keys, gv, flags, par = _ht_rehash(keys, gv, flags, par)
        if hn + 64 >= kf.shape[0]:
            kf = _grow_f64(kf)
            kg = _grow_f64(kg)
            pay = _grow_i64(pay)

        x = s & 255
        y = (s >> 8) & 255
        t = (s >> 16) & 63
        i0 = (s >> 22) & 7
        i1 = (s >> 25) & 7
        i2 = (s >> 28) & 7
        i3 = (s >> 31) & 7

        sc_s = _state_cost(landing, base, foot_rel, x, y, t, i0, i1, i2, i3)
        if not np.isfinite(sc_s):
            continue  # only possible for an infeasible start state

        h_here = _heuristic(hmode, x, y, t, res, c_per_m, c_per_step,
                            goal_x, goal_y, goal_t, fieldv)

        f0x = x + foot_rel[t, 0, i0, 0]
        f0y = y + foot_rel[t, 0, i0, 1]
        f1x = x + foot_rel[t, 1, i1, 0]
        f1y = y + foot_rel[t, 1, i1, 1]
        f2x = x + foot_rel[t, 2, i2, 0]
        f2y = y + foot_rel[t, 2, i2, 1]
        f3x = x + foot_rel[t, 3, i3, 0]
        f3y = y + foot_rel[t, 3, i3, 1]

        # -- drives ---------------------------------------------------------
        feet_drivable = (
            drivable[f0y, f0x] == 1 and drivable[f1y, f1x] == 1
            and drivable[f2y, f2x] == 1 and drivable[f3y, f3x] == 1
        )
        if feet_drivable:
            for k in range(20):
                dx = np.int64(drive_off[k, 0])
                dy = np.int64(drive_off[k, 1])
                ok = True
                for si in range(1, np.int64(sweep_lens[k])):
                    rx = sweeps[k, si, 0]
                    ry = sweeps[k, si, 1]
                    for fi in range(4):
                        if fi == 0:
                            fx, fy = f0x + rx, f0y + ry
                        elif fi == 1:
                            fx, fy = f1x + rx, f1y + ry
                        elif fi == 2:
                            fx, fy = f2x + rx, f2y + ry
                        else:
                            fx, fy = f3x + rx, f3y + ry
                        if fx < 0 or fx >= Wd or fy < 0 or fy >= H or drivable[fy, fx] != 1:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    continue
                nx = x + dx
                ny = y + dy
                sc_e = _state_cost(landing, base, foot_rel,
                                   nx, ny, t, i0, i1, i2, i3)
                if not np.isfinite(sc_e):
                    continue
                c = drive_len[k] * drive_rate
                c = c * misalign[t, k]
                c = c * ((sc_s + sc_e) * 0.5)
                c = _quantize(c)
                ns = (s & ~np.int64(65535)) | nx | (ny << 8)
                ng = gs + c
                if ng <= cost_cap:
                    hval = _heuristic(hmode, nx, ny, t, res, c_per_m, c_per_step,
                                      goal_x, goal_y, goal_t, fieldv)
                    cnt, hn = _relax(keys, gv, flags, par, cnt, kf, kg, pay, hn,
                                     ns, ng, ng + W * hval, s | (np.int64(k) << 40),
                                     track_parents)

        # -- turns ------------------------------------------------------------
        for dd in range(2):
            nt = (t + 1) % 64 if dd == 0 else (t + 63) % 64
            sc_e = _state_cost(landing, base, foot_rel,
                               x, y, nt, i0, i1, i2, i3)
            if not np.isfinite(sc_e):
                continue
            c = turn_rate * sc_e
            c = _quantize(c)
            ns = (s & ~np.int64(63 << 16)) | (np.int64(nt) << 16)
            ng = gs + c
            if ng <= cost_cap:
                hval = _heuristic(hmode, x, y, nt, res, c_per_m, c_per_step,
                                  goal_x, goal_y, goal_t, fieldv)
                cnt, hn = _relax(keys, gv, flags, par, cnt, kf, kg, pay, hn,
                                 ns, ng, ng + W * hval, s | (np.int64(20 + dd) << 40),
                                 track_parents)

        # -- foot moves and steps ---------------------------------------------
        for fi in range(4):
            if fi == 0:
                oi, ox, oy, fbits = i0, f0x, f0y, 22
            elif fi == 1:
                oi, ox, oy, fbits = i1, f1x, f1y, 25
            elif fi == 2:
                oi, ox, oy, fbits = i2, f2x, f2y, 28
            else:
                oi, ox, oy, fbits = i3, f3x, f3y, 31
            h_old = np.float64(height[oy, ox])
            for j in range(L):
                if j == oi:
                    continue
                nx = x + foot_rel[t, fi, j, 0]
                ny = y + foot_rel[t, fi, j, 1]
                if nx < 0 or nx >= Wd or ny < 0 or ny >= H:
                    continue
                land = np.float64(landing[ny, nx])
                if not np.isfinite(land):
                    continue
                h_new = np.float64(height[ny, nx])
                if np.isnan(h_old) or np.isnan(h_new):
                    continue
                dh = abs(h_new - h_old)
                ns = (s & ~(np.int64(7) << fbits)) | (np.int64(j) << fbits)
                d_off = np.float64(abs(lattice[j] - lattice[oi]))
                if dh <= drivable_delta:
                    c = d_off * res * foot_rate + land
                    c = _quantize(c)
                    ng = gs + c
                    if ng <= cost_cap:
                        code = np.int64(22 + fi * L + j)
                        cnt, hn = _relax(keys, gv, flags, par, cnt, kf, kg, pay, hn,
                                         ns, ng, ng + W * h_here, s | (code << 40),
                                         track_parents)
                if dh <= max_step_height:
                    c = step_fixed + land
                    c = _quantize(c)
                    ng = gs + c
                    if ng <= cost_cap:
                        code = np.int64(24 + 4 * L + fi * L + j)
                        cnt, hn = _relax(keys, gv, flags, par, cnt, kf, kg, pay, hn,
                                         ns, ng, ng + W * h_here, s | (code << 40),
                                         track_parents)

        # -- base shifts --------------------------------------------------------
        for dd in range(2):
            delta = -1 if dd == 0 else 1  # lattice index change per foot
            ok = True
            if delta == -1:
                if i0 == 0 or i1 == 0 or i2 == 0 or i3 == 0:
                    ok = False
            else:
                if i0 == L - 1 or i1 == L - 1 or i2 == L - 1 or i3 == L - 1:
                    ok = False
            if not ok:
                continue
            nx = x + shift_vec[t, dd, 0]
            ny = y + shift_vec[t, dd, 1]
            n0, n1, n2, n3 = i0 + delta, i1 + delta, i2 + delta, i3 + delta
            sc_e = _state_cost(landing, base, foot_rel,
                               nx, ny, t, n0, n1, n2, n3)
            if not np.isfinite(sc_e):
                continue
            c = spacing * res * shift_rate
            c = c * sc_e
            c = _quantize(c)
            ns = (np.int64(nx) | (np.int64(ny) << 8) | (np.int64(t) << 16)
                  | (np.int64(n0) << 22) | (np.int64(n1) << 25)
                  | (np.int64(n2) << 28) | (np.int64(n3) << 31))
            ng = gs + c
            if ng <= cost_cap:
                hval = _heuristic(hmode, nx, ny, t, res, c_per_m, c_per_step,
                                  goal_x, goal_y, goal_t, fieldv)
                code = np.int64(22 + 4 * L + dd)
                cnt, hn = _relax(keys, gv, flags, par, cnt, kf, kg, pay, hn,
                                 ns, ng, ng + W * hval, s | (code << 40),
                                 track_parents)

    if remaining == 0:
        status = DONE
    return goal_costs, expansions, status, keys, gv, flags, par


_DUMMY_FIELD = np.full((1, 1, 16), np.inf, dtype=np.float32)


def _run(model: EngineModel, start_packed: int, goals_packed: np.ndarray,
         W: float, hmode: int, goal_state, fieldv,
         cost_cap: float, exp_cap: int, track_parents: bool,
         init_cap: int = 1 << 16):
    gx, gy, gt = 0, 0, 0
    if goal_state is not None:
        gx, gy, gt = goal_state.x, goal_state.y, goal_state.theta
    if fieldv is None:
        fieldv = _DUMMY_FIELD
    return _search(
        model.landing, model.drivable, model.base, model.height,
        model.foot_rel, model.shift_vec, model.misalign, model.drive_off,
        model.drive_len, model.sweeps, model.sweep_lens, model.lattice,
        *model.cost_args,
        np.int64(start_packed), goals_packed.astype(np.int64),
        float(W), hmode, model.c_per_meter, model.c_per_theta_step,
        gx, gy, gt, fieldv,
        cost_cap, exp_cap, track_parents, init_cap,
    )


def _extract_path(model: EngineModel, keys, par, start_packed, goal_packed):
    states = [goal_packed]
    actions = []
    s = goal_packed
    while s != start_packed:
        slot = _ht_slot(keys, s)
        p = par[slot]
        if p == -1:
            break
        parent = p & STATE_MASK
        actions.append(model.decode_action(int(p >> 40)))
        states.append(parent)
        s = parent
    states.reverse()
    actions.reverse()
    return [model.unpack(int(k)) for k in states], actions


def plan(model: EngineModel, start: DetailedState, goal: DetailedState,
         W: float = 1.0, field: np.ndarray | None = None,
         cost_cap: float = math.inf, exp_cap: int = 1 << 62,
         track_path: bool = True, init_cap: int = 1 << 16):
    """Weighted A* from start to goal; geometric heuristic unless a
    heuristic field array is given. Returns (SearchResult | None, status).
    """
    t0 = time.perf_counter()
    sp = model.pack(start)
    gp = model.pack(goal)
    hmode = 2 if field is not None else 1
    goal_costs, expansions, status, keys, gv, flags, par = _run(
        model, sp, np.array([gp], dtype=np.int64), W, hmode, goal, field,
        cost_cap, exp_cap, track_path, init_cap=init_cap)
    dt = time.perf_counter() - t0
    if status != DONE:
        return None, status, expansions, dt
    if track_path:
        states, actions = _extract_path(model, keys, par, sp, gp)
    else:
        states, actions = [], []  # path omitted; cost and expansions valid
    return (SearchResult(states, actions, float(goal_costs[0]), int(expansions), dt),
            status, expansions, dt)


def dijkstra_costs(model: EngineModel, start: DetailedState,
                   goals: list[DetailedState],
                   cost_cap: float = math.inf, exp_cap: int = 1 << 62):
    """Exact shortest-path costs from start to each goal (inf if unreached
    within the caps). Returns (costs, expansions, status)."""
    sp = model.pack(start)
    gp = np.array([model.pack(g) for g in goals], dtype=np.int64)
    goal_costs, expansions, status, *_ = _run(
        model, sp, gp, 1.0, 0, None, None, cost_cap, exp_cap, False)
    return goal_costs, int(expansions), status
