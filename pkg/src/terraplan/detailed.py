"""The detailed 7D robot representation: states, actions, and costs.

A state is the base cell (2.5 cm grid), one of 64 headings, and a
longitudinal offset for each of the four feet. Lateral foot positions are
fixed; foot heights are resolved after planning and are not part of the
state.

All transition costs are rounded up to an integer multiple of 2^-30. Path
costs are then exact dyadic sums, so searches that find equal-cost paths
through different action orders report bit-identical totals, and rounding
up preserves admissibility of lower-bound heuristics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from terraplan.terrain import CostMap, TerrainClass

N_THETA = 64
THETA_STEP = 2.0 * math.pi / N_THETA
FOOT_LONG_CELLS = 14   # 0.35 m neutral longitudinal offset
FOOT_LAT_CELLS = 12    # 0.30 m fixed lateral offset

FOOT_LATTICE_FULL = (-4, -2, 0, 2, 4)
FOOT_LATTICE_REDUCED = (-4, 0, 4)

COST_QUANTUM_INV = 1073741824.0  # 2^30

# All lattice offsets with Chebyshev distance <= 2, except the origin and
# the four (+-2, +-2) corners (collinear with the (+-1, +-1) moves).
NEIGHBORHOOD_20 = tuple(sorted(
    (dx, dy)
    for dx in range(-2, 3)
    for dy in range(-2, 3)
    if (dx, dy) != (0, 0)
    and max(abs(dx), abs(dy)) <= 2
    and not (abs(dx) == 2 and abs(dy) == 2)
))
assert len(NEIGHBORHOOD_20) == 20


def quantize_cost(c: float) -> float:
    """Round a transition cost up to the next multiple of 2^-30."""
    return math.ceil(c * COST_QUANTUM_INV) / COST_QUANTUM_INV


class DetailedState(NamedTuple):
    x: int
    y: int
    theta: int
    feet: tuple  # four longitudinal offsets in cells, each on the lattice


class Drive(NamedTuple):
    dx: int
    dy: int


class Turn(NamedTuple):
    dt: int  # +1 or -1


class MoveFoot(NamedTuple):
    foot: int
    offset: int  # target lattice offset, cells


class ShiftBase(NamedTuple):
    direction: int  # +1 forward, -1 backward


class Step(NamedTuple):
    foot: int
    offset: int


@dataclass(frozen=True)
class CostParamsD:
    """Per-action cost weights of the detailed space."""

    drive_cost_per_meter: float = 1.0
    turn_cost_per_step: float = 0.15
    foot_move_cost_per_meter: float = 0.8
    base_shift_cost_per_meter: float = 1.0
    step_fixed_cost: float = 0.35
    misalignment_gain: float = 1.5  # factor = 1 + gain * |angle| / pi

    def misalignment_factor(self, angle: float) -> float:
        a = abs(math.atan2(math.sin(angle), math.cos(angle)))
        return 1.0 + self.misalignment_gain * a / math.pi

    def as_header_dict(self) -> dict:
        return {
            "drive_cost_per_meter": self.drive_cost_per_meter,
            "turn_cost_per_step": self.turn_cost_per_step,
            "foot_move_cost_per_meter": self.foot_move_cost_per_meter,
            "base_shift_cost_per_meter": self.base_shift_cost_per_meter,
            "step_fixed_cost": self.step_fixed_cost,
            "misalignment_gain": self.misalignment_gain,
        }


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def _build_foot_table(lattice: tuple) -> np.ndarray:
    """Foot cell offsets relative to the base cell: [theta, foot, off, 2]."""
    L = len(lattice)
    table = np.zeros((N_THETA, 4, L, 2), dtype=np.int16)
    # feet: 0 front-left, 1 front-right, 2 rear-left, 3 rear-right
    lat = (FOOT_LAT_CELLS, -FOOT_LAT_CELLS, FOOT_LAT_CELLS, -FOOT_LAT_CELLS)
    lon = (FOOT_LONG_CELLS, FOOT_LONG_CELLS, -FOOT_LONG_CELLS, -FOOT_LONG_CELLS)
    for t in range(N_THETA):
        c, s = math.cos(t * THETA_STEP), math.sin(t * THETA_STEP)
        for foot in range(4):
            for k, off in enumerate(lattice):
                u = lon[foot] + off
                v = lat[foot]
                table[t, foot, k, 0] = _round_half_up(c * u - s * v)
                table[t, foot, k, 1] = _round_half_up(s * u + c * v)
    return table


def _build_shift_table(spacing: int) -> np.ndarray:
    """Base cell displacement of a forward/backward shift: [theta, 2, 2]."""
    table = np.zeros((N_THETA, 2, 2), dtype=np.int16)
    for t in range(N_THETA):
        c, s = math.cos(t * THETA_STEP), math.sin(t * THETA_STEP)
        for d, sign in enumerate((1, -1)):
            table[t, d, 0] = _round_half_up(c * sign * spacing)
            table[t, d, 1] = _round_half_up(s * sign * spacing)
    return table


def _build_misalignment_table(params: CostParamsD) -> np.ndarray:
    table = np.zeros((N_THETA, 20), dtype=np.float64)
    for t in range(N_THETA):
        for k, (dx, dy) in enumerate(NEIGHBORHOOD_20):
            table[t, k] = params.misalignment_factor(
                math.atan2(dy, dx) - t * THETA_STEP)
    return table


def _build_sweeps() -> tuple[np.ndarray, np.ndarray]:
    """Cells a foot crosses for each drive offset, start cell included."""
    max_len = 0
    sweeps = []
    for dx, dy in NEIGHBORHOOD_20:
        n = 2 * max(abs(dx), abs(dy))
        cells = []
        for i in range(n + 1):
            t = i / n
            c = (int(_round_half_up(t * dx)), int(_round_half_up(t * dy)))
            if c not in cells:
                cells.append(c)
        sweeps.append(cells)
        max_len = max(max_len, len(cells))
    arr = np.zeros((20, max_len, 2), dtype=np.int8)
    lens = np.zeros(20, dtype=np.int8)
    for k, cells in enumerate(sweeps):
        lens[k] = len(cells)
        for i, (cx, cy) in enumerate(cells):
            arr[k, i, 0] = cx
            arr[k, i, 1] = cy
    return arr, lens


class DetailedSpace:
    """Successor model over a cost map for one foot lattice and cost params.

    Precomputes the per-heading foot placement, sweep, shift, and
    misalignment tables shared with the compiled search engine.
    """

    def __init__(self, cmap: CostMap, params: CostParamsD | None = None,
                 lattice: tuple = FOOT_LATTICE_FULL):
        self.cmap = cmap
        self.params = params or CostParamsD()
        lattice = tuple(lattice)
        spacings = {lattice[i + 1] - lattice[i] for i in range(len(lattice) - 1)}
        if len(spacings) != 1:
            raise ValueError("foot lattice must be uniformly spaced")
        self.lattice = lattice
        self.spacing = spacings.pop()
        self.foot_table = _build_foot_table(lattice)
        self.shift_table = _build_shift_table(self.spacing)
        self.misalign = _build_misalignment_table(self.params)
        self.sweeps, self.sweep_lens = _build_sweeps()
        self.drive_len_m = np.array(
            [math.hypot(dx, dy) * cmap.resolution for dx, dy in NEIGHBORHOOD_20],
            dtype=np.float64)
        self.off_index = {off: k for k, off in enumerate(lattice)}

    def geometric_constants(self) -> tuple[float, float]:
        """Admissible per-meter and per-orientation-step cost lower bounds.

        The flat state-cost floor is 0.5 (four feet at 0.1 plus base 0.1).
        Drives pay at least drive_rate * 0.5 per meter of base
        displacement; base shifts pay the nominal spacing but can displace
        farther after cell rounding, so their bound divides by the worst
        actual displacement over all headings.
        """
        p = self.params
        floor = 0.5
        res = self.cmap.resolution
        disp = np.hypot(self.shift_table[..., 0].astype(np.float64),
                        self.shift_table[..., 1].astype(np.float64))
        max_disp = float(disp.max()) * res
        shift_bound = (self.spacing * res * p.base_shift_cost_per_meter
                       * floor / max_disp)
        c_per_meter = min(p.drive_cost_per_meter * floor, shift_bound)
        c_per_step = p.turn_cost_per_step * floor
        return c_per_meter, c_per_step

    # -- state predicates ---------------------------------------------------

    def foot_cells(self, s: DetailedState) -> list[tuple[int, int]]:
        t = self.foot_table[s.theta]
        return [
            (s.x + int(t[f, self.off_index[s.feet[f]], 0]),
             s.y + int(t[f, self.off_index[s.feet[f]], 1]))
            for f in range(4)
        ]

    def _landing(self, x: int, y: int) -> float:
        if not self.cmap.in_bounds(x, y):
            return math.inf
        return float(self.cmap.landing_cost[y, x])

    def _drivable(self, x: int, y: int) -> bool:
        if not self.cmap.in_bounds(x, y):
            return False
        cls = self.cmap.terrain_class[y, x]
        return cls == TerrainClass.FLAT or cls == TerrainClass.ROUGH

    def _height(self, x: int, y: int) -> float:
        if not self.cmap.in_bounds(x, y):
            return math.nan
        return float(self.cmap.heights[y, x])

    def state_cost(self, s: DetailedState) -> float:
        """Base cost plus the four feet's standing costs; inf if infeasible."""
        if not self.cmap.in_bounds(s.x, s.y):
            return math.inf
        # Fixed summation order; the compiled engine mirrors it exactly.
        total = float(self.cmap.base_cost[s.y, s.x])
        for fx, fy in self.foot_cells(s):
            total = total + self._landing(fx, fy)
        return total

    # -- successor enumeration ----------------------------------------------

    def successors(self, s: DetailedState):
        """All legal (action, next_state, cost) transitions from ``s``."""
        p = self.params
        res = self.cmap.resolution
        out = []
        sc_s = self.state_cost(s)
        if not math.isfinite(sc_s):
            return out
        feet = self.foot_cells(s)

        # Drives require every swept foot cell, the start cells included,
        # to be drivable (FLAT or ROUGH).
        feet_drivable = all(self._drivable(fx, fy) for fx, fy in feet)
        if feet_drivable:
            for k, (dx, dy) in enumerate(NEIGHBORHOOD_20):
                ok = True
                for i in range(1, int(self.sweep_lens[k])):
                    rx, ry = int(self.sweeps[k, i, 0]), int(self.sweeps[k, i, 1])
                    for fx, fy in feet:
                        if not self._drivable(fx + rx, fy + ry):
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    continue
                ns = DetailedState(s.x + dx, s.y + dy, s.theta, s.feet)
                sc_e = self.state_cost(ns)
                if not math.isfinite(sc_e):
                    continue
                c = self.drive_len_m[k] * p.drive_cost_per_meter
                c = c * self.misalign[s.theta, k]
                c = c * ((sc_s + sc_e) * 0.5)
                out.append((Drive(dx, dy), ns, quantize_cost(c)))

        for dt in (1, -1):
            ns = DetailedState(s.x, s.y, (s.theta + dt) % N_THETA, s.feet)
            sc_e = self.state_cost(ns)
            if math.isfinite(sc_e):
                c = p.turn_cost_per_step * sc_e
                out.append((Turn(dt), ns, quantize_cost(c)))

        for f in range(4):
            old_off = s.feet[f]
            ox, oy = feet[f]
            h_old = self._height(ox, oy)
            for off in self.lattice:
                if off == old_off:
                    continue
                rel = self.foot_table[s.theta, f, self.off_index[off]]
                nx, ny = s.x + int(rel[0]), s.y + int(rel[1])
                land = self._landing(nx, ny)
                if not math.isfinite(land):
                    continue
                h_new = self._height(nx, ny)
                if math.isnan(h_old) or math.isnan(h_new):
                    continue
                dh = abs(h_new - h_old)
                new_feet = s.feet[:f] + (off,) + s.feet[f + 1:]
                ns = DetailedState(s.x, s.y, s.theta, new_feet)
                if dh <= self.cmap.params.drivable_delta:
                    c = abs(off - old_off) * res * p.foot_move_cost_per_meter + land
                    out.append((MoveFoot(f, off), ns, quantize_cost(c)))
                if dh <= self.cmap.params.max_step_height:
                    c = p.step_fixed_cost + land
                    out.append((Step(f, off), ns, quantize_cost(c)))

        lo, hi = self.lattice[0], self.lattice[-1]
        for d, direction in enumerate((1, -1)):
            delta = -direction * self.spacing
            if not all(lo <= off + delta <= hi for off in s.feet):
                continue
            vec = self.shift_table[s.theta, d]
            new_feet = tuple(off + delta for off in s.feet)
            ns = DetailedState(s.x + int(vec[0]), s.y + int(vec[1]),
                               s.theta, new_feet)
            sc_e = self.state_cost(ns)
            if not math.isfinite(sc_e):
                continue
            c = self.spacing * res * p.base_shift_cost_per_meter
            c = c * sc_e
            out.append((ShiftBase(direction), ns, quantize_cost(c)))

        return out


def footprint_positions(state: DetailedState,
                        resolution: float = 0.025) -> list[tuple[float, float]]:
    """World positions (meters) of the four feet for a state at origin-based
    cell coordinates."""
    theta = state.theta * THETA_STEP
    c, s = math.cos(theta), math.sin(theta)
    lat = (0.30, -0.30, 0.30, -0.30)
    lon = (0.35, 0.35, -0.35, -0.35)
    out = []
    for f in range(4):
        u = lon[f] + state.feet[f] * resolution
        v = lat[f]
        out.append((state.x * resolution + c * u - s * v,
                    state.y * resolution + s * u + c * v))
    return out


def state_cost(state: DetailedState, cmap: CostMap,
               lattice: tuple = FOOT_LATTICE_FULL) -> float:
    return DetailedSpace(cmap, lattice=lattice).state_cost(state)


def successors(state: DetailedState, cmap: CostMap,
               params: CostParamsD | None = None,
               lattice: tuple = FOOT_LATTICE_FULL):
    return DetailedSpace(cmap, params, lattice).successors(state)
