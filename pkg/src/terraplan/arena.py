"""Benchmark arena construction.

The default arena is 4x4 m: a walled start room, a narrow door into a
small labyrinth, a second door into a cluttered zone, and a staircase onto
a platform that can only be reached by climbing. Goal poses mirror the
classic benchmark pattern (behind a door, on top of stairs, behind
clutter, inside the labyrinth, behind the robot).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from terraplan.abstraction import AbstractState
from terraplan.detailed import DetailedState
from terraplan.errors import SpecError
from terraplan.terrain import HeightMap


@dataclass
class WallSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    thickness: float = 0.1
    height: float = 1.0


@dataclass
class StairSpec:
    """Axis-aligned staircase climbing along +x/-x/+y/-y from (x, y)."""

    x: float
    y: float
    width: float
    n_steps: int
    rise: float
    run: float
    axis: str = "+y"


@dataclass
class PlatformSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    height: float


@dataclass
class BoxSpec:
    """A low cuboid; steppable when its top is flat and low enough."""

    cx: float
    cy: float
    size: float
    height: float


@dataclass
class ClutterSpec:
    x0: float
    y0: float
    x1: float
    y1: float
    count: int = 5
    size_range: tuple = (0.15, 0.30)
    height_range: tuple = (0.12, 0.22)
    keepout: list = field(default_factory=list)  # (x0, y0, x1, y1) rects


@dataclass
class ArenaSpec:
    size_m: float = 4.0
    resolution: float = 0.025
    walls: list = field(default_factory=list)
    stairs: list = field(default_factory=list)
    platforms: list = field(default_factory=list)
    boxes: list = field(default_factory=list)
    clutter: list = field(default_factory=list)


def _rect_mask(xx, yy, x0, y0, x1, y1):
    return (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)


def build_arena(spec: ArenaSpec, rng: np.random.Generator | None = None) -> HeightMap:
    """Rasterize an arena description onto a height map.

    Raises SpecError for geometry outside the arena or for staircases and
    platforms that intersect a wall (unbuildable overlaps). Clutter
    samples that collide with other structures or keepout zones are
    re-drawn.
    """
    rng = rng or np.random.default_rng(0)
    n = round(spec.size_m / spec.resolution)
    h = np.zeros((n, n), dtype=np.float64)
    coords = np.arange(n) * spec.resolution
    xx, yy = np.meshgrid(coords, coords)

    wall_mask = np.zeros_like(h, dtype=bool)
    for w in spec.walls:
        if not (0 <= min(w.x0, w.x1) and max(w.x0, w.x1) <= spec.size_m
                and 0 <= min(w.y0, w.y1) and max(w.y0, w.y1) <= spec.size_m):
            raise SpecError(f"wall outside arena: {w}")
        length = math.hypot(w.x1 - w.x0, w.y1 - w.y0)
        if length == 0:
            raise SpecError(f"zero-length wall: {w}")
        angle = math.atan2(w.y1 - w.y0, w.x1 - w.x0)
        cxm = (w.x0 + w.x1) / 2
        cym = (w.y0 + w.y1) / 2
        c, s = math.cos(angle), math.sin(angle)
        lu = (xx - cxm) * c + (yy - cym) * s
        lv = -(xx - cxm) * s + (yy - cym) * c
        m = (np.abs(lu) <= length / 2 + w.thickness / 2) & (np.abs(lv) <= w.thickness / 2)
        wall_mask |= m
        h[m] = np.maximum(h[m], w.height)

    struct_mask = np.zeros_like(h, dtype=bool)
    for st in spec.stairs:
        total = st.n_steps * st.run
        if st.axis in ("+y", "-y"):
            x0, x1 = st.x, st.x + st.width
            y0, y1 = (st.y, st.y + total) if st.axis == "+y" else (st.y - total, st.y)
        else:
            y0, y1 = st.y, st.y + st.width
            x0, x1 = (st.x, st.x + total) if st.axis == "+x" else (st.x - total, st.x)
        m = _rect_mask(xx, yy, x0, y0, x1, y1)
        if (m & wall_mask).any():
            raise SpecError(f"staircase intersects a wall: {st}")
        along = {"+y": yy - st.y, "-y": st.y - yy,
                 "+x": xx - st.x, "-x": st.x - xx}[st.axis]
        step_idx = np.floor_divide(along, st.run)
        step_h = (step_idx + 1) * st.rise
        h[m] = np.maximum(h[m], step_h[m])
        struct_mask |= m

    for p in spec.platforms:
        m = _rect_mask(xx, yy, p.x0, p.y0, p.x1, p.y1)
        if (m & wall_mask).any():
            raise SpecError(f"platform intersects a wall: {p}")
        h[m] = np.maximum(h[m], p.height)
        struct_mask |= m

    for b in spec.boxes:
        m = _rect_mask(xx, yy, b.cx - b.size / 2, b.cy - b.size / 2,
                       b.cx + b.size / 2, b.cy + b.size / 2)
        if (m & (wall_mask | struct_mask)).any():
            raise SpecError(f"box intersects another structure: {b}")
        h[m] = np.maximum(h[m], b.height)
        struct_mask |= m

    for cl in spec.clutter:
        placed = 0
        tries = 0
        while placed < cl.count and tries < 200:
            tries += 1
            size = rng.uniform(*cl.size_range)
            cx = rng.uniform(cl.x0 + size / 2, cl.x1 - size / 2)
            cy = rng.uniform(cl.y0 + size / 2, cl.y1 - size / 2)
            hgt = rng.uniform(*cl.height_range)
            m = _rect_mask(xx, yy, cx - size / 2, cy - size / 2,
                           cx + size / 2, cy + size / 2)
            if (m & (wall_mask | struct_mask)).any():
                continue
            if any(_rect_mask(np.array(cx), np.array(cy), *ko) for ko in cl.keepout):
                continue
            h[m] = np.maximum(h[m], hgt)
            placed += 1

    return HeightMap(heights=h, resolution=spec.resolution, origin=(0.0, 0.0))


@dataclass
class BenchGoal:
    name: str
    state: AbstractState


def default_arena() -> tuple[ArenaSpec, DetailedState, list[BenchGoal]]:
    """The 4x4 m benchmark arena, its start state, and the goal poses.

    West half: start room, a 1.0 m door north into the labyrinth (one
    internal wall forcing an S path). East of the x = 2.3 divider: a
    second door, a cluttered zone with two boxes tucked against
    alternating walls (weave or step over), and a 3-step staircase onto a
    0.36 m platform that is walled off everywhere else.
    """
    walls = [
        WallSpec(0.0, 0.05, 4.0, 0.05),
        WallSpec(0.0, 3.95, 4.0, 3.95),
        WallSpec(0.05, 0.0, 0.05, 4.0),
        WallSpec(3.95, 0.0, 3.95, 4.0),
        # labyrinth south wall with a 1.0 m door at x in [1.25, 2.25]
        WallSpec(0.0, 2.0, 1.25, 2.0),
        WallSpec(2.25, 2.0, 2.35, 2.0),
        # east divider with a 1.0 m door at y in [0.45, 1.45]
        WallSpec(2.3, 0.0, 2.3, 0.45),
        WallSpec(2.3, 1.45, 2.3, 4.0),
        # labyrinth internal wall
        WallSpec(1.15, 2.0, 1.15, 2.9),
        # seal between divider and the stairs flank
        WallSpec(2.3, 2.0, 2.78, 2.0),
        # stairs west flank
        WallSpec(2.84, 2.0, 2.84, 3.9),
    ]
    stairs = [StairSpec(x=2.9, y=2.0, width=1.0, n_steps=3,
                        rise=0.12, run=0.35, axis="+y")]
    platforms = [PlatformSpec(2.9, 3.05, 3.9, 3.9, height=0.36)]
    boxes = [
        BoxSpec(2.58, 0.80, 0.26, 0.16),  # against the divider
        BoxSpec(3.62, 1.15, 0.26, 0.16),  # against the east perimeter
    ]
    spec = ArenaSpec(walls=walls, stairs=stairs, platforms=platforms,
                     boxes=boxes)
    start = DetailedState(40, 36, 0, (0, 0, 0, 0))  # (1.0 m, 0.9 m) facing +x
    goals = [
        BenchGoal("door", AbstractState(17, 24, 4)),        # just past the door
        BenchGoal("stairs_top", AbstractState(34, 35, 4)),  # on the platform
        BenchGoal("clutter", AbstractState(33, 15, 0)),     # behind the clutter
        BenchGoal("labyrinth", AbstractState(6, 25, 8)),    # pocket behind the wall
        BenchGoal("behind", AbstractState(5, 6, 8)),        # behind the robot
    ]
    return spec, start, goals
