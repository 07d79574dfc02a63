"""The coarse 3D robot representation and its mappings to the 7D space.

Abstract states live on a 10 cm grid with 16 orientations, one abstract
cell per 4x4 block of detailed cells and one abstract orientation per 4
detailed orientation steps.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from terraplan.detailed import (
    FOOT_LATTICE_FULL,
    N_THETA,
    NEIGHBORHOOD_20,
    DetailedSpace,
    DetailedState,
)
from terraplan.terrain import CostMap

N_THETA_ABSTRACT = 16
RATIO = 4  # detailed cells / orientations per abstract step
NEUTRAL_PREFERENCE = 0.01  # per cell of total foot offset


class AbstractState(NamedTuple):
    x: int
    y: int
    theta: int


class AbstractMove(NamedTuple):
    dx: int
    dy: int


class AbstractTurn(NamedTuple):
    dt: int


# The 20 move offsets are shared with the detailed Drive action set.
ABSTRACT_ACTIONS = tuple(
    [AbstractMove(dx, dy) for dx, dy in NEIGHBORHOOD_20]
    + [AbstractTurn(1), AbstractTurn(-1)]
)
assert len(ABSTRACT_ACTIONS) == 22


def apply_action(a: AbstractState, action) -> AbstractState:
    if isinstance(action, AbstractMove):
        return AbstractState(a.x + action.dx, a.y + action.dy, a.theta)
    return AbstractState(a.x, a.y, (a.theta + action.dt) % N_THETA_ABSTRACT)


def abstract_successors(a: AbstractState):
    """The 22 geometric (action, next_state) pairs; costs come from the
    learned model."""
    return [(action, apply_action(a, action)) for action in ABSTRACT_ACTIONS]


def to_abstract(d: DetailedState) -> AbstractState:
    """Drop foot offsets and round pose to the coarse lattice."""
    return AbstractState(
        (d.x + RATIO // 2) // RATIO,
        (d.y + RATIO // 2) // RATIO,
        ((d.theta + RATIO // 2) // RATIO) % N_THETA_ABSTRACT,
    )


def to_detailed(a: AbstractState, cmap: CostMap,
                lattice: tuple = FOOT_LATTICE_FULL,
                space: DetailedSpace | None = None) -> DetailedState | None:
    """Embed an abstract state as the cheapest feasible foot configuration.

    Minimizes state cost plus a small penalty on total foot displacement,
    which breaks ties toward the neutral configuration. The objective is
    separable per foot, so the per-foot minima give the same result as
    enumerating all foot combinations.
    """
    if space is None:
        space = DetailedSpace(cmap, lattice=lattice)
    x, y, theta = a.x * RATIO, a.y * RATIO, (a.theta * RATIO) % N_THETA
    if not cmap.in_bounds(x, y):
        return None
    if not math.isfinite(float(cmap.base_cost[y, x])):
        return None

    best_feet = []
    for f in range(4):
        best = None
        for k, off in enumerate(space.lattice):
            rel = space.foot_table[theta, f, k]
            fx, fy = x + int(rel[0]), y + int(rel[1])
            land = space._landing(fx, fy)
            if not math.isfinite(land):
                continue
            key = (land + NEUTRAL_PREFERENCE * abs(off), abs(off), off)
            if best is None or key < best[0]:
                best = (key, off)
        if best is None:
            return None
        best_feet.append(best[1])
    return DetailedState(x, y, theta, tuple(best_feet))
