import itertools
import math

import numpy as np
import pytest

from terraplan.abstraction import (
    ABSTRACT_ACTIONS,
    AbstractMove,
    AbstractState,
    AbstractTurn,
    abstract_successors,
    apply_action,
    to_abstract,
    to_detailed,
)
from terraplan.detailed import (
    FOOT_LATTICE_FULL,
    NEIGHBORHOOD_20,
    DetailedSpace,
    DetailedState,
)
from terraplan.terrain import HeightMap, compute_cost_maps


@pytest.fixture(scope="module")
def flat_cmap():
    return compute_cost_maps(HeightMap(np.zeros((96, 96))))


class TestToAbstract:
    def test_origin(self):
        assert to_abstract(DetailedState(0, 0, 0, (0, 0, 0, 0))) == AbstractState(0, 0, 0)

    def test_theta_rounding(self):
        d = DetailedState(0, 0, 33, (0, 0, 0, 0))
        assert to_abstract(d).theta == 8

    def test_position_rounding(self):
        # 0.125 m = cell 5 and 0.075 m = cell 3 both round to abstract cell 1
        d = DetailedState(5, 3, 0, (0, 0, 0, 0))
        a = to_abstract(d)
        assert (a.x, a.y) == (1, 1)

    def test_theta_wraps(self):
        d = DetailedState(0, 0, 63, (0, 0, 0, 0))
        assert to_abstract(d).theta == 0


class TestToDetailed:
    def test_flat_map_neutral(self, flat_cmap):
        d = to_detailed(AbstractState(12, 12, 0), flat_cmap)
        assert d == DetailedState(48, 48, 0, (0, 0, 0, 0))

    def test_round_trip_on_flat(self, flat_cmap):
        for a in [AbstractState(10, 10, 0), AbstractState(12, 9, 5),
                  AbstractState(11, 13, 15)]:
            d = to_detailed(a, flat_cmap)
            assert d is not None
            assert to_abstract(d) == a

    def test_blocked_base_returns_none(self):
        h = np.zeros((96, 96))
        h[40:56, 40:56] = 1.0
        cmap = compute_cost_maps(HeightMap(h))
        assert to_detailed(AbstractState(12, 12, 0), cmap) is None

    def test_outside_map_returns_none(self, flat_cmap):
        assert to_detailed(AbstractState(500, 2, 0), flat_cmap) is None

    def test_matches_exhaustive_enumeration(self):
        """Oracle: brute-force search over all 5^4 foot combinations."""
        h = np.zeros((96, 96))
        # low bump near a foot: blocks landings without failing base clearance
        h[60:62, 52:54] = 0.12
        cmap = compute_cost_maps(HeightMap(h))
        space = DetailedSpace(cmap)
        a = AbstractState(12, 12, 3)
        got = to_detailed(a, cmap, space=space)

        best = None
        x, y, theta = 48, 48, 12
        for feet in itertools.product(FOOT_LATTICE_FULL, repeat=4):
            s = DetailedState(x, y, theta, feet)
            sc = space.state_cost(s)
            if not math.isfinite(sc):
                continue
            key = sc + 0.01 * sum(abs(f) for f in feet)
            if best is None or key < best[0] - 1e-12:
                best = (key, s)
        assert best is not None
        assert got is not None
        got_key = space.state_cost(got) + 0.01 * sum(abs(f) for f in got.feet)
        assert got_key == pytest.approx(best[0], abs=1e-9)

    def test_shifted_foot_avoids_obstacle(self):
        h = np.zeros((96, 96))
        # low bump on the neutral front-left foot cell of (48, 48, 0)
        h[59:62, 61:64] = 0.12
        cmap = compute_cost_maps(HeightMap(h))
        d = to_detailed(AbstractState(12, 12, 0), cmap)
        assert d is not None
        assert d.feet[0] != 0
        space = DetailedSpace(cmap)
        assert math.isfinite(space.state_cost(d))


class TestAbstractActions:
    def test_exactly_22(self):
        assert len(ABSTRACT_ACTIONS) == 22
        moves = [a for a in ABSTRACT_ACTIONS if isinstance(a, AbstractMove)]
        turns = [a for a in ABSTRACT_ACTIONS if isinstance(a, AbstractTurn)]
        assert len(moves) == 20
        assert len(turns) == 2

    def test_moves_share_drive_offsets(self):
        moves = {(a.dx, a.dy) for a in ABSTRACT_ACTIONS if isinstance(a, AbstractMove)}
        assert moves == set(NEIGHBORHOOD_20)

    def test_successors_cardinality(self):
        succ = abstract_successors(AbstractState(5, 5, 3))
        assert len(succ) == 22
        assert len({ns for _, ns in succ}) == 22

    def test_move_negation_returns(self):
        a = AbstractState(4, 7, 2)
        b = apply_action(a, AbstractMove(2, 1))
        c = apply_action(b, AbstractMove(-2, -1))
        assert c == a

    def test_turn_wraps(self):
        a = AbstractState(0, 0, 15)
        assert apply_action(a, AbstractTurn(1)).theta == 0
        assert apply_action(AbstractState(0, 0, 0), AbstractTurn(-1)).theta == 15
