import math

import numpy as np
import pytest

from terraplan.abstraction import AbstractState
from terraplan.errors import FormatError, OutOfBoundsError
from terraplan.terrain import (
    CostParams,
    HeightMap,
    TerrainClass,
    UNKNOWN_SENTINEL,
    compute_cost_maps,
    extract_patch,
    load_heightmap_binary,
    load_heightmap_text,
    save_heightmap_binary,
    save_heightmap_text,
)


def brute_force_classes(h, p: CostParams):
    """Independent per-cell window scan re-deriving the classification."""
    H, W = h.shape
    cls = np.zeros((H, W), dtype=np.int8)
    half = p.foot_window // 2
    for y in range(H):
        for x in range(W):
            vals = []
            unknown = False
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    xx = min(max(x + dx, 0), W - 1)
                    yy = min(max(y + dy, 0), H - 1)
                    v = h[yy, xx]
                    if np.isnan(v):
                        unknown = True
                    else:
                        vals.append(v)
            if unknown:
                cls[y, x] = TerrainClass.UNKNOWN
                continue
            delta = max(vals) - min(vals)
            inner = []
            for dy in range(-2, 3):
                for dx in range(-2, 3):
                    xx = min(max(x + dx, 0), W - 1)
                    yy = min(max(y + dy, 0), H - 1)
                    inner.append(h[yy, xx])
            delta_in = max(inner) - min(inner)
            if delta <= p.drivable_delta:
                cls[y, x] = TerrainClass.FLAT
            elif delta <= p.rough_delta:
                cls[y, x] = TerrainClass.ROUGH
            elif delta <= p.max_step_height and delta_in <= p.drivable_delta:
                cls[y, x] = TerrainClass.STEP_ONLY
            else:
                cls[y, x] = TerrainClass.WALL
    return cls


class TestCostMaps:
    def test_flat_map_all_flat(self):
        cmap = compute_cost_maps(HeightMap(np.zeros((20, 20))))
        assert (cmap.terrain_class == TerrainClass.FLAT).all()
        assert np.allclose(cmap.foot_cost, 0.1)
        assert np.allclose(cmap.base_cost, 0.1)

    def test_wall_cells_infeasible(self):
        h = np.zeros((30, 30))
        h[10:14, 10:20] = 1.0
        cmap = compute_cost_maps(HeightMap(h))
        assert (cmap.terrain_class[11:13, 12:18] == TerrainClass.WALL).all()
        assert not np.isfinite(cmap.foot_cost[12, 14])
        assert not np.isfinite(cmap.landing_cost[12, 14])
        # ground beside and beneath the wall fails base clearance
        assert not np.isfinite(cmap.base_cost[9, 14])
        assert not np.isfinite(cmap.base_cost[16, 14])

    def test_stair_edge_matches_brute_force(self):
        h = np.zeros((24, 24))
        h[:, 12:] = 0.15
        p = CostParams()
        cmap = compute_cost_maps(HeightMap(h), p)
        expected = brute_force_classes(h, p)
        assert (cmap.terrain_class == expected).all()
        # a step-only band flanks the riser and the treads stay flat
        assert (cmap.terrain_class[:, 8] == TerrainClass.STEP_ONLY).all()
        assert (cmap.terrain_class[:, 2] == TerrainClass.FLAT).all()
        assert (cmap.terrain_class[:, 20] == TerrainClass.FLAT).all()

    def test_random_maps_match_brute_force(self):
        rng = np.random.default_rng(3)
        p = CostParams()
        for _ in range(4):
            h = np.zeros((16, 16))
            for _ in range(3):
                x, y = rng.integers(0, 12, 2)
                h[y:y + rng.integers(2, 5), x:x + rng.integers(2, 5)] = rng.uniform(0, 0.5)
            if rng.random() < 0.5:
                h[tuple(rng.integers(0, 16, 2))] = np.nan
            cmap = compute_cost_maps(HeightMap(h), p)
            assert (cmap.terrain_class == brute_force_classes(h, p)).all()

    def test_rough_cost_interpolates(self):
        h = np.zeros((20, 20))
        h[10, 10] = 0.06  # delta between drivable and rough thresholds
        cmap = compute_cost_maps(HeightMap(h))
        sel = cmap.terrain_class == TerrainClass.ROUGH
        assert sel.any()
        assert np.all(cmap.foot_cost[sel] > 0.1)
        assert np.all(cmap.foot_cost[sel] <= 1.0)

    def test_unknown_window_propagates(self):
        h = np.zeros((20, 20))
        h[10, 10] = np.nan
        cmap = compute_cost_maps(HeightMap(h))
        assert cmap.terrain_class[10, 10] == TerrainClass.UNKNOWN
        assert cmap.terrain_class[6, 6] == TerrainClass.UNKNOWN
        assert cmap.terrain_class[5, 5] == TerrainClass.FLAT
        assert not np.isfinite(cmap.base_cost[10, 10])

    def test_step_only_landing_cost(self):
        h = np.zeros((24, 24))
        h[:, 12:] = 0.15
        cmap = compute_cost_maps(HeightMap(h))
        sel = cmap.terrain_class == TerrainClass.STEP_ONLY
        assert not np.isfinite(cmap.foot_cost[sel]).any()
        assert np.allclose(cmap.landing_cost[sel], 1.0)

    def test_monotone_class_severity_under_raising(self):
        rng = np.random.default_rng(5)
        severity = {TerrainClass.FLAT: 0, TerrainClass.ROUGH: 1,
                    TerrainClass.STEP_ONLY: 2, TerrainClass.WALL: 2}
        h = np.zeros((14, 14))
        h[4:7, 4:7] = 0.05
        before = compute_cost_maps(HeightMap(h)).terrain_class
        for _ in range(20):
            h2 = h.copy()
            x, y = rng.integers(0, 14, 2)
            h2[y, x] += rng.uniform(0.01, 0.6)
            after = compute_cost_maps(HeightMap(h2)).terrain_class
            win = 4
            for yy in range(max(0, y - win), min(14, y + win + 1)):
                for xx in range(max(0, x - win), min(14, x + win + 1)):
                    b = severity[TerrainClass(before[yy, xx])]
                    a = severity[TerrainClass(after[yy, xx])]
                    assert a >= b or before[yy, xx] == TerrainClass.WALL


def affine_map(a, b, c, d, size=90, res=0.025):
    """Rasterize h(x, y) = a + b x + c y + d x y; bilinear-exact heights."""
    xs = np.arange(size) * res
    xx, yy = np.meshgrid(xs, xs)
    return HeightMap(a + b * xx + c * yy + d * xx * yy, resolution=res)


class TestExtractPatch:
    def test_flat_map_zero_patch(self):
        hmap = HeightMap(np.full((160, 160), 0.7))
        for theta in (0, 3, 9):
            p = extract_patch(hmap, AbstractState(20, 20, theta))
            assert np.allclose(p.values, 0.0)

    def test_center_is_zero_and_relative(self):
        hmap = affine_map(0.2, 0.05, -0.03, 0.0)
        p = extract_patch(hmap, AbstractState(11, 11, 0))
        assert p.values[36, 36] == 0.0

    def test_wall_left_appears_in_upper_rows(self):
        h = np.zeros((90, 90))
        h[60:64, :] = 1.0  # strip at large y: robot's left when theta = 0
        p = extract_patch(HeightMap(h), AbstractState(11, 11, 0))
        assert p.values[:36].max() < 0.5
        assert p.values[37:].max() > 0.5

    def test_rotated_state_swings_wall_to_forward_axis(self):
        h = np.zeros((90, 90))
        h[60:64, :] = 1.0
        # heading 90 deg: the +y wall lies ahead, so it lands at columns > 36
        p = extract_patch(HeightMap(h), AbstractState(11, 11, 4))
        assert p.values[:, 37:].max() > 0.5
        assert p.values[:, :30].max() < 0.5

    def test_bilinear_between_corner_values(self):
        """Nearest-neighbor style oracle: every sample lies within the value
        range of its four surrounding cells."""
        rng = np.random.default_rng(0)
        h = rng.uniform(0, 0.3, (90, 90))
        hmap = HeightMap(h)
        state = AbstractState(11, 11, 5)
        p = extract_patch(hmap, state)
        center = h[44, 44]
        theta = state.theta * 2 * math.pi / 16
        c, s = math.cos(theta), math.sin(theta)
        checked = 0
        for row in range(0, 72, 7):
            for col in range(0, 72, 7):
                u, v = col - 36, row - 36
                gx = 44 + u * c - v * s
                gy = 44 + u * s + v * c
                x0, y0 = int(math.floor(gx)), int(math.floor(gy))
                if not (0 <= x0 and x0 + 1 < 90 and 0 <= y0 and y0 + 1 < 90):
                    continue  # out-of-map samples carry the sentinel
                corners = h[y0:y0 + 2, x0:x0 + 2]
                val = p.values[row, col] + center
                assert corners.min() - 1e-5 <= val <= corners.max() + 1e-5
                checked += 1
        assert checked > 50

    def test_rotation_equivariance_on_smooth_map(self):
        # rotating the terrain by k * 22.5 deg about the state position and
        # adding k to theta leaves the patch unchanged (bilinear is exact on
        # affine-bilinear height fields)
        res = 0.025
        size = 120
        cx = cy = 14 * 4 * res  # abstract cell 14
        a, b, c, d = 0.1, 0.04, -0.06, 0.02
        base = affine_map(a, b, c, d, size=size)
        for k in (1, 5, 12):
            ang = k * 2 * math.pi / 16
            ca, sa = math.cos(ang), math.sin(ang)
            xs = np.arange(size) * res
            xx, yy = np.meshgrid(xs, xs)
            # heights of the map rotated by -ang about (cx, cy)
            rx = cx + (xx - cx) * ca + (yy - cy) * sa
            ry = cy - (xx - cx) * sa + (yy - cy) * ca
            rot = HeightMap(a + b * rx + c * ry + d * rx * ry, resolution=res)
            p0 = extract_patch(base, AbstractState(14, 14, 0))
            pk = extract_patch(rot, AbstractState(14, 14, k))
            inner = (slice(10, 62), slice(10, 62))  # rotated corners leave the map
            assert np.abs(p0.values[inner] - pk.values[inner]).max() < 1e-6

    def test_out_of_map_samples_become_sentinel(self):
        hmap = HeightMap(np.zeros((60, 60)))
        p = extract_patch(hmap, AbstractState(2, 2, 0))
        assert p.values[0, 0] == pytest.approx(UNKNOWN_SENTINEL)
        assert p.values[40, 40] == 0.0

    def test_unknown_cells_become_sentinel(self):
        h = np.zeros((90, 90))
        h[50, 50] = np.nan
        p = extract_patch(HeightMap(h), AbstractState(11, 11, 0))
        assert p.values[42, 42] == pytest.approx(UNKNOWN_SENTINEL)

    def test_center_outside_raises(self):
        hmap = HeightMap(np.zeros((60, 60)))
        with pytest.raises(OutOfBoundsError):
            extract_patch(hmap, AbstractState(40, 2, 0))


class TestHeightMapIO:
    def test_text_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        h = rng.normal(0, 0.5, (7, 9))
        h[2, 3] = np.nan
        m = HeightMap(h, resolution=0.05, origin=(1.25, -0.5))
        path = tmp_path / "m.hmap"
        save_heightmap_text(m, str(path))
        m2 = load_heightmap_text(str(path))
        assert m2.resolution == m.resolution
        assert m2.origin == m.origin
        assert np.array_equal(m2.heights, m.heights, equal_nan=True)

    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        h = rng.normal(0, 0.5, (5, 6)).astype(np.float32).astype(np.float64)
        h[1, 1] = np.nan
        m = HeightMap(h)
        path = tmp_path / "m.hmb"
        save_heightmap_binary(m, str(path))
        m2 = load_heightmap_binary(str(path))
        assert np.array_equal(m2.heights, m.heights, equal_nan=True)

    def test_truncated_binary_raises(self, tmp_path):
        path = tmp_path / "m.hmb"
        save_heightmap_binary(HeightMap(np.zeros((5, 5))), str(path))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(FormatError):
            load_heightmap_binary(str(path))

    def test_bad_magic_raises(self, tmp_path):
        path = tmp_path / "m.hmap"
        path.write_text("WRONG 1 1 0.025 0 0\n0.0\n")
        with pytest.raises(FormatError):
            load_heightmap_text(str(path))

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            HeightMap(np.zeros((0, 4)))
        with pytest.raises(ValueError):
            HeightMap(np.zeros((4, 4)), resolution=0.0)
        with pytest.raises(ValueError):
            HeightMap(np.full((4, 4), np.inf))
