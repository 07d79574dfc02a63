"""Height-map storage, terrain cost maps, and canonical patch extraction.

Heights are stored as float64 with NaN marking unknown cells. Cost maps
classify every cell by the height variation inside a foot-sized window and
derive per-cell foot (driving) costs, standing/landing costs, and base
clearance costs from the classification.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from terraplan.errors import FormatError, OutOfBoundsError

PATCH_SIZE = 72
PATCH_CENTER = PATCH_SIZE // 2
UNKNOWN_SENTINEL = 2.0  # meters; far above max step height
DEFAULT_RESOLUTION = 0.025

INFEASIBLE = float("inf")


class TerrainClass(IntEnum):
    FLAT = 0
    ROUGH = 1
    STEP_ONLY = 2
    WALL = 3
    UNKNOWN = 4


@dataclass(frozen=True)
class CostParams:
    """Thresholds and window sizes for terrain classification."""

    drivable_delta: float = 0.04
    rough_delta: float = 0.08
    max_step_height: float = 0.30
    foot_window: int = 9
    base_window: int = 25
    base_clearance: float = 0.30

    def as_header_dict(self) -> dict:
        return {
            "drivable_delta": self.drivable_delta,
            "rough_delta": self.rough_delta,
            "max_step_height": self.max_step_height,
            "foot_window": self.foot_window,
            "base_window": self.base_window,
            "base_clearance": self.base_clearance,
        }


@dataclass
class HeightMap:
    """Gridded terrain heights; NaN cells are unknown.

    ``origin`` is the world position of the center of cell (0, 0). Cell
    (x, y) maps to world ``origin + resolution * (x, y)``. The array is
    indexed ``heights[y, x]``.
    """

    heights: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 2:
            raise ValueError("heights must be a 2D array")
        if self.heights.shape[0] < 1 or self.heights.shape[1] < 1:
            raise ValueError("map must have at least one cell per axis")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        known = self.heights[~np.isnan(self.heights)]
        if known.size and not np.all(np.isfinite(known)):
            raise ValueError("known heights must be finite")

    @property
    def width_cells(self) -> int:
        return self.heights.shape[1]

    @property
    def height_cells(self) -> int:
        return self.heights.shape[0]

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width_cells and 0 <= y < self.height_cells

    def cell_world(self, x: int, y: int) -> tuple[float, float]:
        return (self.origin[0] + x * self.resolution,
                self.origin[1] + y * self.resolution)


@dataclass
class CostMap:
    """Per-cell terrain classification and traversal costs.

    ``foot_cost`` is the cost of a wheel rolling over the cell and is
    infinite on STEP_ONLY, WALL, and UNKNOWN cells. ``landing_cost`` is the
    cost of a foot standing on the cell: it equals ``foot_cost`` on
    FLAT/ROUGH cells, is 1.0 on STEP_ONLY cells (stepping onto tread edges
    is allowed at maximum cost), and infinite otherwise. ``base_cost`` is
    infinite where the body cannot pass.
    """

    terrain_class: np.ndarray  # int8 [H, W]
    foot_cost: np.ndarray      # float32 [H, W], inf = infeasible
    landing_cost: np.ndarray   # float32 [H, W], inf = infeasible
    base_cost: np.ndarray      # float32 [H, W], inf = infeasible
    heights: np.ndarray        # float32 [H, W], NaN = unknown
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)
    params: CostParams = field(default_factory=CostParams)

    @property
    def width_cells(self) -> int:
        return self.terrain_class.shape[1]

    @property
    def height_cells(self) -> int:
        return self.terrain_class.shape[0]

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width_cells and 0 <= y < self.height_cells


def compute_cost_maps(hmap: HeightMap, params: CostParams | None = None) -> CostMap:
    """Classify terrain and derive foot, landing, and base costs.

    Classification uses the max-min height spread inside the foot window
    (clipped at map borders): FLAT up to ``drivable_delta``, ROUGH up to
    ``rough_delta`` with a linearly rising cost, STEP_ONLY up to
    ``max_step_height`` when the inner 5x5 region is itself flat, and WALL
    beyond. Any unknown cell inside the window makes the cell UNKNOWN. The
    base cost is infinite wherever some cell inside the base window rises
    more than ``base_clearance`` above the center cell.
    """
    p = params or CostParams()
    h = hmap.heights
    nan_mask = np.isnan(h)

    fw = p.foot_window
    inner = 5

    h_neg = np.where(nan_mask, -np.inf, h)
    h_pos = np.where(nan_mask, np.inf, h)

    # mode="nearest" replicates border values, which for max/min filters is
    # equivalent to clipping the window at the map edge.
    win_max = maximum_filter(h_neg, size=fw, mode="nearest")
    win_min = minimum_filter(h_pos, size=fw, mode="nearest")
    delta = win_max - win_min

    in_max = maximum_filter(h_neg, size=inner, mode="nearest")
    in_min = minimum_filter(h_pos, size=inner, mode="nearest")
    delta_in = in_max - in_min

    unknown_win = maximum_filter(nan_mask.astype(np.uint8), size=fw, mode="nearest") > 0

    cls = np.full(h.shape, TerrainClass.WALL, dtype=np.int8)
    cls[delta <= p.rough_delta] = TerrainClass.ROUGH
    cls[delta <= p.drivable_delta] = TerrainClass.FLAT
    step_only = (
        (delta > p.rough_delta)
        & (delta <= p.max_step_height)
        & (delta_in <= p.drivable_delta)
    )
    cls[step_only] = TerrainClass.STEP_ONLY
    cls[unknown_win] = TerrainClass.UNKNOWN

    foot = np.full(h.shape, np.inf, dtype=np.float32)
    foot[cls == TerrainClass.FLAT] = 0.1
    rough = cls == TerrainClass.ROUGH
    foot[rough] = (
        0.1 + 0.9 * (delta[rough] - p.drivable_delta) / (p.rough_delta - p.drivable_delta)
    ).astype(np.float32)

    landing = foot.copy()
    landing[cls == TerrainClass.STEP_ONLY] = 1.0

    # The body is infeasible where the window rises above clearance over the
    # center, and symmetrically where the center towers over the window
    # (otherwise the base could ride on top of an obstacle while the feet
    # stand on the ground around it).
    bw = p.base_window
    base_max = maximum_filter(h_neg, size=bw, mode="nearest")
    base_min = minimum_filter(h_pos, size=bw, mode="nearest")
    base_unknown = maximum_filter(nan_mask.astype(np.uint8), size=bw, mode="nearest") > 0
    base = np.full(h.shape, 0.1, dtype=np.float32)
    base[(base_max - h) > p.base_clearance] = np.inf
    base[(h - base_min) > p.base_clearance] = np.inf
    base[base_unknown] = np.inf
    base[nan_mask] = np.inf

    return CostMap(
        terrain_class=cls,
        foot_cost=foot,
        landing_cost=landing,
        base_cost=base,
        heights=h.astype(np.float32),
        resolution=hmap.resolution,
        origin=hmap.origin,
        params=p,
    )


@dataclass
class Patch:
    """A 72x72 height sample centered on an abstract state.

    Heights are relative to the center sample; unknown samples carry the
    ``UNKNOWN_SENTINEL`` value. The sampling frame is rotated so the robot
    heading maps to the patch +x axis: ``values[row, col]`` samples the
    point ``(col - 36)`` cells ahead and ``(row - 36)`` cells to the left
    of the robot.
    """

    values: np.ndarray  # float32 [72, 72]
    center_state: tuple  # AbstractState

    def __post_init__(self):
        if self.values.shape != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError("patch must be 72x72")


def extract_patch(hmap: HeightMap, state) -> Patch:
    """Sample a heading-aligned, center-relative 72x72 patch.

    ``state`` is an AbstractState (10 cm grid, 16 orientations); the patch
    is sampled on the detailed 2.5 cm grid via bilinear interpolation.
    Samples outside the map, or with any unknown contributing cell, become
    the unknown sentinel.
    """
    cx = 4 * state.x
    cy = 4 * state.y
    if not hmap.in_bounds(cx, cy):
        raise OutOfBoundsError(f"patch center cell ({cx}, {cy}) outside map")

    theta = state.theta * (2.0 * np.pi / 16.0)
    c, s = np.cos(theta), np.sin(theta)

    u = np.arange(PATCH_SIZE, dtype=np.float64) - PATCH_CENTER  # forward, cells
    v = np.arange(PATCH_SIZE, dtype=np.float64) - PATCH_CENTER  # left, cells
    uu, vv = np.meshgrid(u, v)  # vv varies along rows
    gx = cx + uu * c - vv * s
    gy = cy + uu * s + vv * c

    vals = _bilinear_nan(hmap.heights, gx, gy)

    center_h = hmap.heights[cy, cx]
    if np.isnan(center_h):
        center_h = 0.0
    out = vals - center_h
    out[np.isnan(vals)] = UNKNOWN_SENTINEL
    return Patch(values=out.astype(np.float32), center_state=state)


def _bilinear_nan(h: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear sampling; NaN wherever any contributing cell is unknown or
    out of bounds."""
    H, W = h.shape
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0

    # Exact grid hits only need one cell; bilinear with fx = fy = 0 reads
    # the (x0, y0) corner alone, so the x0+1/y0+1 corners may be clamped
    # duplicates without affecting the result when the fraction is zero.
    oob = (gx < 0) | (gy < 0) | (gx > W - 1) | (gy > H - 1)
    x0c = np.clip(x0, 0, W - 1)
    y0c = np.clip(y0, 0, H - 1)
    x1c = np.clip(x0 + 1, 0, W - 1)
    y1c = np.clip(y0 + 1, 0, H - 1)

    v00 = h[y0c, x0c]
    v10 = h[y0c, x1c]
    v01 = h[y1c, x0c]
    v11 = h[y1c, x1c]

    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy

    # A corner with zero weight must not poison the sample with its NaN.
    def term(v, w):
        t = v * w
        t[w == 0] = 0.0
        return t

    out = term(v00, w00) + term(v10, w10) + term(v01, w01) + term(v11, w11)
    out[oob] = np.nan
    return out


# -- height-map file formats -------------------------------------------------

_HMAP_MAGIC = "HMAP1"
_HMB_MAGIC = b"HMB1"


def save_heightmap_text(hmap: HeightMap, path: str) -> None:
    with open(path, "w") as f:
        f.write(
            f"{_HMAP_MAGIC} {hmap.width_cells} {hmap.height_cells} "
            f"{hmap.resolution!r} {hmap.origin[0]!r} {hmap.origin[1]!r}\n"
        )
        for row in hmap.heights:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_heightmap_text(path: str) -> HeightMap:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 6 or header[0] != _HMAP_MAGIC:
            raise FormatError(f"bad height-map header in {path}")
        w, h = int(header[1]), int(header[2])
        res, ox, oy = float(header[3]), float(header[4]), float(header[5])
        data = np.loadtxt(f, dtype=np.float64, ndmin=2)
    if data.shape != (h, w):
        raise FormatError(f"expected {h}x{w} cells, found {data.shape}")
    return HeightMap(heights=data, resolution=res, origin=(ox, oy))


def save_heightmap_binary(hmap: HeightMap, path: str) -> None:
    with open(path, "wb") as f:
        f.write(_HMB_MAGIC)
        f.write(struct.pack("<IIfff", hmap.width_cells, hmap.height_cells,
                            hmap.resolution, hmap.origin[0], hmap.origin[1]))
        f.write(hmap.heights.astype("<f4").tobytes())


def load_heightmap_binary(path: str) -> HeightMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _HMB_MAGIC:
            raise FormatError(f"bad magic {magic!r} in {path}")
        try:
            w, h, res, ox, oy = struct.unpack("<IIfff", f.read(20))
        except struct.error as e:
            raise FormatError(f"truncated header in {path}") from e
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != w * h:
        raise FormatError(f"expected {w * h} cells, found {data.size}")
    return HeightMap(heights=data.reshape(h, w).astype(np.float64),
                     resolution=float(res), origin=(float(ox), float(oy)))
