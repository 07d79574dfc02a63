"""Procedural training-map generation and oracle labeling.

Each map is one 72x72-cell patch (1.8 m at 2.5 cm). Obstacles are placed
uniformly at random; ten categories cover cuboids, walls, staircases,
their combinations, a staircase aligned with the robot heading, and a
flat control category. Labels come from an exact shortest-path search in
the detailed space: the robot starts embedded at the patch center and each
of the 22 coarse actions becomes one task with a feasibility flag and a
normalized cost.
"""

from __future__ import annotations

import io
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from terraplan.abstraction import (
    ABSTRACT_ACTIONS,
    AbstractMove,
    AbstractState,
    apply_action,
    to_detailed,
)
from terraplan.detailed import CostParamsD, DetailedSpace, FOOT_LATTICE_FULL
from terraplan.engine import EngineModel, dijkstra_costs
from terraplan.errors import FormatError
from terraplan.terrain import (
    CostParams,
    HeightMap,
    PATCH_SIZE,
    compute_cost_maps,
    extract_patch,
)

COST_SCALE = 10.0
MAP_CELLS = PATCH_SIZE
CENTER_ABSTRACT = AbstractState(MAP_CELLS // 8, MAP_CELLS // 8, 0)  # cell (36, 36)

# Labeling search bounds. A task whose true cost exceeds the cost cap, or
# that is not settled within the expansion cap, is recorded as infeasible;
# both bounds are written into the dataset header.
LABEL_COST_CAP = 8.0
LABEL_EXPANSION_CAP = 1_000_000

CATEGORIES = (
    "cuboid1", "cuboid2", "cuboid3",
    "wall1", "wall2", "cuboid_wall",
    "stairs", "stairs_wall", "stairs_axis",
    "flat",
)

TASK_DTYPE = np.dtype([
    ("map_id", "<u4"),
    ("dx", "i1"),
    ("dy", "i1"),
    ("dtheta", "i1"),
    ("feasible", "u1"),
    ("cost", "<f4"),
])


class MapRejected(Exception):
    """No valid detailed start state exists at the patch center."""


# -- obstacle rasterization ----------------------------------------------------


def _cell_centers(res: float) -> tuple[np.ndarray, np.ndarray]:
    coords = np.arange(MAP_CELLS) * res
    return np.meshgrid(coords, coords)  # xx[y, x], yy[y, x]


def _place_box(h: np.ndarray, res: float, cx: float, cy: float, angle: float,
               len_u: float, len_v: float, height: float) -> None:
    xx, yy = _cell_centers(res)
    c, s = math.cos(angle), math.sin(angle)
    lu = (xx - cx) * c + (yy - cy) * s
    lv = -(xx - cx) * s + (yy - cy) * c
    mask = (np.abs(lu) <= len_u / 2) & (np.abs(lv) <= len_v / 2)
    h[mask] = np.maximum(h[mask], height)


def _place_cuboid(h: np.ndarray, res: float, rng: np.random.Generator) -> None:
    side_u = rng.uniform(0.1, 0.6)
    side_v = rng.uniform(0.1, 0.6)
    height = rng.uniform(0.1, 1.0)
    angle = rng.uniform(0.0, math.pi)
    cx, cy = rng.uniform(0.0, MAP_CELLS * res, size=2)
    _place_box(h, res, cx, cy, angle, side_u, side_v, height)


def _place_wall(h: np.ndarray, res: float, rng: np.random.Generator) -> None:
    length = rng.uniform(0.3, 1.8)
    height = rng.uniform(0.5, 1.5)
    thickness = rng.uniform(0.05, 0.1)
    angle = rng.uniform(0.0, math.pi)
    cx, cy = rng.uniform(0.0, MAP_CELLS * res, size=2)
    _place_box(h, res, cx, cy, angle, length, thickness, height)


def _place_staircase(h: np.ndarray, res: float, rng: np.random.Generator,
                     near_axis: bool) -> None:
    width = rng.uniform(0.6, 1.6)
    n_stairs = int(rng.integers(2, 7))
    rise = rng.uniform(0.1, 0.2)
    run = rng.uniform(0.25, 0.35)
    if near_axis:
        angle = rng.uniform(-math.pi / 16, math.pi / 16)
    else:
        angle = rng.uniform(0.0, 2.0 * math.pi)
    cx, cy = rng.uniform(0.0, MAP_CELLS * res, size=2)

    xx, yy = _cell_centers(res)
    c, s = math.cos(angle), math.sin(angle)
    lu = (xx - cx) * c + (yy - cy) * s       # climb direction
    lv = -(xx - cx) * s + (yy - cy) * c
    total = n_stairs * run
    inside = (lu >= 0) & (lu < total) & (np.abs(lv) <= width / 2)
    step_idx = np.floor_divide(lu, run).astype(np.int64)
    step_h = (step_idx + 1) * rise
    h[inside] = np.maximum(h[inside], step_h[inside])


def generate_map(category: str, rng: np.random.Generator,
                 resolution: float = 0.025) -> HeightMap:
    """One random 72x72 map of the given obstacle category."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    h = np.zeros((MAP_CELLS, MAP_CELLS), dtype=np.float64)
    res = resolution
    if category == "cuboid1":
        _place_cuboid(h, res, rng)
    elif category == "cuboid2":
        for _ in range(2):
            _place_cuboid(h, res, rng)
    elif category == "cuboid3":
        for _ in range(3):
            _place_cuboid(h, res, rng)
    elif category == "wall1":
        _place_wall(h, res, rng)
    elif category == "wall2":
        for _ in range(2):
            _place_wall(h, res, rng)
    elif category == "cuboid_wall":
        _place_cuboid(h, res, rng)
        _place_wall(h, res, rng)
    elif category == "stairs":
        _place_staircase(h, res, rng, near_axis=False)
    elif category == "stairs_wall":
        _place_staircase(h, res, rng, near_axis=False)
        _place_wall(h, res, rng)
    elif category == "stairs_axis":
        _place_staircase(h, res, rng, near_axis=True)
    # "flat": nothing to place
    return HeightMap(heights=h, resolution=res, origin=(0.0, 0.0))


# -- labeling --------------------------------------------------------------------


def label_map(hmap: HeightMap, map_id: int,
              cost_params: CostParams | None = None,
              planner_params: CostParamsD | None = None,
              cost_cap: float = LABEL_COST_CAP,
              expansion_cap: int = LABEL_EXPANSION_CAP) -> np.ndarray:
    """Label the 22 coarse tasks of one map; raises MapRejected when no
    valid start exists at the patch center.

    Feasible task costs are exact shortest-path costs divided by
    COST_SCALE. Goals whose embedding fails, that are unreachable, or that
    fall outside the search bounds are infeasible.
    """
    cmap = compute_cost_maps(hmap, cost_params)
    space = DetailedSpace(cmap, planner_params, FOOT_LATTICE_FULL)
    start = to_detailed(CENTER_ABSTRACT, cmap, space=space)
    if start is None:
        raise MapRejected(f"map {map_id}: no valid start at patch center")

    goals = []
    goal_states = []
    for action in ABSTRACT_ACTIONS:
        goal_abs = apply_action(CENTER_ABSTRACT, action)
        goal_states.append(to_detailed(goal_abs, cmap, space=space))
        if isinstance(action, AbstractMove):
            goals.append((action.dx, action.dy, 0))
        else:
            goals.append((0, 0, action.dt))

    searchable = [g for g in goal_states if g is not None]
    costs = {}
    if searchable:
        model = EngineModel(space)
        found, _, _ = dijkstra_costs(model, start, searchable,
                                     cost_cap=cost_cap, exp_cap=expansion_cap)
        costs = {g: c for g, c in zip(searchable, found)}

    records = np.zeros(22, dtype=TASK_DTYPE)
    for i, (goal, gstate) in enumerate(zip(goals, goal_states)):
        c = costs.get(gstate, math.inf) if gstate is not None else math.inf
        feasible = math.isfinite(c)
        records[i] = (map_id, goal[0], goal[1], goal[2],
                      1 if feasible else 0,
                      np.float32(c / COST_SCALE) if feasible else np.nan)
    return records


# -- dataset ---------------------------------------------------------------------


@dataclass
class Dataset:
    header: dict
    map_ids: np.ndarray          # u4 [M]
    patches: np.ndarray          # f32 [M, 72, 72]
    tasks: np.ndarray            # TASK_DTYPE [T]
    categories: list = field(default_factory=list)  # per surviving map

    @property
    def n_maps(self) -> int:
        return len(self.map_ids)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def category_of(self, map_id: int) -> str:
        for cat in CATEGORIES:
            span = self.header.get(f"generated_ids_{cat}")
            if span:
                lo, hi = (int(v) for v in span.split(".."))
                if lo <= map_id <= hi:
                    return cat
        return "unknown"


def generate_dataset(counts: dict, seed: int,
                     cost_params: CostParams | None = None,
                     planner_params: CostParamsD | None = None,
                     label: bool = True,
                     cost_cap: float = LABEL_COST_CAP,
                     expansion_cap: int = LABEL_EXPANSION_CAP,
                     progress=None) -> Dataset:
    """Generate and (optionally) label maps per category.

    Deterministic for a fixed seed: map i draws from a generator seeded
    with SeedSequence((seed, i)), so maps are independent of each other
    and of how many categories run. Maps whose center start embedding
    fails are dropped; surviving maps keep their original generation index
    as map_id.
    """
    cp = cost_params or CostParams()
    pp = planner_params or CostParamsD()
    header = {
        "format_version": "1",
        "seed": str(seed),
        "cost_scale": repr(COST_SCALE),
        "label_cost_cap": repr(cost_cap),
        "label_expansion_cap": str(expansion_cap),
        "labeled": "1" if label else "0",
    }
    for k, v in cp.as_header_dict().items():
        header[f"terrain_{k}"] = repr(v)
    for k, v in pp.as_header_dict().items():
        header[f"planner_{k}"] = repr(v)

    map_ids = []
    patches = []
    categories = []
    all_tasks = []
    map_index = 0
    for cat in CATEGORIES:
        count = int(counts.get(cat, 0))
        header[f"requested_{cat}"] = str(count)
        if count:
            header[f"generated_ids_{cat}"] = f"{map_index}..{map_index + count - 1}"
        survivors = 0
        for _ in range(count):
            rng = np.random.default_rng(np.random.SeedSequence((seed, map_index)))
            hmap = generate_map(cat, rng)
            # The stored f32 center-relative patch is the canonical map;
            # labeling runs on it so stored costs are reproducible from the
            # file content alone.
            patch = extract_patch(hmap, CENTER_ABSTRACT).values
            try:
                if label:
                    tasks = label_map(HeightMap(patch.astype(np.float64)),
                                      map_index, cp, pp, cost_cap, expansion_cap)
                else:
                    tasks = None
                map_ids.append(map_index)
                patches.append(patch)
                categories.append(cat)
                if tasks is not None:
                    all_tasks.append(tasks)
                survivors += 1
            except MapRejected:
                pass
            map_index += 1
            if progress is not None:
                progress(map_index)
        header[f"survived_{cat}"] = str(survivors)

    return Dataset(
        header=header,
        map_ids=np.array(map_ids, dtype=np.uint32),
        patches=(np.stack(patches) if patches
                 else np.zeros((0, MAP_CELLS, MAP_CELLS), dtype=np.float32)),
        tasks=(np.concatenate(all_tasks) if all_tasks
               else np.zeros(0, dtype=TASK_DTYPE)),
        categories=categories,
    )


def label_dataset(ds: Dataset, cost_params: CostParams | None = None,
                  planner_params: CostParamsD | None = None,
                  progress=None) -> Dataset:
    """Label an unlabeled dataset's maps (drops maps that reject).

    Patches store center-relative heights, which is also what the labeler
    needs, so maps are reconstructed directly from the stored patches.
    """
    cp = cost_params or CostParams()
    pp = planner_params or CostParamsD()
    cost_cap = float(ds.header.get("label_cost_cap", repr(LABEL_COST_CAP)))
    expansion_cap = int(ds.header.get("label_expansion_cap", str(LABEL_EXPANSION_CAP)))

    keep = []
    all_tasks = []
    for i in range(ds.n_maps):
        hmap = HeightMap(heights=ds.patches[i].astype(np.float64))
        try:
            tasks = label_map(hmap, int(ds.map_ids[i]), cp, pp,
                              cost_cap, expansion_cap)
            all_tasks.append(tasks)
            keep.append(i)
        except MapRejected:
            pass
        if progress is not None:
            progress(i + 1)

    header = dict(ds.header)
    header["labeled"] = "1"
    keep = np.array(keep, dtype=np.int64)
    return Dataset(
        header=header,
        map_ids=ds.map_ids[keep] if len(keep) else np.zeros(0, dtype=np.uint32),
        patches=ds.patches[keep] if len(keep) else ds.patches[:0],
        tasks=(np.concatenate(all_tasks) if all_tasks
               else np.zeros(0, dtype=TASK_DTYPE)),
        categories=[ds.categories[i] for i in keep] if ds.categories else [],
    )


# -- dataset file format (TPDS1) ---------------------------------------------------

_DS_MAGIC = b"TPDS1"


def save_dataset(ds: Dataset, path: str) -> None:
    with open(path, "wb") as f:
        f.write(_DS_MAGIC)
        lines = [f"{k}: {v}" for k, v in ds.header.items()]
        lines.append(f"n_maps: {ds.n_maps}")
        lines.append(f"n_tasks: {ds.n_tasks}")
        f.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        for i in range(ds.n_maps):
            f.write(np.uint32(ds.map_ids[i]).tobytes())
            f.write(ds.patches[i].astype("<f4").tobytes())
        f.write(ds.tasks.astype(TASK_DTYPE).tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(_DS_MAGIC):
        raise FormatError(f"bad magic in {path}")
    try:
        head_end = data.index(b"\n\n", len(_DS_MAGIC))
    except ValueError as e:
        raise FormatError(f"unterminated header in {path}") from e
    header = {}
    for line in data[len(_DS_MAGIC):head_end].decode("utf-8").strip().split("\n"):
        k, _, v = line.partition(": ")
        header[k] = v
    try:
        n_maps = int(header.pop("n_maps"))
        n_tasks = int(header.pop("n_tasks"))
    except KeyError as e:
        raise FormatError(f"missing counts in {path}") from e

    buf = io.BytesIO(data[head_end + 2:])
    map_ids = np.zeros(n_maps, dtype=np.uint32)
    patches = np.zeros((n_maps, MAP_CELLS, MAP_CELLS), dtype=np.float32)
    patch_bytes = MAP_CELLS * MAP_CELLS * 4
    for i in range(n_maps):
        raw = buf.read(4 + patch_bytes)
        if len(raw) != 4 + patch_bytes:
            raise FormatError(f"truncated map block in {path}")
        map_ids[i] = np.frombuffer(raw[:4], dtype="<u4")[0]
        patches[i] = np.frombuffer(raw[4:], dtype="<f4").reshape(MAP_CELLS, MAP_CELLS)
    raw = buf.read()
    if len(raw) != n_tasks * TASK_DTYPE.itemsize:
        raise FormatError(f"truncated task block in {path}")
    tasks = np.frombuffer(raw, dtype=TASK_DTYPE).copy()

    cats = []
    ds = Dataset(header=header, map_ids=map_ids, patches=patches, tasks=tasks)
    ds.categories = [ds.category_of(int(m)) for m in map_ids]
    return ds


def dataset_checksum(ds: Dataset) -> int:
    """CRC32 over the serialized content; handy for determinism checks."""
    buf = io.BytesIO()
    buf.write(repr(sorted(ds.header.items())).encode())
    buf.write(ds.map_ids.tobytes())
    buf.write(ds.patches.astype("<f4").tobytes())
    buf.write(ds.tasks.astype(TASK_DTYPE).tobytes())
    return zlib.crc32(buf.getvalue())
