"""Frontier detection, grid path planning, and information-per-cost plan choice.

Planning always happens on a 2-D occupancy view. A dense 2-D map projects
trivially; 3-D maps (grid or octree) project onto the ground plane, where a
column is traversable only if every voxel in the robot-height band is
observed free. Candidate plans drive to frontier centers; the score of a
candidate is the information of the observations collected along its path
divided by the path length.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import mi as mi_mod
from .errors import AllUnreachable, NoFrontiers, Unreachable
from .grid import GridMap
from .logodds import SensorParams

EIGHT_NEIGHBOURS = [
    (1, 0), (-1, 0), (0, 1), (0, -1),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
]


@dataclass(frozen=True)
class PlanView:
    """2-D traversability snapshot: free, unknown, or blocked per column."""

    free: np.ndarray
    unknown: np.ndarray
    resolution: float
    origin: np.ndarray
    z_center: float

    def cell_center(self, cell) -> np.ndarray:
        return np.array(
            [
                self.origin[0] + (cell[0] + 0.5) * self.resolution,
                self.origin[1] + (cell[1] + 0.5) * self.resolution,
                self.z_center,
            ]
        )


def view_from_grid(gmap: GridMap, band: tuple[int, int] | None = None) -> PlanView:
    """Project a grid map onto the plane; ``band`` is the half-open z range
    that must be clear (defaults to the full depth)."""
    z0, z1 = band if band is not None else (0, gmap.dims[2])
    labels = gmap.most_likely()[:, :, z0:z1]
    observed = gmap.observed[:, :, z0:z1]
    free = np.all(observed & (labels == 0), axis=-1)
    unknown = np.all(~observed, axis=-1)
    z_center = gmap.origin[2] + (z0 + z1) / 2.0 * gmap.resolution
    return PlanView(
        free=free, unknown=unknown, resolution=gmap.resolution,
        origin=gmap.origin[:2].copy(), z_center=z_center,
    )


def view_from_octree(tree, region_dims, band: tuple[int, int] | None = None) -> PlanView:
    """Same projection over octree elements within a region box."""
    nx, ny = region_dims[0], region_dims[1]
    nz = region_dims[2] if len(region_dims) > 2 else 1
    z0, z1 = band if band is not None else (0, nz)
    free = np.zeros((nx, ny), dtype=bool)
    unknown = np.zeros((nx, ny), dtype=bool)
    prior = tree.prior_semantics
    for i in range(nx):
        for j in range(ny):
            col_free = True
            col_unknown = True
            for k in range(z0, z1):
                sem = tree.query_element((i, j, k))
                seen = sem != prior
                col_unknown &= not seen
                col_free &= seen and sem.is_free_labeled()
            free[i, j] = col_free
            unknown[i, j] = col_unknown
    z_center = tree.origin[2] + (z0 + z1) / 2.0 * tree.element_size
    return PlanView(
        free=free, unknown=unknown, resolution=tree.element_size,
        origin=tree.origin[:2].copy(), z_center=z_center,
    )


@dataclass(frozen=True)
class Frontier:
    """Connected cluster of free cells bordering unknown space."""

    cells: np.ndarray  # (M, 2) int
    centroid: tuple[int, int]

    @property
    def size(self) -> int:
        return int(self.cells.shape[0])


def find_frontiers(view: PlanView, min_size: int = 3) -> list[Frontier]:
    """All frontier clusters, largest first (ties by lowest cell index).

    A frontier cell is free-labeled and 4-adjacent to at least one unknown
    cell; clusters are 8-connected components. Raises NoFrontiers when the
    boundary is empty, which signals that exploration is complete.
    """
    unk = view.unknown
    near_unknown = np.zeros_like(unk)
    near_unknown[1:, :] |= unk[:-1, :]
    near_unknown[:-1, :] |= unk[1:, :]
    near_unknown[:, 1:] |= unk[:, :-1]
    near_unknown[:, :-1] |= unk[:, 1:]
    boundary = view.free & near_unknown
    labels, count = ndimage.label(boundary, structure=np.ones((3, 3), dtype=int))
    ny = boundary.shape[1]
    frontiers = []
    for lab in range(1, count + 1):
        cells = np.argwhere(labels == lab)
        if cells.shape[0] < min_size:
            continue
        mean = cells.mean(axis=0)
        d2 = np.sum((cells - mean) ** 2, axis=1)
        flat = cells[:, 0] * ny + cells[:, 1]
        pick = np.lexsort((flat, d2))[0]
        frontiers.append(Frontier(cells=cells, centroid=(int(cells[pick, 0]), int(cells[pick, 1]))))
    if not frontiers:
        raise NoFrontiers("no free/unknown boundary left")
    frontiers.sort(key=lambda f: (-f.size, f.cells[0, 0] * ny + f.cells[0, 1]))
    return frontiers


def plan_path(view: PlanView, start: tuple[int, int], goal: tuple[int, int]):
    """Shortest 8-connected path through free cells (A*, Euclidean weights).

    Diagonal moves may not cut corners: both orthogonal neighbours must be
    free too. Returns (path, cost_meters); a zero-length path costs one
    resolution unit so information-per-cost ratios stay finite.
    """
    free = view.free
    if not free[start]:
        raise Unreachable(f"start {start} is not free-labeled")
    if not free[goal]:
        raise Unreachable(f"goal {goal} is not free-labeled")
    if start == goal:
        return [start], view.resolution

    nx, ny = free.shape
    res = view.resolution

    def heuristic(c):
        return math.hypot(c[0] - goal[0], c[1] - goal[1]) * res

    g_cost = {start: 0.0}
    parent = {start: None}
    counter = 0
    heap = [(heuristic(start), counter, start)]
    closed = set()
    while heap:
        f_val, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            while cur is not None:
                path.append(cur)
                cur = parent[cur]
            path.reverse()
            return path, g_cost[goal]
        closed.add(cur)
        cx, cy = cur
        for dx, dy in EIGHT_NEIGHBOURS:
            nxt = (cx + dx, cy + dy)
            if not (0 <= nxt[0] < nx and 0 <= nxt[1] < ny) or not free[nxt]:
                continue
            if dx != 0 and dy != 0:
                if not (free[cx + dx, cy] and free[cx, cy + dy]):
                    continue
            step = res * (math.sqrt(2.0) if dx != 0 and dy != 0 else 1.0)
            cand = g_cost[cur] + step
            if cand < g_cost.get(nxt, math.inf) - 1e-12:
                g_cost[nxt] = cand
                parent[nxt] = cur
                counter += 1
                heapq.heappush(heap, (cand + heuristic(nxt), counter, nxt))
    raise Unreachable(f"no free path from {start} to {goal}")


def sensing_poses(path: list[tuple[int, int]], stride: int) -> list[tuple[tuple[int, int], float]]:
    """(cell, heading) every ``stride`` waypoints plus the path end; heading
    follows the local path tangent."""
    idxs = list(range(0, len(path), max(1, stride)))
    if idxs[-1] != len(path) - 1:
        idxs.append(len(path) - 1)
    poses = []
    for i in idxs:
        if len(path) == 1:
            heading = 0.0
        elif i + 1 < len(path):
            heading = math.atan2(path[i + 1][1] - path[i][1], path[i + 1][0] - path[i][0])
        else:
            heading = math.atan2(path[i][1] - path[i - 1][1], path[i][0] - path[i - 1][0])
        poses.append((path[i], heading))
    return poses


@dataclass
class PlannerConfig:
    selector: str = "ssmi"  # ssmi | frontier | fsmi-binary
    stride: int = 3
    min_frontier_size: int = 3
    num_beams: int = 16
    beam_range: float = 10.0
    fov: float = 2.0 * math.pi
    band: tuple[int, int] | None = None

    def __post_init__(self):
        if self.selector not in ("ssmi", "frontier", "fsmi-binary"):
            raise ValueError(f"unknown selector {self.selector!r}")


@dataclass
class CandidatePlan:
    frontier_index: int
    path: list[tuple[int, int]]
    cost: float
    mi: float
    score: float


def _binary_collapse_map(gmap: GridMap) -> GridMap:
    out = GridMap(
        gmap.dims, gmap.resolution, 1,
        prior=mi_mod.collapse_to_binary(gmap.prior), origin=gmap.origin,
    )
    out.cells = mi_mod.collapse_to_binary(gmap.cells)
    out.observed = gmap.observed.copy()
    return out


def evaluate_candidates(
    mapper,
    view: PlanView,
    start: tuple[int, int],
    params: SensorParams,
    config: PlannerConfig,
) -> list[CandidatePlan]:
    """Path and information score for every reachable frontier.

    The ``frontier`` selector scores by cluster size alone; ``fsmi-binary``
    evaluates beam information on the occupancy-collapsed map with a 1-class
    sensor profile; ``ssmi`` uses the full multi-class map.
    """
    frontiers = find_frontiers(view, config.min_frontier_size)
    if config.selector == "fsmi-binary":
        if not isinstance(mapper, GridMap):
            raise ValueError("fsmi-binary planning requires a dense grid map")
        eval_map = _binary_collapse_map(mapper)
        eval_params = SensorParams.default(1)
    else:
        eval_map = mapper
        eval_params = params

    candidates = []
    for idx, frontier in enumerate(frontiers):
        try:
            path, cost = plan_path(view, start, frontier.centroid)
        except Unreachable:
            continue
        if config.selector == "frontier":
            candidates.append(
                CandidatePlan(idx, path, cost, mi=0.0, score=float(frontier.size))
            )
            continue
        fans = [
            mi_mod.fan_beams(view.cell_center(cell), config.num_beams,
                             config.beam_range, heading, config.fov)
            for cell, heading in sensing_poses(path, config.stride)
        ]
        info = mi_mod.trajectory_mi(eval_map, fans, eval_params)
        candidates.append(
            CandidatePlan(idx, path, cost, mi=info, score=info / cost)
        )
    if not candidates:
        raise AllUnreachable("every frontier failed path planning")
    return candidates


def select_best(candidates: list[CandidatePlan]) -> CandidatePlan:
    """Argmax score; exact ties fall back to shorter cost, then lower index."""
    return min(candidates, key=lambda c: (-c.score, c.cost, c.frontier_index))


def select_plan(
    mapper, view: PlanView, start: tuple[int, int], params: SensorParams,
    config: PlannerConfig,
) -> CandidatePlan:
    return select_best(evaluate_candidates(mapper, view, start, params, config))
