"""Headless synthetic environments, a noisy range-category sensor, and the
closed exploration loop.

Everything here is deterministic given (seed, config): the environment,
sensor noise, and tie-breaking each draw from an independent child stream of
one seed, so turning noise off does not reshuffle the world. Wall-clock
planning times are collected but kept out of the metrics table, which must be
byte-reproducible.
"""

from __future__ import annotations

import hashlib
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import planner as planner_mod
from .config import SimConfig
from .errors import AllUnreachable, BadDims, NoFrontiers, PoseInObstacle
from .grid import BeamMeasurement, GridMap, _traverse
from .octree import SemanticOctree


@dataclass
class Environment:
    """Ground-truth class grid; 0 is free, ids 1..K are object classes."""

    grid: np.ndarray  # (nx, ny, nz) int16
    num_classes: int
    resolution: float
    spawns: list[tuple[int, int, int]]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grid.shape

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.grid).tobytes())
        h.update(str((self.grid.shape, self.num_classes, self.resolution)).encode())
        return h.hexdigest()[:16]

    def occupancy_fraction(self) -> float:
        return float(np.mean(self.grid != 0))


def _spawn_cells(grid: np.ndarray) -> list[tuple[int, int, int]]:
    """Free cells whose 3x3 in-plane neighbourhood is free."""
    nx, ny, nz = grid.shape
    spawns = []
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(nz):
                if np.all(grid[i - 1 : i + 2, j - 1 : j + 2, k] == 0):
                    spawns.append((i, j, k))
    return spawns


def _gen_random(rng: np.random.Generator, dims, num_classes: int, target: float) -> np.ndarray:
    nx, ny = dims[0], dims[1]
    grid = np.zeros((nx, ny, 1), dtype=np.int16)
    margin, gap = 2, 2
    target_cells = target * nx * ny
    attempts = 0
    while np.count_nonzero(grid) < target_cells and attempts < 4000:
        attempts += 1
        wx = int(rng.integers(2, 4))
        wy = int(rng.integers(2, 4))
        if nx - margin - wx <= margin or ny - margin - wy <= margin:
            raise BadDims("environment too small for obstacle blocks")
        x0 = int(rng.integers(margin, nx - margin - wx + 1))
        y0 = int(rng.integers(margin, ny - margin - wy + 1))
        cls = int(rng.integers(1, num_classes + 1))
        # keep a 2-cell free moat around each block so free space stays connected
        xlo, xhi = max(0, x0 - gap), min(nx, x0 + wx + gap)
        ylo, yhi = max(0, y0 - gap), min(ny, y0 + wy + gap)
        if np.any(grid[xlo:xhi, ylo:yhi, 0] != 0):
            continue
        grid[x0 : x0 + wx, y0 : y0 + wy, 0] = cls
    return grid


def _gen_structured(dims, num_classes: int) -> np.ndarray:
    nx, ny = dims[0], dims[1]
    grid = np.zeros((nx, ny, 1), dtype=np.int16)
    c1 = 1
    c2 = min(2, num_classes)
    c3 = min(3, num_classes)
    grid[0, :, 0] = c1
    grid[-1, :, 0] = c1
    grid[:, 0, 0] = c1
    grid[:, -1, 0] = c1
    mid = ny // 2
    grid[:, mid, 0] = c2
    for door in (nx // 4, 3 * nx // 4):
        grid[door : door + 2, mid, 0] = 0
    # block structures inside each room
    bx, by = max(3, nx // 5), max(3, ny // 6)
    grid[bx : bx + 2, by : by + 2, 0] = c3
    grid[nx - bx - 2 : nx - bx, ny - by - 2 : ny - by, 0] = c3
    grid[nx // 2 : nx // 2 + 2, ny // 4 + 1 : ny // 4 + 3, 0] = c1
    return grid


def _gen_corridor(dims, num_classes: int) -> np.ndarray:
    nx, ny = dims[0], dims[1]
    nz = dims[2] if len(dims) > 2 else 8
    grid = np.zeros((nx, ny, nz), dtype=np.int16)
    wall_x = (3 * nx) // 4
    grid[wall_x, :, :] = 1
    return grid


def generate_env(
    seed,
    profile: str,
    dims,
    num_classes: int,
    resolution: float = 1.0,
    target_occupancy: float = 0.2,
) -> Environment:
    """Deterministic ground-truth world.

    ``random`` scatters small solid blocks with a clearance moat until the
    target occupancy is reached; ``structured`` is a fixed two-room layout
    with a doored dividing wall; ``corridor`` is a 3-D free corridor ending
    in a full cross-section wall (the run-length study scene).
    """
    dims = tuple(int(d) for d in dims)
    if any(d < 16 for d in dims[:2]):
        raise BadDims("need at least 16 cells per planar axis")
    rng = np.random.default_rng(seed)
    if profile == "random":
        grid = _gen_random(rng, dims, num_classes, target_occupancy)
    elif profile == "structured":
        grid = _gen_structured(dims, num_classes)
    elif profile == "corridor":
        grid = _gen_corridor(dims, num_classes)
    else:
        raise BadDims(f"unknown profile {profile!r}")
    spawns = _spawn_cells(grid)
    if not spawns:
        raise BadDims("generated environment has no 3x3 free spawn area")
    return Environment(grid=grid, num_classes=num_classes, resolution=resolution, spawns=spawns)


def env_to_grid(env: Environment, saturation: float = 6.0) -> GridMap:
    """Ground truth as a saturated belief map (for export and inspection):
    each cell is certain of its true class up to the given log-odds bound."""
    gmap = GridMap(env.dims, env.resolution, env.num_classes)
    cells = np.full(env.dims + (env.num_classes + 1,), -saturation)
    cells[..., 0] = 0.0
    for k in range(1, env.num_classes + 1):
        cells[env.grid == k, k] = saturation
    gmap.cells = cells
    gmap.observed[:] = True
    return gmap


@dataclass(frozen=True)
class SensorSpec:
    num_beams: int
    fov: float
    r_max: float
    range_sigma: float
    misclass_prob: float


def sense(
    env: Environment,
    position: np.ndarray,
    heading: float,
    spec: SensorSpec,
    rng: np.random.Generator,
) -> list[BeamMeasurement]:
    """Simulate one scan: exact ranges from the ground truth, then additive
    Gaussian range noise (clipped to [0, r_max]) and uniform class flips.

    Beams that reach max range (or leave the world) report no hit and carry
    no noise. A hit whose noisy range clips to r_max also degrades to no hit.
    """
    position = np.asarray(position, dtype=np.float64)
    g = position / env.resolution
    dims = np.array(env.dims)
    cell = tuple(np.floor(g).astype(int))
    if np.any(g < 0) or np.any(g >= dims):
        raise PoseInObstacle(f"pose {position} outside the environment")
    if env.grid[cell] != 0:
        raise PoseInObstacle(f"pose {position} lies in a class-{env.grid[cell]} cell")

    beams = []
    start = heading - spec.fov / 2.0
    step = spec.fov / spec.num_beams
    s_max = spec.r_max / env.resolution
    for b in range(spec.num_beams):
        angle = start + (b + 0.5) * step
        direction = np.array([math.cos(angle), math.sin(angle), 0.0])
        cells, entries = _traverse(g, direction, s_max, dims)
        true_range = None
        true_class = None
        for idx, c in enumerate(cells):
            cls = env.grid[tuple(c)]
            if cls != 0:
                true_range = entries[idx] * env.resolution
                true_class = int(cls)
                break
        if true_range is None:
            beams.append(
                BeamMeasurement(position, direction, spec.r_max, None, spec.r_max)
            )
            continue
        reported = true_range
        if spec.range_sigma > 0.0:
            reported += rng.normal(0.0, spec.range_sigma)
        reported = min(max(reported, 0.0), spec.r_max)
        if reported >= spec.r_max:
            beams.append(
                BeamMeasurement(position, direction, spec.r_max, None, spec.r_max)
            )
            continue
        label = true_class
        if env.num_classes > 1 and spec.misclass_prob > 0.0:
            if rng.random() < spec.misclass_prob:
                others = [c for c in range(1, env.num_classes + 1) if c != true_class]
                label = int(others[rng.integers(len(others))])
        beams.append(BeamMeasurement(position, direction, reported, label, spec.r_max))
    return beams


# -- exploration episode ------------------------------------------------------


@dataclass
class CycleRow:
    step: int
    distance: float
    entropy: float
    explored: float
    plan_mi: float


@dataclass
class EpisodeMetrics:
    rows: list[CycleRow] = field(default_factory=list)
    plan_times: list[float] = field(default_factory=list)
    plan_log: list[str] = field(default_factory=list)
    precision: dict[int, float | None] = field(default_factory=dict)
    env_hash: str = ""
    config_hash: str = ""
    mapper: object = None  # final map state
    env: Environment | None = None

    def metrics_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# config-hash: {self.config_hash}\n")
        out.write(f"# env-hash: {self.env_hash}\n")
        out.write("step,distance_m,entropy_nats,explored_fraction,plan_mi_nats\n")
        for r in self.rows:
            out.write(f"{r.step},{r.distance!r},{r.entropy!r},{r.explored!r},{r.plan_mi!r}\n")
        return out.getvalue()

    def timings_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# config-hash: {self.config_hash}\n")
        out.write("step,plan_time_s\n")
        for i, t in enumerate(self.plan_times, start=1):
            out.write(f"{i},{t!r}\n")
        return out.getvalue()

    def distance_at_explored(self, fraction: float) -> float | None:
        for r in self.rows:
            if r.explored >= fraction:
                return r.distance
        return None

    @property
    def final(self) -> CycleRow | None:
        return self.rows[-1] if self.rows else None


def _build_mapper(config: SimConfig, env: Environment):
    dims = env.dims
    if config.mapper.type == "grid":
        return GridMap(dims, env.resolution, env.num_classes)
    depth = max(1, math.ceil(math.log2(max(dims))))
    return SemanticOctree(
        element_size=env.resolution,
        max_depth=depth,
        num_classes=env.num_classes,
        fusion=config.mapper.fusion,
    )


def _integrate(mapper, beams, params) -> None:
    if isinstance(mapper, SemanticOctree):
        mapper.insert_scan(beams, params)
    else:
        for beam in beams:
            mapper.integrate(beam, params)


def _map_state(mapper, env: Environment) -> tuple[float, float]:
    if isinstance(mapper, SemanticOctree):
        box = ((0, 0, 0), env.dims)
        return mapper.map_entropy(box), mapper.observed_fraction(box)
    return mapper.map_entropy(), float(np.mean(mapper.observed))


def _plan_view(mapper, env: Environment, band):
    if isinstance(mapper, SemanticOctree):
        return planner_mod.view_from_octree(mapper, env.dims, band)
    return planner_mod.view_from_grid(mapper, band)


def _label_grid(mapper, env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """(labels, observed) over the environment box for precision scoring."""
    if isinstance(mapper, SemanticOctree):
        nx, ny, nz = env.dims
        labels = np.zeros(env.dims, dtype=np.int64)
        observed = np.zeros(env.dims, dtype=bool)
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    sem = mapper.query_element((i, j, k))
                    observed[i, j, k] = sem != mapper.prior_semantics
                    full = sem.to_full(mapper.num_classes)
                    labels[i, j, k] = int(np.argmax(full))
        return labels, observed
    return mapper.most_likely(), mapper.observed.copy()


def class_precision(mapper, env: Environment) -> dict[int, float | None]:
    """Per-class precision of the most-likely map over observed cells; None
    when the map never labeled a cell with that class."""
    labels, observed = _label_grid(mapper, env)
    out: dict[int, float | None] = {}
    for k in range(1, env.num_classes + 1):
        sel = observed & (labels == k)
        if not np.any(sel):
            out[k] = None
        else:
            out[k] = float(np.mean(env.grid[sel] == k))
    return out


def run_episode(config: SimConfig, env: Environment | None = None) -> EpisodeMetrics:
    """Closed sense / integrate / plan / move loop until the map has no
    frontier left, the explored-fraction target is met, or the step cap hits.

    The robot teleports along planned paths with perfect localization,
    sensing every ``planner.stride`` waypoints; distance accrues from the
    waypoint geometry.
    """
    streams = np.random.SeedSequence(config.seed).spawn(3)
    env_rng = np.random.default_rng(streams[0])
    sensor_rng = np.random.default_rng(streams[1])
    if env is None:
        env = generate_env(
            streams[0],
            config.env.profile,
            config.env.dims,
            config.env.num_classes,
            config.env.resolution,
            config.env.target_occupancy,
        )
    spawn = env.spawns[int(env_rng.integers(len(env.spawns)))]

    params = config.mapper.sensor_params(env.num_classes)
    mapper = _build_mapper(config, env)
    spec = SensorSpec(
        num_beams=config.sensor.num_beams,
        fov=math.radians(config.sensor.fov_deg),
        r_max=config.sensor.r_max,
        range_sigma=config.sensor.range_sigma,
        misclass_prob=config.sensor.misclass_prob,
    )
    metrics = EpisodeMetrics(env_hash=env.content_hash(), config_hash=config.config_hash())

    def pose_center(cell) -> np.ndarray:
        return (np.asarray(cell, dtype=np.float64) + 0.5) * env.resolution

    pose = (spawn[0], spawn[1])
    z_idx = spawn[2]
    heading = 0.0
    distance = 0.0
    for step in range(1, config.run.max_steps + 1):
        scan = sense(env, pose_center((pose[0], pose[1], z_idx)), heading, spec, sensor_rng)
        _integrate(mapper, scan, params)

        view = _plan_view(mapper, env, config.planner.band)
        t0 = time.perf_counter()
        try:
            candidates = planner_mod.evaluate_candidates(mapper, view, pose, params, config.planner)
            plan = planner_mod.select_best(candidates)
        except (NoFrontiers, AllUnreachable):
            entropy, explored = _map_state(mapper, env)
            metrics.rows.append(CycleRow(step, distance, entropy, explored, 0.0))
            break
        metrics.plan_times.append(time.perf_counter() - t0)
        for cand in candidates:
            flag = "*" if cand is plan else " "
            metrics.plan_log.append(
                f"cycle={step} frontier={cand.frontier_index} cost={cand.cost!r} "
                f"mi={cand.mi!r} score={cand.score!r} chosen={flag}"
            )

        path = plan.path
        poses = planner_mod.sensing_poses(path, config.planner.stride)
        for w in range(1, len(path)):
            a, b = path[w - 1], path[w]
            distance += math.hypot(b[0] - a[0], b[1] - a[1]) * env.resolution
        for cell, hd in poses[1:-1]:
            scan = sense(env, pose_center((cell[0], cell[1], z_idx)), hd, spec, sensor_rng)
            _integrate(mapper, scan, params)
        pose = path[-1]
        heading = poses[-1][1]

        entropy, explored = _map_state(mapper, env)
        metrics.rows.append(CycleRow(step, distance, entropy, explored, plan.mi))
        if explored >= config.run.explored_stop:
            break

    metrics.precision = class_precision(mapper, env)
    metrics.mapper = mapper  # final map, for callers that persist it
    metrics.env = env
    return metrics


# -- run-length compression study ---------------------------------------------


@dataclass
class StudyRow:
    resolution: float
    mean_q: float
    std_q: float
    mean_n: float
    std_n: float
    seconds: float


def study_csv(rows: list[StudyRow], config_hash: str) -> str:
    out = io.StringIO()
    out.write(f"# config-hash: {config_hash}\n")
    out.write("resolution_per_m,mean_q,std_q,mean_n,std_n,episode_seconds\n")
    for r in rows:
        out.write(
            f"{r.resolution!r},{r.mean_q!r},{r.std_q!r},{r.mean_n!r},{r.std_n!r},{r.seconds!r}\n"
        )
    return out.getvalue()


def srle_study(config: SimConfig, env: Environment | None = None) -> list[StudyRow]:
    """Sweep octree element resolutions over the corridor scene, recording
    the visited run count Q and element count N for every ray cast.

    Each iteration fires a fixed grid of parallel corridor-axis beams from
    the open end, integrates them noise-free, and then records the run-length
    statistics of the same rays against the updated tree. Beliefs saturate at
    the clamp after a few passes, so runs stay short at every resolution
    while the element count scales with it.
    """
    if env is None:
        dims = config.env.dims if len(config.env.dims) == 3 else (16, 16, 16)
        env = generate_env(config.seed, "corridor", dims, config.env.num_classes, 1.0)
    extent = np.array(env.dims, dtype=np.float64) * env.resolution
    n_side = max(1, int(math.isqrt(config.sweep.beams)))
    # irrational-ish cross-section offsets: never land on an element boundary
    # at any swept resolution
    ys = [0.5 + (i + 0.37) * (extent[1] - 1.0) / n_side for i in range(n_side)]
    zs = [0.5 + (i + 0.37) * (extent[2] - 1.0) / n_side for i in range(n_side)]
    r_max = float(extent[0])

    rows = []
    for res in config.sweep.resolutions:
        element = 1.0 / res
        depth = max(1, math.ceil(math.log2(extent.max() * res)))
        tree = SemanticOctree(element, depth, env.num_classes)
        params = config.mapper.sensor_params(env.num_classes)
        qs: list[int] = []
        ns: list[int] = []
        t0 = time.perf_counter()
        for _ in range(config.sweep.iterations):
            beams = []
            direction = np.array([1.0, 0.0, 0.0])
            for y in ys:
                for z in zs:
                    origin = np.array([0.5 * element, y, z])
                    cells, entries = _traverse(
                        origin / env.resolution, direction, r_max / env.resolution,
                        np.array(env.dims),
                    )
                    rng_range = r_max
                    category = None
                    for idx, c in enumerate(cells):
                        cls = env.grid[tuple(c)]
                        if cls != 0:
                            rng_range = entries[idx] * env.resolution
                            category = int(cls)
                            break
                    beams.append(
                        BeamMeasurement(origin, direction, rng_range, category, r_max)
                    )
            tree.insert_scan(beams, params)
            for beam in beams:
                ray = tree.raycast_srle(beam)
                qs.append(ray.num_runs)
                ns.append(ray.num_elements)
        seconds = time.perf_counter() - t0
        rows.append(
            StudyRow(
                resolution=float(res),
                mean_q=float(np.mean(qs)),
                std_q=float(np.std(qs)),
                mean_n=float(np.mean(ns)),
                std_n=float(np.std(ns)),
                seconds=seconds,
            )
        )
    return rows
