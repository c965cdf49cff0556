"""Dense multi-class occupancy grid with ray casting and beam integration.

Maps are always stored as 3-D arrays; a 2-D map is a 3-D map of depth one so
every downstream consumer (information evaluation, octrees, planning) sees a
single code path. Cell update arithmetic lives in :mod:`ssmi.logodds` and is
shared with the octree, which keeps the two representations bit-identical
under the same observation stream.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from . import logodds
from .errors import IndexOutOfRange, InvalidClass, OriginOutOfBounds
from .logodds import SensorParams

GRID_MAGIC = b"SSMIGRID"
GRID_VERSION = 1


@dataclass(frozen=True)
class BeamMeasurement:
    """One range-category return along a ray from ``origin``.

    ``category`` is the observed class in 1..K for a genuine hit and None
    when the beam reached ``max_range`` without hitting anything.
    """

    origin: np.ndarray
    direction: np.ndarray
    range: float
    category: int | None
    max_range: float

    def __post_init__(self):
        origin = np.ascontiguousarray(self.origin, dtype=np.float64)
        direction = np.ascontiguousarray(self.direction, dtype=np.float64)
        if origin.shape != (3,) or direction.shape != (3,):
            raise ValueError("origin and direction must be 3-vectors")
        norm = float(np.linalg.norm(direction))
        if abs(norm - 1.0) > 1e-9:
            if norm == 0.0:
                raise ValueError("direction must be nonzero")
            direction = direction / norm
        origin.flags.writeable = False
        direction.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)
        if not 0.0 <= self.range <= self.max_range:
            raise ValueError("need 0 <= range <= max_range")
        if self.hits and (self.category is None or self.category < 1):
            raise InvalidClass("a hit beam must carry a class id >= 1")

    @property
    def hits(self) -> bool:
        return self.range < self.max_range

    @classmethod
    def planar(
        cls,
        xy: tuple[float, float],
        angle: float,
        rng: float,
        category: int | None,
        max_range: float,
        z: float = 0.5,
    ) -> "BeamMeasurement":
        """Beam in the z-plane of a depth-one map (z defaults to the cell center)."""
        return cls(
            origin=np.array([xy[0], xy[1], z]),
            direction=np.array([np.cos(angle), np.sin(angle), 0.0]),
            range=rng,
            category=category,
            max_range=max_range,
        )


@dataclass(frozen=True)
class RayTrace:
    """Ordered cells a beam traverses up to max range.

    ``cells`` is (M, 3) integer cell coordinates; ``hit_index`` is the
    position of the cell containing the beam endpoint, absent when the beam
    reached max range or exited the map. ``chords`` records the in-cell path
    lengths in meters; they cancel out of every information formula and are
    kept for inspection only.
    """

    cells: np.ndarray
    hit_index: int | None
    chords: np.ndarray

    def __len__(self) -> int:
        return self.cells.shape[0]


def _traverse(origin_g: np.ndarray, direction: np.ndarray, s_max: float, dims) -> tuple[list, list]:
    """Parametric voxel walk in grid units.

    Visits every cell the segment passes through with positive chord length.
    When the segment crosses a cell corner or edge exactly, all tied axes
    step simultaneously, so zero-chord corner neighbours are skipped.
    """
    cell = np.floor(origin_g).astype(np.int64)
    step = np.sign(direction).astype(np.int64)
    t_next = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for i in range(3):
        if direction[i] > 0.0:
            t_next[i] = (cell[i] + 1.0 - origin_g[i]) / direction[i]
            t_delta[i] = 1.0 / direction[i]
        elif direction[i] < 0.0:
            t_next[i] = (cell[i] - origin_g[i]) / direction[i]
            t_delta[i] = -1.0 / direction[i]

    cells = []
    entries = []
    t = 0.0
    while True:
        cells.append(cell.copy())
        entries.append(t)
        t_exit = float(np.min(t_next))
        if t_exit >= s_max:
            entries.append(s_max)
            break
        advance = t_next == t_exit
        cell = cell + np.where(advance, step, 0)
        t_next = np.where(advance, t_next + t_delta, t_next)
        t = t_exit
        if np.any(cell < 0) or np.any(cell >= dims):
            entries.append(t)  # close the last interval at the boundary
            break
    return cells, entries


class GridMap:
    """Regular-grid categorical map over K+1 classes.

    Cells hold float64 log-odds vectors with element 0 pinned to zero; cells
    never written stay at the shared prior and are flagged unobserved.
    """

    def __init__(
        self,
        dims,
        resolution: float,
        num_classes: int,
        prior: np.ndarray | None = None,
        origin=(0.0, 0.0, 0.0),
    ):
        dims = tuple(int(d) for d in dims)
        if len(dims) == 2:
            dims = dims + (1,)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError("dims must be 2 or 3 positive extents")
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.dims = dims
        self.resolution = float(resolution)
        self.num_classes = int(num_classes)
        self.origin = np.asarray(origin, dtype=np.float64)
        if prior is None:
            prior = logodds.uniform_prior(num_classes)
        prior = np.ascontiguousarray(prior, dtype=np.float64)
        if prior.shape != (num_classes + 1,) or prior[0] != 0.0:
            raise ValueError("prior must be a valid log-odds vector of length K+1")
        prior.flags.writeable = False
        self.prior = prior
        self.cells = np.tile(prior, dims + (1,)).reshape(dims + (num_classes + 1,))
        self.observed = np.zeros(dims, dtype=bool)

    # -- geometry ----------------------------------------------------------

    def world_to_cell(self, point) -> tuple[int, int, int]:
        g = (np.asarray(point, dtype=np.float64) - self.origin) / self.resolution
        return tuple(int(i) for i in np.floor(g).astype(np.int64))

    def cell_center(self, cell) -> np.ndarray:
        return self.origin + (np.asarray(cell, dtype=np.float64) + 0.5) * self.resolution

    def in_bounds(self, cell) -> bool:
        return all(0 <= c < d for c, d in zip(cell, self.dims))

    def flat_index(self, cells: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.dims
        c = np.asarray(cells).reshape(-1, 3)
        return (c[:, 0] * ny + c[:, 1]) * nz + c[:, 2]

    # -- ray casting -------------------------------------------------------

    def cast_ray(self, beam: BeamMeasurement) -> RayTrace:
        """All cells the beam's full-length ray traverses, in order.

        Cells beyond the hit cell are still listed (the information formulas
        need the full sequence to max range); the trace is truncated where
        the ray leaves the map, which counts as reaching max range.
        """
        g = (beam.origin - self.origin) / self.resolution
        if np.any(g < 0.0) or np.any(g >= np.array(self.dims, dtype=np.float64)):
            raise OriginOutOfBounds(f"beam origin {beam.origin} outside map")
        s_max = beam.max_range / self.resolution
        cells, entries = _traverse(g, beam.direction, s_max, np.array(self.dims))
        entries = np.asarray(entries)
        chords = np.diff(entries) * self.resolution

        hit_index = None
        if beam.hits:
            s_hit = beam.range / self.resolution
            if s_hit < entries[-1]:
                hit_index = int(np.searchsorted(entries[1:], s_hit, side="right"))
        return RayTrace(
            cells=np.asarray(cells, dtype=np.int64),
            hit_index=hit_index,
            chords=chords,
        )

    # -- updates -----------------------------------------------------------

    def integrate(self, beam: BeamMeasurement, params: SensorParams) -> "GridMap":
        """Fuse one beam: traversed cells get the free update, the endpoint
        cell gets the hit update for the observed class, and everything past
        the endpoint is untouched. Results are clamped in place."""
        if params.num_classes != self.num_classes:
            raise ValueError("sensor parameters and map disagree on K")
        trace = self.cast_ray(beam)
        end = trace.hit_index if trace.hit_index is not None else len(trace)
        for n in range(end):
            self._apply(trace.cells[n], params.phi_minus, params)
        if trace.hit_index is not None:
            self._apply(trace.cells[trace.hit_index], params.hit_logodds(beam.category), params)
        return self

    def _apply(self, cell, l: np.ndarray, params: SensorParams) -> None:
        i, j, k = cell
        h = self.cells[i, j, k]
        self.cells[i, j, k] = logodds.clamp(logodds.posterior_update(h, l, self.prior), params)
        self.observed[i, j, k] = True

    def set_cell(self, cell, h: np.ndarray, observed: bool = True) -> None:
        """Write a cell belief directly (scene construction and tests)."""
        h = np.asarray(h, dtype=np.float64)
        if h.shape != (self.num_classes + 1,) or h[0] != 0.0:
            raise ValueError("cell log-odds must have length K+1 with zero pivot")
        self.cells[tuple(cell)] = h
        self.observed[tuple(cell)] = observed

    # -- queries -----------------------------------------------------------

    def beam_likelihood(self, trace: RayTrace, n: int, y: int) -> float:
        """Probability that the n-th traced cell (1-based) is the hit cell
        with class y while every earlier cell is free."""
        if not 1 <= n <= len(trace):
            raise IndexOutOfRange(f"n must be in 1..{len(trace)}")
        if not 1 <= y <= self.num_classes:
            raise InvalidClass(f"class must be in 1..{self.num_classes}")
        idx = tuple(trace.cells[:n].T)
        pmfs = logodds.softmax_pmf(self.cells[idx])
        return float(pmfs[-1, y] * np.prod(pmfs[:-1, 0]))

    def ray_logodds(self, trace: RayTrace) -> tuple[np.ndarray, np.ndarray]:
        """(current, prior) log-odds stacked per traced cell, shape (N, K+1)."""
        idx = tuple(trace.cells.T)
        h_t = self.cells[idx]
        h_0 = np.broadcast_to(self.prior, h_t.shape)
        return h_t, h_0

    def most_likely(self) -> np.ndarray:
        """Per-cell argmax class; ties resolve to the lowest class index."""
        return np.argmax(self.cells, axis=-1)

    def map_entropy(self, region=None) -> float:
        """Total Shannon entropy in nats, over ``region`` or the whole map.

        ``region`` may be a boolean mask of the map shape or an iterable of
        cell coordinates; an empty region contributes zero.
        """
        if region is None:
            h = self.cells.reshape(-1, self.num_classes + 1)
        elif isinstance(region, np.ndarray) and region.dtype == bool:
            h = self.cells[region]
        else:
            region = np.asarray(list(region), dtype=np.int64)
            if region.size == 0:
                return 0.0
            h = self.cells[tuple(region.reshape(-1, 3).T)]
        if h.size == 0:
            return 0.0
        logp = h - logodds.logsumexp(h, axis=-1)[..., None]
        p = np.exp(logp)
        with np.errstate(invalid="ignore"):
            terms = np.where(p > 0.0, p * logp, 0.0)
        return float(-np.sum(terms))

    def copy(self) -> "GridMap":
        out = GridMap(self.dims, self.resolution, self.num_classes, self.prior, self.origin)
        out.cells = self.cells.copy()
        out.observed = self.observed.copy()
        return out


# -- serialization ----------------------------------------------------------


def save_grid(gmap: GridMap, path) -> None:
    """Little-endian binary dump: header then row-major f32 log-odds."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<H", GRID_VERSION))
        fh.write(struct.pack("<3I", *gmap.dims))
        fh.write(struct.pack("<d", gmap.resolution))
        fh.write(struct.pack("<H", gmap.num_classes))
        fh.write(struct.pack("<3d", *gmap.origin))
        fh.write(gmap.prior.astype("<f4").tobytes())
        fh.write(gmap.cells.astype("<f4").tobytes())
        fh.write(gmap.observed.astype(np.uint8).tobytes())


def load_grid(path) -> GridMap:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != GRID_MAGIC:
            raise ValueError(f"not a grid map file (magic {magic!r})")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != GRID_VERSION:
            raise ValueError(f"unsupported grid version {version}")
        dims = struct.unpack("<3I", fh.read(12))
        (resolution,) = struct.unpack("<d", fh.read(8))
        (num_classes,) = struct.unpack("<H", fh.read(2))
        origin = struct.unpack("<3d", fh.read(24))
        prior = np.frombuffer(fh.read(4 * (num_classes + 1)), dtype="<f4").astype(np.float64)
        prior = prior.copy()
        prior[0] = 0.0
        gmap = GridMap(dims, resolution, num_classes, prior, origin)
        count = dims[0] * dims[1] * dims[2] * (num_classes + 1)
        cells = np.frombuffer(fh.read(4 * count), dtype="<f4").astype(np.float64)
        gmap.cells = cells.reshape(dims + (num_classes + 1,))
        gmap.cells[..., 0] = 0.0
        obs = fh.read(dims[0] * dims[1] * dims[2])
        if obs:
            gmap.observed = np.frombuffer(obs, dtype=np.uint8).astype(bool).reshape(dims)
        return gmap


def grid_to_text(gmap: GridMap) -> str:
    """Lossless text form (hex floats); intended for small maps in tests."""
    out = io.StringIO()
    out.write(f"ssmigrid-text dims={gmap.dims[0]},{gmap.dims[1]},{gmap.dims[2]} ")
    out.write(f"resolution={gmap.resolution.hex()} K={gmap.num_classes} ")
    out.write("origin=" + ",".join(v.hex() for v in gmap.origin) + "\n")
    out.write("prior " + " ".join(v.hex() for v in gmap.prior) + "\n")
    for i in range(gmap.dims[0]):
        for j in range(gmap.dims[1]):
            for k in range(gmap.dims[2]):
                flag = "1" if gmap.observed[i, j, k] else "0"
                vals = " ".join(v.hex() for v in gmap.cells[i, j, k])
                out.write(f"{i} {j} {k} {flag} {vals}\n")
    return out.getvalue()


def grid_from_text(text: str) -> GridMap:
    lines = text.strip().splitlines()
    head = dict(part.split("=", 1) for part in lines[0].split()[1:])
    dims = tuple(int(v) for v in head["dims"].split(","))
    resolution = float.fromhex(head["resolution"])
    num_classes = int(head["K"])
    origin = [float.fromhex(v) for v in head["origin"].split(",")]
    prior = np.array([float.fromhex(v) for v in lines[1].split()[1:]])
    gmap = GridMap(dims, resolution, num_classes, prior, origin)
    for line in lines[2:]:
        parts = line.split()
        i, j, k = int(parts[0]), int(parts[1]), int(parts[2])
        gmap.observed[i, j, k] = parts[3] == "1"
        gmap.cells[i, j, k] = [float.fromhex(v) for v in parts[4:]]
    return gmap
