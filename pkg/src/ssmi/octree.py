"""Adaptive-resolution multi-class map: an octree whose leaves hold truncated
categorical beliefs.

Every node has 0 or 8 children. Leaves store at most the 3 most likely class
log-odds plus a single "others" lump for the rest; with K <= 3 all classes are
tracked, the lump stays empty, and element updates reproduce the dense grid
arithmetic bit for bit. After each scan, sibling leaves that ended up with
identical beliefs are pruned into their parent, which is what makes ray casts
over this structure short: a ray meets a handful of homogeneous runs instead
of hundreds of elements.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import logodds
from .errors import InvalidClass, OriginOutOfBounds
from .grid import GRID_MAGIC, BeamMeasurement, GridMap, RayTrace, _traverse
from .logodds import CellRelation, SensorParams
from .mi import SrleRay

OCTREE_MAGIC = b"SSMIOCT1"

NEG_INF = float("-inf")


@dataclass(frozen=True)
class TruncatedSemantics:
    """Up to three (class, log-odds) pairs plus one lump for everything else.

    ``data`` is sorted by descending log-odds with class index breaking ties,
    and ``others`` is the log-odds of the aggregate probability of all
    untracked classes (-inf when nothing is untracked).
    """

    data: tuple[tuple[int, float], ...]
    others: float

    def __post_init__(self):
        if len(self.data) > 3:
            raise ValueError("at most 3 tracked classes")
        classes = [c for c, _ in self.data]
        if len(set(classes)) != len(classes) or any(c < 1 for c in classes):
            raise ValueError("tracked classes must be distinct ids >= 1")

    @staticmethod
    def _sorted(pairs) -> tuple[tuple[int, float], ...]:
        return tuple(sorted(pairs, key=lambda cv: (-cv[1], cv[0])))

    @classmethod
    def from_full(cls, h: np.ndarray) -> "TruncatedSemantics":
        """Build from a full K+1 log-odds vector, lumping beyond the top 3."""
        h = np.asarray(h, dtype=np.float64)
        k = h.shape[0] - 1
        pairs = cls._sorted((c, float(h[c])) for c in range(1, k + 1))
        if k <= 3:
            return cls(data=pairs, others=NEG_INF)
        kept = pairs[:3]
        lump = logodds.logsumexp(np.array([v for _, v in pairs[3:]]))
        return cls(data=kept, others=float(lump))

    def to_full(self, num_classes: int) -> np.ndarray:
        """Full K+1 vector. Exact when all classes are tracked; untracked
        classes split the lump evenly (the stored belief has no finer
        information about them)."""
        h = np.empty(num_classes + 1, dtype=np.float64)
        h[0] = 0.0
        tracked = dict(self.data)
        untracked = [c for c in range(1, num_classes + 1) if c not in tracked]
        for c, v in self.data:
            h[c] = v
        if untracked:
            share = self.others - math.log(len(untracked))
            for c in untracked:
                h[c] = share
        return h

    def value_of(self, cls_id: int) -> float | None:
        for c, v in self.data:
            if c == cls_id:
                return v
        return None

    def occupancy(self) -> float:
        """Log-odds of occupied (any class) versus free."""
        vals = [v for _, v in self.data]
        if np.isfinite(self.others):
            vals.append(self.others)
        if not vals:
            return NEG_INF
        return float(logodds.logsumexp(np.array(vals)))

    def pseudo_logodds(self) -> np.ndarray:
        """Pivot + tracked values + lump as one log-odds vector for entropy."""
        vals = [0.0] + [v for _, v in self.data]
        if np.isfinite(self.others):
            vals.append(self.others)
        return np.array(vals, dtype=np.float64)

    def entropy(self) -> float:
        return logodds.entropy(self.pseudo_logodds())

    def is_free_labeled(self) -> bool:
        """Most likely label is free; ties go to free (the lowest class)."""
        top = max([v for _, v in self.data] + ([self.others] if np.isfinite(self.others) else []))
        return 0.0 >= top


class SemanticNode:
    """Tree node: a belief plus either no children or exactly eight."""

    __slots__ = ("semantics", "children")

    def __init__(self, semantics: TruncatedSemantics, children=None):
        self.semantics = semantics
        self.children = children

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def occupancy(self) -> float:
        return self.semantics.occupancy()


def _uniform_scalar(vec: np.ndarray, name: str) -> float:
    if not np.all(vec[1:] == vec[1]):
        raise ValueError(f"{name} must be class-uniform when classes are lumped (K > 3)")
    return float(vec[1])


def update_semantics(
    sem: TruncatedSemantics,
    relation: CellRelation,
    y: int | None,
    params: SensorParams,
    prior: np.ndarray,
) -> TruncatedSemantics:
    """Bayesian update of one element-resolution belief.

    With K <= 3 this routes through the full-vector posterior update and
    clamp, matching the dense grid exactly. With more classes, a hit on an
    untracked class splits an alpha fraction off the lump for the new class,
    updates, re-sorts, and folds the evicted entry back into the lump.
    """
    k = params.num_classes
    if relation is CellRelation.UNOBSERVED:
        return sem
    if relation is CellRelation.OCCUPIED and (y is None or not 1 <= y <= k):
        raise InvalidClass(f"hit class must be in 1..{k}")

    if k <= 3:
        h = sem.to_full(k)
        l = params.phi_minus if relation is CellRelation.FREE else params.hit_logodds(y)
        new = logodds.clamp(logodds.posterior_update(h, l, prior), params)
        return TruncatedSemantics.from_full(new)

    # lumped path: parameters must treat occupied classes interchangeably
    phi_m = _uniform_scalar(params.phi_minus, "phi_minus")
    phi_p = _uniform_scalar(params.phi_plus, "phi_plus")
    psi_p = _uniform_scalar(params.psi_plus, "psi_plus")
    lo = _uniform_scalar(params.clamp_lo, "clamp_lo")
    hi = _uniform_scalar(params.clamp_hi, "clamp_hi")
    prior_occ = _uniform_scalar(np.asarray(prior), "prior")

    def clip(v: float) -> float:
        return min(max(v, lo), hi)

    if relation is CellRelation.FREE:
        shift = phi_m - prior_occ
        data = TruncatedSemantics._sorted((c, clip(v + shift)) for c, v in sem.data)
        return TruncatedSemantics(data=data, others=clip(sem.others + shift))

    tracked = dict(sem.data)
    if y in tracked:
        shift = phi_p - prior_occ
        data = TruncatedSemantics._sorted(
            (c, clip(v + shift + (psi_p if c == y else 0.0))) for c, v in sem.data
        )
        return TruncatedSemantics(data=data, others=clip(sem.others + shift))

    # alpha fraction of the lump becomes the newly tracked class
    h_aux = sem.others + math.log(params.alpha)
    rest = sem.others + phi_p - prior_occ + math.log1p(-params.alpha)
    shift = phi_p - prior_occ
    candidates = [(c, v + shift) for c, v in sem.data]
    candidates.append((y, h_aux + shift + psi_p))
    candidates = TruncatedSemantics._sorted(candidates)
    kept = candidates[:3]
    dropped = [v for _, v in candidates[3:]]
    lump = logodds.logsumexp(np.array(dropped + [rest]))
    return TruncatedSemantics(
        data=tuple((c, clip(v)) for c, v in kept), others=clip(float(lump))
    )


def fuse_children(
    a: TruncatedSemantics, b: TruncatedSemantics, params: SensorParams
) -> TruncatedSemantics:
    """Pairwise semantic fusion: average tracked log-odds class by class,
    slicing each lump into per-class shares for classes only the other node
    tracks, then re-truncate to the top 3 and clamp."""
    union = sorted({c for c, _ in a.data} | {c for c, _ in b.data})
    o_a = a.others - math.log(1 + len(union) - len(a.data))
    o_b = b.others - math.log(1 + len(union) - len(b.data))
    entries = []
    for y in union:
        va = a.value_of(y)
        vb = b.value_of(y)
        va = o_a if va is None else va
        vb = o_b if vb is None else vb
        entries.append((y, (va + vb) / 2.0))
    entries = TruncatedSemantics._sorted(entries)
    kept = entries[:3]
    lump_terms = [(o_a + o_b) / 2.0] + [v for _, v in entries[3:]]
    lump = float(logodds.logsumexp(np.array(lump_terms)))

    lo, hi = params.clamp_lo, params.clamp_hi
    data = tuple((c, float(min(max(v, lo[c]), hi[c]))) for c, v in kept)
    if math.isfinite(lump):
        lump = float(min(max(lump, lo[1]), hi[1]))
    return TruncatedSemantics(data=data, others=lump)


def fuse_many(children: list[TruncatedSemantics], params: SensorParams, mode: str) -> TruncatedSemantics:
    """Parent belief from 8 children: left fold of the pairwise rule in child
    order (default), or the plain elementwise mean when all children track the
    same classes ("mean" mode)."""
    if mode == "mean":
        classes = {frozenset(c for c, _ in ch.data) for ch in children}
        if len(classes) == 1:
            ref = children[0]
            data = []
            for c, _ in ref.data:
                vals = [dict(ch.data)[c] for ch in children]
                data.append((c, float(np.mean(vals))))
            others = float(np.mean([ch.others for ch in children]))
            sem = TruncatedSemantics(data=TruncatedSemantics._sorted(data), others=others)
            lo, hi = params.clamp_lo, params.clamp_hi
            data = tuple((c, float(min(max(v, lo[c]), hi[c]))) for c, v in sem.data)
            oth = sem.others
            if math.isfinite(oth):
                oth = float(min(max(oth, lo[1]), hi[1]))
            return TruncatedSemantics(data=data, others=oth)
        # class sets differ: fall back to the pairwise rule
    acc = children[0]
    for child in children[1:]:
        acc = fuse_children(acc, child, params)
    return acc


class SemanticOctree:
    """Cube-shaped multi-class map of side ``element_size * 2**max_depth``.

    ``fusion`` selects how inner-node summaries are refreshed at prune time:
    "fold" (pairwise left fold over the children) or "mean".
    """

    def __init__(
        self,
        element_size: float,
        max_depth: int,
        num_classes: int,
        prior: np.ndarray | None = None,
        origin=(0.0, 0.0, 0.0),
        fusion: str = "fold",
    ):
        if max_depth < 1 or max_depth > 16:
            raise ValueError("max_depth must be in 1..16")
        if fusion not in ("fold", "mean"):
            raise ValueError("fusion must be 'fold' or 'mean'")
        self.element_size = float(element_size)
        self.max_depth = int(max_depth)
        self.num_classes = int(num_classes)
        self.origin = np.asarray(origin, dtype=np.float64)
        self.fusion = fusion
        if prior is None:
            prior = logodds.uniform_prior(num_classes)
        prior = np.ascontiguousarray(prior, dtype=np.float64)
        if prior.shape != (num_classes + 1,) or prior[0] != 0.0:
            raise ValueError("prior must be a K+1 log-odds vector with zero pivot")
        prior.flags.writeable = False
        self.prior = prior
        self.prior_semantics = TruncatedSemantics.from_full(prior)
        self.root = SemanticNode(self.prior_semantics)

    @property
    def size_elements(self) -> int:
        return 1 << self.max_depth

    @property
    def dims(self) -> tuple[int, int, int]:
        n = self.size_elements
        return (n, n, n)

    @property
    def truncation_approximate(self) -> bool:
        """True when stored beliefs lump classes (K > 3), which makes
        information values an approximation of the full-vector ones."""
        return self.num_classes > 3

    # -- addressing ----------------------------------------------------------

    def _child_slot(self, cell, depth: int) -> int:
        bit = self.max_depth - 1 - depth
        return (
            (((cell[0] >> bit) & 1) << 2)
            | (((cell[1] >> bit) & 1) << 1)
            | ((cell[2] >> bit) & 1)
        )

    def in_bounds(self, cell) -> bool:
        n = self.size_elements
        return all(0 <= c < n for c in cell)

    def leaf_at(self, cell) -> tuple[TruncatedSemantics, tuple[int, int, int], int]:
        """Leaf value covering an element, with the leaf's low corner and edge
        length in elements (used for run caching along rays)."""
        node = self.root
        depth = 0
        while node.children is not None:
            node = node.children[self._child_slot(cell, depth)]
            depth += 1
        size = 1 << (self.max_depth - depth)
        mask = ~(size - 1)
        low = (cell[0] & mask, cell[1] & mask, cell[2] & mask)
        return node.semantics, low, size

    def query_element(self, cell) -> TruncatedSemantics:
        return self.leaf_at(cell)[0]

    def query_point(self, point) -> TruncatedSemantics:
        g = (np.asarray(point, dtype=np.float64) - self.origin) / self.element_size
        cell = tuple(int(v) for v in np.floor(g))
        if not self.in_bounds(cell):
            raise OriginOutOfBounds(f"point {point} outside the octree cube")
        return self.query_element(cell)

    # -- updates ---------------------------------------------------------------

    def update_node(
        self, sem: TruncatedSemantics, relation: CellRelation, y: int | None,
        params: SensorParams,
    ) -> TruncatedSemantics:
        return update_semantics(sem, relation, y, params, self.prior)

    def _write_element(self, cell, new: TruncatedSemantics) -> None:
        """Expand down to element resolution and store; caller already knows
        the new value differs from the covering leaf's."""
        node = self.root
        depth = 0
        while depth < self.max_depth:
            if node.children is None:
                node.children = [SemanticNode(node.semantics) for _ in range(8)]
            node = node.children[self._child_slot(cell, depth)]
            depth += 1
        node.semantics = new

    def update_element(
        self, cell, relation: CellRelation, y: int | None, params: SensorParams
    ) -> None:
        """Update one element; leaves are only expanded when the update would
        actually change the stored value, so saturated space stays pruned."""
        current = self.query_element(cell)
        new = self.update_node(current, relation, y, params)
        if new == current:
            return
        self._write_element(cell, new)

    def set_element(self, cell, h: np.ndarray) -> None:
        """Write an element belief directly (scene construction, conversion)."""
        new = TruncatedSemantics.from_full(np.asarray(h, dtype=np.float64))
        current = self.query_element(cell)
        if new == current:
            return
        self._write_element(cell, new)

    def insert_scan(self, beams: list[BeamMeasurement], params: SensorParams) -> "SemanticOctree":
        """Integrate beams in order (same cell arithmetic as the dense grid),
        then prune bottom-up."""
        if params.num_classes != self.num_classes:
            raise ValueError("sensor parameters and tree disagree on K")
        for beam in beams:
            trace = self.cast_elements(beam)
            end = trace.hit_index if trace.hit_index is not None else len(trace)
            for n in range(end):
                self.update_element(trace.cells[n], CellRelation.FREE, None, params)
            if trace.hit_index is not None:
                self.update_element(
                    trace.cells[trace.hit_index], CellRelation.OCCUPIED, beam.category, params
                )
        self.prune(params)
        return self

    def prune(self, params: SensorParams | None = None) -> "SemanticOctree":
        """Bottom-up: collapse inner nodes whose 8 children are identical
        leaves; refresh every surviving inner node's summary from its
        children. Point queries are unaffected."""
        if params is None:
            params = SensorParams.default(self.num_classes)

        def visit(node: SemanticNode) -> None:
            if node.children is None:
                return
            for child in node.children:
                visit(child)
            first = node.children[0]
            if first.children is None and all(
                c.children is None and c.semantics == first.semantics
                for c in node.children[1:]
            ):
                node.semantics = first.semantics
                node.children = None
            else:
                node.semantics = fuse_many(
                    [c.semantics for c in node.children], params, self.fusion
                )

        visit(self.root)
        return self

    # -- ray casting -------------------------------------------------------------

    def cast_elements(self, beam: BeamMeasurement) -> RayTrace:
        """Element-resolution trace through the cube (same geometry as the
        dense caster, so grid and tree agree on what a beam touches)."""
        g = (beam.origin - self.origin) / self.element_size
        n = float(self.size_elements)
        if np.any(g < 0.0) or np.any(g >= n):
            raise OriginOutOfBounds(f"beam origin {beam.origin} outside the octree cube")
        s_max = beam.max_range / self.element_size
        cells, entries = _traverse(g, beam.direction, s_max, np.array(self.dims))
        entries = np.asarray(entries)
        chords = np.diff(entries) * self.element_size
        hit_index = None
        if beam.hits:
            s_hit = beam.range / self.element_size
            if s_hit < entries[-1]:
                hit_index = int(np.searchsorted(entries[1:], s_hit, side="right"))
        return RayTrace(cells=np.asarray(cells, dtype=np.int64), hit_index=hit_index, chords=chords)

    def encode_trace(self, trace: RayTrace, skip_first_cell: bool = False) -> SrleRay | None:
        """Run-length encode leaf beliefs along a trace.

        Consecutive elements with equal beliefs merge into one run even when
        they belong to distinct leaves, so expanding the result reproduces the
        per-element sequence exactly and the widths sum to the element count.
        """
        cells = trace.cells[1:] if skip_first_cell else trace.cells
        if cells.shape[0] == 0:
            return None
        widths: list[int] = []
        values: list[TruncatedSemantics] = []
        cached_low = cached_size = None
        cached_sem = None
        for cell in cells:
            c = (int(cell[0]), int(cell[1]), int(cell[2]))
            if cached_low is not None and all(
                cached_low[i] <= c[i] < cached_low[i] + cached_size for i in range(3)
            ):
                sem = cached_sem
            else:
                sem, cached_low, cached_size = self.leaf_at(c)
                cached_sem = sem
            if values and values[-1] == sem:
                widths[-1] += 1
            else:
                values.append(sem)
                widths.append(1)
        chi_t = np.stack([v.to_full(self.num_classes) for v in values])
        chi_0 = np.broadcast_to(self.prior, chi_t.shape).copy()
        return SrleRay(widths=np.asarray(widths, dtype=np.int64), chi_t=chi_t, chi_0=chi_0)

    def raycast_srle(self, beam: BeamMeasurement) -> SrleRay:
        """Cast a beam and return its run-length encoded belief sequence."""
        return self.encode_trace(self.cast_elements(beam), skip_first_cell=False)

    # -- aggregates ----------------------------------------------------------------

    def iter_leaves(self):
        """Yield (semantics, low_corner, size_elements) over all leaves."""
        stack = [(self.root, (0, 0, 0), self.size_elements)]
        while stack:
            node, low, size = stack.pop()
            if node.children is None:
                yield node.semantics, low, size
                continue
            half = size // 2
            for slot in range(7, -1, -1):
                dx, dy, dz = (slot >> 2) & 1, (slot >> 1) & 1, slot & 1
                child_low = (low[0] + dx * half, low[1] + dy * half, low[2] + dz * half)
                stack.append((node.children[slot], child_low, half))

    def num_leaves(self) -> int:
        return sum(1 for _ in self.iter_leaves())

    @staticmethod
    def _box_overlap(low, size, box) -> int:
        count = 1
        for i in range(3):
            lo = max(low[i], box[0][i])
            hi = min(low[i] + size, box[1][i])
            if hi <= lo:
                return 0
            count *= hi - lo
        return count

    def map_entropy(self, region=None) -> float:
        """Total entropy in nats over a region box (element coordinates,
        ((lo),(hi)) half-open) or the full cube."""
        box = region if region is not None else ((0, 0, 0), self.dims)
        total = 0.0
        for sem, low, size in self.iter_leaves():
            n = self._box_overlap(low, size, box)
            if n:
                total += n * sem.entropy()
        return total

    def observed_fraction(self, region=None) -> float:
        """Fraction of elements in the region whose belief moved off the prior."""
        box = region if region is not None else ((0, 0, 0), self.dims)
        total = 0
        seen = 0
        for sem, low, size in self.iter_leaves():
            n = self._box_overlap(low, size, box)
            total += n
            if n and sem != self.prior_semantics:
                seen += n
        return seen / total if total else 0.0


# -- grid conversion --------------------------------------------------------------


def octree_from_grid(gmap: GridMap, fusion: str = "fold") -> SemanticOctree:
    """Copy a dense map into a fresh octree at the grid resolution and prune.
    The cube edge is the next power of two covering the largest extent."""
    depth = max(1, math.ceil(math.log2(max(gmap.dims))))
    tree = SemanticOctree(
        element_size=gmap.resolution,
        max_depth=depth,
        num_classes=gmap.num_classes,
        prior=gmap.prior,
        origin=gmap.origin,
        fusion=fusion,
    )
    for i in range(gmap.dims[0]):
        for j in range(gmap.dims[1]):
            for k in range(gmap.dims[2]):
                tree.set_element((i, j, k), gmap.cells[i, j, k])
    tree.prune()
    return tree


def grid_from_octree(tree: SemanticOctree, dims=None) -> GridMap:
    """Sample every element of a region into a dense map. Lumped beliefs
    (K > 3) expand with the untracked classes sharing the lump evenly."""
    dims = tuple(dims) if dims is not None else tree.dims
    gmap = GridMap(dims, tree.element_size, tree.num_classes, tree.prior, tree.origin)
    for i in range(dims[0]):
        for j in range(dims[1]):
            for k in range(dims[2] if len(dims) == 3 else 1):
                sem = tree.query_element((i, j, k))
                gmap.cells[i, j, k] = sem.to_full(tree.num_classes)
                gmap.observed[i, j, k] = sem != tree.prior_semantics
    return gmap


# -- serialization -----------------------------------------------------------------


def save_octree(tree: SemanticOctree, path) -> None:
    """Preorder binary dump; byte-stable for a given (canonical) tree."""
    with open(path, "wb") as fh:
        fh.write(OCTREE_MAGIC)
        fh.write(struct.pack("<d", tree.element_size))
        fh.write(struct.pack("<B", tree.max_depth))
        fh.write(struct.pack("<H", tree.num_classes))
        fh.write(struct.pack("<B", 1 if tree.fusion == "mean" else 0))
        fh.write(struct.pack("<3d", *tree.origin))
        fh.write(tree.prior.astype("<f4").tobytes())

        def write_node(node: SemanticNode) -> None:
            mask = 0 if node.children is None else 0xFF
            sem = node.semantics
            # derive occupancy from the f32-rounded values so a load/save
            # round trip reproduces the file byte for byte
            rounded = TruncatedSemantics(
                data=tuple((c, float(np.float32(v))) for c, v in sem.data),
                others=float(np.float32(sem.others)),
            )
            fh.write(struct.pack("<B", mask))
            fh.write(struct.pack("<f", rounded.occupancy()))
            fh.write(struct.pack("<B", len(sem.data)))
            for c, v in sem.data:
                fh.write(struct.pack("<Hf", c, v))
            fh.write(struct.pack("<f", sem.others))
            if node.children is not None:
                for child in node.children:
                    write_node(child)

        write_node(tree.root)


def load_octree(path) -> SemanticOctree:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != OCTREE_MAGIC:
            kind = "grid map" if magic == GRID_MAGIC else f"unknown (magic {magic!r})"
            raise ValueError(f"not an octree file: {kind}")
        (element_size,) = struct.unpack("<d", fh.read(8))
        (max_depth,) = struct.unpack("<B", fh.read(1))
        (num_classes,) = struct.unpack("<H", fh.read(2))
        (fusion_flag,) = struct.unpack("<B", fh.read(1))
        origin = struct.unpack("<3d", fh.read(24))
        prior = np.frombuffer(fh.read(4 * (num_classes + 1)), dtype="<f4").astype(np.float64)
        prior = prior.copy()
        prior[0] = 0.0
        tree = SemanticOctree(
            element_size, max_depth, num_classes, prior, origin,
            fusion="mean" if fusion_flag else "fold",
        )

        def read_node() -> SemanticNode:
            (mask,) = struct.unpack("<B", fh.read(1))
            fh.read(4)  # occupancy is derived; skip on load
            (count,) = struct.unpack("<B", fh.read(1))
            data = []
            for _ in range(count):
                c, v = struct.unpack("<Hf", fh.read(6))
                data.append((c, float(v)))
            (others,) = struct.unpack("<f", fh.read(4))
            sem = TruncatedSemantics(
                data=TruncatedSemantics._sorted(data), others=float(others)
            )
            node = SemanticNode(sem)
            if mask:
                node.children = [read_node() for _ in range(8)]
            return node

        tree.root = read_node()
        return tree
