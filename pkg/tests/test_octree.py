"""Semantic octree: element updates against the dense grid, truncated-belief
bookkeeping, fusion, pruning, run-length ray casts, and serialization."""

import math

import numpy as np
import pytest

from ssmi import logodds as lo
from ssmi.grid import BeamMeasurement, GridMap
from ssmi.logodds import CellRelation, SensorParams
from ssmi.octree import (
    SemanticOctree,
    TruncatedSemantics,
    fuse_children,
    fuse_many,
    grid_from_octree,
    load_octree,
    octree_from_grid,
    save_octree,
    update_semantics,
)


def random_beam(rng, lo_pt=1.0, hi_pt=31.0, r_max=20.0, k=3):
    origin = rng.uniform(lo_pt, hi_pt, 3)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    r = float(rng.uniform(0, r_max)) if rng.random() < 0.8 else r_max
    cat = int(rng.integers(1, k + 1)) if r < r_max else None
    return BeamMeasurement(origin, d, r, cat, r_max)


# -- element update = grid update (K <= 3) ---------------------------------------


def test_update_matches_full_vector_path(params3, rng):
    tree = SemanticOctree(1.0, 3, 3)
    for _ in range(50):
        h = np.zeros(4)
        h[1:] = rng.uniform(-6, 6, 3)
        sem = TruncatedSemantics.from_full(h)
        y = int(rng.integers(1, 4))
        got = update_semantics(sem, CellRelation.OCCUPIED, y, params3, tree.prior)
        want = lo.clamp(
            lo.posterior_update(h, params3.hit_logodds(y), tree.prior), params3
        )
        np.testing.assert_array_equal(got.to_full(3), want)
        got_free = update_semantics(sem, CellRelation.FREE, None, params3, tree.prior)
        want_free = lo.clamp(lo.posterior_update(h, params3.phi_minus, tree.prior), params3)
        np.testing.assert_array_equal(got_free.to_full(3), want_free)


def test_update_unobserved_is_noop(params3):
    sem = TruncatedSemantics.from_full(np.array([0.0, 1.0, -1.0, 0.5]))
    assert update_semantics(sem, CellRelation.UNOBSERVED, None, params3, np.zeros(4)) == sem


def test_untracked_hit_splits_lump_with_alpha():
    k = 5
    params = SensorParams.default(k, clamp_limit=30.0, alpha=0.5)
    prior = lo.uniform_prior(k)
    tree_prior = TruncatedSemantics.from_full(prior)
    assert tree_prior.others == pytest.approx(math.log(2.0))  # classes 4,5 at 0
    untracked = 5
    new = update_semantics(tree_prior, CellRelation.OCCUPIED, untracked, params, prior)
    h_aux = tree_prior.others + math.log(0.5)
    expect_y = h_aux + params.phi_plus[untracked] + params.psi_plus[untracked]
    assert new.value_of(untracked) == pytest.approx(expect_y, abs=1e-12)
    # one previously tracked class was evicted into the lump alongside the
    # remaining (1 - alpha) share
    rest = tree_prior.others + params.phi_plus[1] + math.log(0.5)
    evicted = 0.0 + params.phi_plus[1]
    assert new.others == pytest.approx(
        float(np.logaddexp(rest, evicted)), abs=1e-12
    )


def test_lump_tracks_logsumexp_of_members():
    # side-by-side per-class ledger adopting the same alpha-split rule: the
    # stored lump must always equal log-sum-exp of its member classes. The
    # script never evicts the same class twice, so every member keeps an
    # identifiable value.
    k = 5
    params = SensorParams.default(k, clamp_limit=80.0, alpha=0.5)
    prior = lo.uniform_prior(k)
    sem = TruncatedSemantics.from_full(prior)
    members = {4: 0.0, 5: 0.0}
    shift_free = params.phi_minus[1]
    shift_hit = params.phi_plus[1]

    def lse(d):
        return float(np.logaddexp.reduce(list(d.values()))) if d else -np.inf

    script = ["free", ("hit", 1), ("hit", 4), "free", ("hit", 2), ("hit", 1)]
    for action in script:
        tracked_before = dict(sem.data)
        if action == "free":
            sem = update_semantics(sem, CellRelation.FREE, None, params, prior)
            members = {c: v + shift_free for c, v in members.items()}
            assert sem.others == pytest.approx(lse(members), abs=1e-10)
            continue
        y = action[1]
        sem = update_semantics(sem, CellRelation.OCCUPIED, y, params, prior)
        if y in tracked_before:
            members = {c: v + shift_hit for c, v in members.items()}
        else:
            # alpha share leaves as class y; the rest of the lump keeps the
            # (1 - alpha) share, rescaled uniformly across remaining members
            lump_before = lse(members)
            y_val = lump_before + math.log(params.alpha) + shift_hit + params.psi_plus[y]
            rest = {c: v for c, v in members.items() if c != y}
            if rest:
                delta = (lump_before + math.log1p(-params.alpha)) - lse(rest)
                rest = {c: v + delta + shift_hit for c, v in rest.items()}
            members = rest
            members[y] = y_val
        # whatever fell out of the top 3 joins the ledger at its exact value
        for c, v in tracked_before.items():
            if sem.value_of(c) is None:
                members[c] = v + shift_hit + (params.psi_plus[c] if c == y else 0.0)
        members = {c: v for c, v in members.items() if sem.value_of(c) is None}
        assert sem.others == pytest.approx(lse(members), abs=1e-10)


# -- fusion ------------------------------------------------------------------------


def test_fuse_self_is_fixed_point(params3, rng):
    for _ in range(30):
        h = np.zeros(4)
        h[1:] = rng.uniform(-6, 6, 3)
        sem = TruncatedSemantics.from_full(h)
        assert fuse_children(sem, sem, params3) == sem


def test_fuse_commutes(rng):
    params = SensorParams.default(5)
    for _ in range(30):
        a = TruncatedSemantics.from_full(
            np.concatenate([[0.0], rng.uniform(-5, 5, 5)])
        )
        b = TruncatedSemantics.from_full(
            np.concatenate([[0.0], rng.uniform(-5, 5, 5)])
        )
        assert fuse_children(a, b, params) == fuse_children(b, a, params)


def test_fuse_disjoint_singletons_hand_executed():
    params = SensorParams.default(4)
    a = TruncatedSemantics(data=((1, 2.0),), others=-1.0)
    b = TruncatedSemantics(data=((2, 1.0),), others=-2.0)
    fused = fuse_children(a, b, params)
    o_a = -1.0 - math.log(2.0)
    o_b = -2.0 - math.log(2.0)
    assert fused.value_of(1) == pytest.approx((2.0 + o_b) / 2.0)
    assert fused.value_of(2) == pytest.approx((o_a + 1.0) / 2.0)
    assert fused.others == pytest.approx((o_a + o_b) / 2.0)


def test_fuse_keeps_sorted_top3(rng):
    params = SensorParams.default(6)
    for _ in range(40):
        a = TruncatedSemantics.from_full(np.concatenate([[0.0], rng.uniform(-5, 5, 6)]))
        b = TruncatedSemantics.from_full(np.concatenate([[0.0], rng.uniform(-5, 5, 6)]))
        fused = fuse_children(a, b, params)
        vals = [v for _, v in fused.data]
        assert len(fused.data) <= 3
        assert vals == sorted(vals, reverse=True)


def test_mean_fusion_is_elementwise_mean(params3, rng):
    kids = []
    fulls = []
    for _ in range(8):
        h = np.zeros(4)
        h[1:] = rng.uniform(-5, 5, 3)
        fulls.append(h)
        kids.append(TruncatedSemantics.from_full(h))
    fused = fuse_many(kids, params3, "mean")
    want = np.mean(fulls, axis=0)
    np.testing.assert_allclose(fused.to_full(3), lo.clamp(want, params3), atol=1e-12)


def test_fold_fusion_weights():
    # left fold halves the accumulator each step: the first child ends up
    # with weight 2^-7 and the last with 2^-1
    params = SensorParams.default(1, clamp_limit=50.0)
    vals = [float(i) for i in range(8)]
    kids = [TruncatedSemantics(data=((1, v),), others=-np.inf) for v in vals]
    fused = fuse_many(kids, params, "fold")
    weights = [2.0 ** -(7)] + [2.0 ** -(8 - i) for i in range(1, 8)]
    assert fused.value_of(1) == pytest.approx(sum(w * v for w, v in zip(weights, vals)))


# -- insertion and pruning --------------------------------------------------------


def test_single_beam_fresh_tree(params3):
    tree = SemanticOctree(1.0, 4, 3)
    beam = BeamMeasurement.planar((0.0, 3.5), 0.0, 16.0, None, 16.0)
    tree.insert_scan([beam], params3)
    want = lo.clamp(tree.prior + (params3.phi_minus - tree.prior), params3)
    for x in range(16):
        np.testing.assert_array_equal(tree.query_element((x, 3, 0)).to_full(3), want)
    # octants the beam never touched stay single prior leaves
    assert tree.query_element((3, 3, 12)) == tree.prior_semantics
    upper = tree.root.children[1]  # octant z >= 8, x < 8, y < 8
    assert upper.is_leaf


def test_empty_scan_is_noop(params3):
    tree = SemanticOctree(1.0, 3, 3)
    tree.insert_scan([], params3)
    assert tree.root.is_leaf
    assert tree.num_leaves() == 1


def minimal_leaf_count(values):
    """Canonical octree size of a dense value cube (independent merge rule)."""
    n = values.shape[0]

    def rec(x, y, z, size):
        block = values[x : x + size, y : y + size, z : z + size]
        if np.all(block == block[0, 0, 0]):
            return 1
        half = size // 2
        return sum(
            rec(x + dx * half, y + dy * half, z + dz * half, half)
            for dx in (0, 1)
            for dy in (0, 1)
            for dz in (0, 1)
        )

    return rec(0, 0, 0, n)


def test_saturated_beam_prunes_to_minimal_blocks(params3):
    tree = SemanticOctree(1.0, 3, 3)
    gmap = GridMap((8, 8, 8), 1.0, 3)
    beam = BeamMeasurement(
        origin=np.array([0.0, 3.5, 3.5]),
        direction=np.array([1.0, 0.0, 0.0]),
        range=5.5,
        category=2,
        max_range=8.0,
    )
    for _ in range(10):  # clamp saturation makes repeated values identical
        tree.insert_scan([beam], params3)
        gmap.integrate(beam, params3)
    key = np.zeros(gmap.dims, dtype=np.int64)
    uniq = {}
    for i in range(8):
        for j in range(8):
            for k in range(8):
                t = tuple(gmap.cells[i, j, k])
                key[i, j, k] = uniq.setdefault(t, len(uniq))
    assert tree.num_leaves() == minimal_leaf_count(key)


def test_prune_uniform_tree_to_root(params3):
    tree = SemanticOctree(1.0, 3, 3)
    sem = tree.prior_semantics
    tree.root.children = [type(tree.root)(sem) for _ in range(8)]
    tree.prune(params3)
    assert tree.root.is_leaf


def test_prune_requires_all_eight_identical(params3):
    tree = SemanticOctree(1.0, 1, 3)
    sem = tree.prior_semantics
    other = TruncatedSemantics.from_full(np.array([0.0, 1.0, 0.0, 0.0]))
    tree.root.children = [type(tree.root)(sem) for _ in range(7)] + [type(tree.root)(other)]
    tree.prune(params3)
    assert not tree.root.is_leaf


def test_prune_idempotent_and_query_transparent(params3, rng):
    tree = SemanticOctree(1.0, 5, 3)
    for _ in range(30):
        tree.insert_scan([random_beam(rng)], params3)
    points = [tuple(rng.integers(0, 32, 3)) for _ in range(500)]
    before = [tree.query_element(p) for p in points]
    tree.prune(params3)
    after = [tree.query_element(p) for p in points]
    assert before == after
    leaves = tree.num_leaves()
    tree.prune(params3)
    assert tree.num_leaves() == leaves


# -- run-length ray casts -----------------------------------------------------------


def test_fresh_tree_single_run(params3):
    tree = SemanticOctree(1.0, 4, 3)
    beam = BeamMeasurement.planar((0.0, 7.5), 0.0, 16.0, None, 16.0)
    ray = tree.raycast_srle(beam)
    np.testing.assert_array_equal(ray.widths, [16])
    np.testing.assert_array_equal(ray.chi_t[0], tree.prior)


def test_three_region_run_widths(params3):
    tree = SemanticOctree(1.0, 4, 3)
    hit = BeamMeasurement.planar((0.0, 7.5), 0.0, 6.0, 2, 16.0)
    for _ in range(8):  # saturate so the free run is uniform
        tree.insert_scan([hit], params3)
    full = BeamMeasurement.planar((0.0, 7.5), 0.0, 16.0, None, 16.0)
    ray = tree.raycast_srle(full)
    np.testing.assert_array_equal(ray.widths, [6, 1, 9])
    assert ray.num_elements == 16


def test_srle_expansion_matches_element_queries(params3, rng):
    tree = SemanticOctree(1.0, 5, 3)
    for _ in range(25):
        tree.insert_scan([random_beam(rng)], params3)
    for _ in range(10):
        beam = random_beam(rng, r_max=25.0)
        trace = tree.cast_elements(beam)
        ray = tree.encode_trace(trace)
        assert ray.num_elements == len(trace)
        expanded, _ = ray.expand()
        for idx, cell in enumerate(trace.cells):
            want = tree.query_element(tuple(cell)).to_full(3)
            np.testing.assert_array_equal(expanded[idx], want)


def test_doubling_depth_keeps_fresh_q_one():
    for depth in (3, 4, 5):
        tree = SemanticOctree(1.0, depth, 2)
        edge = float(tree.size_elements)
        beam = BeamMeasurement.planar((0.0, edge / 2 + 0.5), 0.0, edge, None, edge)
        assert tree.raycast_srle(beam).num_runs == 1


# -- grid agreement at scale ---------------------------------------------------------


def test_grid_octree_bit_agreement(params3, rng):
    gmap = GridMap((16, 16, 16), 1.0, 3)
    tree = SemanticOctree(1.0, 4, 3)
    for _ in range(60):
        beam = random_beam(rng, 1.0, 15.0, r_max=12.0)
        gmap.integrate(beam, params3)
        tree.insert_scan([beam], params3)
    for i in range(16):
        for j in range(16):
            for k in range(16):
                np.testing.assert_array_equal(
                    tree.query_element((i, j, k)).to_full(3), gmap.cells[i, j, k]
                )


# -- serialization and conversion ------------------------------------------------------


def test_octree_serialization_roundtrip(tmp_path, params3, rng):
    tree = SemanticOctree(0.5, 4, 3)  # cube spans [0, 8) meters
    for _ in range(20):
        beam = random_beam(rng, 1.5, 6.5, r_max=6.0)
        tree.insert_scan([beam], params3)
    path = tmp_path / "tree.ssmioct"
    save_octree(tree, path)
    first = path.read_bytes()
    save_octree(tree, path)
    assert path.read_bytes() == first  # byte-stable
    back = load_octree(path)
    assert back.max_depth == tree.max_depth
    assert back.element_size == tree.element_size
    assert back.num_leaves() == tree.num_leaves()
    for _ in range(200):
        cell = tuple(rng.integers(0, 16, 3))
        got = back.query_element(cell)
        want = tree.query_element(cell)
        np.testing.assert_allclose(
            got.pseudo_logodds(), want.pseudo_logodds(), atol=1e-6
        )
    save_octree(back, tmp_path / "again.ssmioct")
    assert (tmp_path / "again.ssmioct").read_bytes() == first


def test_grid_octree_conversion(params3, rng):
    gmap = GridMap((8, 8, 8), 1.0, 3)
    for _ in range(15):
        gmap.integrate(random_beam(rng, 1.0, 7.0, r_max=6.0), params3)
    tree = octree_from_grid(gmap)
    for _ in range(100):
        cell = tuple(rng.integers(0, 8, 3))
        np.testing.assert_array_equal(
            tree.query_element(cell).to_full(3), gmap.cells[cell]
        )
    back = grid_from_octree(tree)
    np.testing.assert_array_equal(back.cells, gmap.cells)
