import numpy as np
import pytest

from oracles import flood_fill_labels
from topofield.skeleton import Branch, SkeletonGraph, skeletonize_graph
from topofield.synthtree import TreeSpec, capsule_mask, generate_case
from topofield.topobreak import (
    BranchNotBreakable,
    BreakParams,
    apply_break,
    chord_parameter,
    corrupt,
    polyline_projection,
    removed_mask,
    retention_probability,
    select_breakable_branches,
)
from topofield.voxel import VoxelVolume, coords_to_mask, count_components
from treecheck import capsule_isolated, cycle_rank


def _line_graph(n):
    path = np.stack([np.arange(n), np.zeros(n, int), np.zeros(n, int)], 1)
    return SkeletonGraph([], [Branch(path, np.ones(n), (0, 1))])


def _tube(radius=2.0, length=30):
    shape = (length + 8, 13, 13)
    return VoxelVolume.from_mask(capsule_mask(shape, (6, 6, 4), (6, 6, 4 + length), radius))


def test_select_breakable():
    g = SkeletonGraph([], [Branch(np.zeros((4, 3), int), np.ones(4), (0, 1)) for _ in range(3)])
    assert select_breakable_branches(g, 10) == []
    assert select_breakable_branches(_line_graph(20), 10) == [0]


def test_select_matches_filter():
    case = generate_case(TreeSpec(seed=3))
    _, g = skeletonize_graph(case.complete_tree)
    for k in (0, 5, 8, 12):
        assert select_breakable_branches(g, k) == [i for i, b in enumerate(g.edges) if len(b.path) > k]


def test_retention_profile():
    p = BreakParams()
    t = np.array([0.0, 0.45, 0.5, 0.55, 0.61, 1.0])
    r = retention_probability(t, p)
    assert r[1] == r[2] == r[3] == 0.0
    assert r[0] == pytest.approx(0.35) and r[-1] == pytest.approx(0.35)
    assert 0 < r[4] < r[0]


def test_tube_break_disconnects():
    vol = _tube()
    _, g = skeletonize_graph(vol)
    rng = np.random.default_rng(0)
    out, rec = apply_break(vol, g, 0, rng)
    assert count_components(out) == 2
    rm = coords_to_mask(rec.removed, vol.mask.shape)
    assert rm.any() and not (rm & ~vol.mask).any()
    assert np.array_equal(out.mask, vol.mask & ~rm)
    assert rec.endpoint_a != rec.endpoint_b
    path = {tuple(p) for p in g.edges[0].path.tolist()}
    assert rec.endpoint_a in path and rec.endpoint_b in path


def test_short_branch_not_breakable():
    vol = _tube(length=4)
    _, g = skeletonize_graph(vol)
    with pytest.raises(BranchNotBreakable, match="branch not breakable"):
        apply_break(vol, g, 0, np.random.default_rng(0))


def test_p_edge_zero_removes_whole_capsule():
    vol = _tube(radius=2.5)
    _, g = skeletonize_graph(vol)
    params = BreakParams(p_edge=0.0)
    out, rec = apply_break(vol, g, 0, np.random.default_rng(1), params)
    reach = rec.capsule_radius * params.inflation
    from topofield.voxel import mask_to_coords

    fg = mask_to_coords(vol.mask)
    d, _, _ = polyline_projection(fg, rec.polyline)
    cand = coords_to_mask(fg[d <= reach], vol.mask.shape)
    assert np.array_equal(coords_to_mask(rec.removed, vol.mask.shape) & cand, cand)
    assert count_components(out) == 2


def test_retention_monte_carlo_edges_beat_centre():
    vol = _tube(radius=3.0, length=40)
    _, g = skeletonize_graph(vol)
    from topofield.voxel import mask_to_coords

    fg = mask_to_coords(vol.mask)
    params = BreakParams()
    rng = np.random.default_rng(2)
    kept = {0.05: [0, 0], 0.45: [0, 0]}
    for _ in range(1000):
        _, rec = apply_break(vol, g, 0, rng, params)
        d, _, _ = polyline_projection(fg, rec.polyline)
        cand = fg[d <= rec.capsule_radius * params.inflation]
        t = chord_parameter(cand, rec.polyline[0], rec.polyline[-1])
        removed = coords_to_mask(rec.removed, vol.mask.shape)[cand[:, 2], cand[:, 1], cand[:, 0]]
        for centre in kept:
            sel = np.abs(t - centre) < 0.05
            kept[centre][0] += int((~removed[sel]).sum())
            kept[centre][1] += int(sel.sum())
    edge = kept[0.05][0] / kept[0.05][1]
    mid = kept[0.45][0] / kept[0.45][1]
    assert edge > mid


def test_corrupt_basic():
    case = generate_case(TreeSpec(seed=4))
    out, recs = corrupt(case.complete_tree, 0, seed=1)
    assert out == case.complete_tree and recs == []
    a, ra = corrupt(case.complete_tree, 3, seed=1)
    b, rb = corrupt(case.complete_tree, 3, seed=1)
    assert a == b and [r.to_json() for r in ra] == [r.to_json() for r in rb]
    assert not (a.mask & ~case.complete_tree.mask).any()
    with pytest.raises(ValueError):
        corrupt(case.complete_tree, -1)


def test_corrupt_depth3_ncc_bounds():
    spec = TreeSpec(dims=(96, 96, 96), depth=3, children_per_node=2, branch_length_range=(12, 16), seed=2)
    case = generate_case(spec)
    out, recs = corrupt(case.complete_tree, 3, seed=0)
    n = flood_fill_labels(out.mask)[1]
    assert 2 <= n <= 1 + 3
    assert np.array_equal(removed_mask(recs, out.mask.shape), case.complete_tree.mask & ~out.mask)


def test_removal_is_local():
    for seed in range(5):
        case = generate_case(TreeSpec(seed=seed))
        _, recs = corrupt(case.complete_tree, 2, seed=seed)
        for r in recs:
            d, _, _ = polyline_projection(r.removed, r.polyline)
            assert d.max() <= r.capsule_radius * BreakParams().inflation + 1e-9


def test_single_break_adds_one_component_when_isolated():
    params = BreakParams()
    checked = 0
    for seed in range(6):
        vol = generate_case(TreeSpec(seed=seed)).complete_tree
        _, g = skeletonize_graph(vol)
        if cycle_rank(g, 1) != 0:
            continue
        rng = np.random.default_rng(seed)
        for b in select_breakable_branches(g, 8):
            try:
                out, rec = apply_break(vol, g, b, rng, params)
            except BranchNotBreakable:
                continue
            if not capsule_isolated(g, b, rec, params):
                continue
            assert count_components(out) == 2
            checked += 1
    assert checked > 10
