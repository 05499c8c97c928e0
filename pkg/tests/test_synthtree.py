import json

import numpy as np
import pytest

from topofield.skeleton import skeletonize_graph
from topofield.synthtree import (
    SpecDoesNotFit,
    TreeSpec,
    generate_case,
    generate_split,
    load_case,
    save_case,
)
from topofield.voxel import count_components


def check_case(case):
    spec = case.spec
    assert np.array_equal(case.complete_tree.mask, case.tree_labels.data > 0)
    assert np.array_equal(case.segment_labels.data > 0, case.lung_mask.mask)
    assert case.segment_labels.data.max() <= spec.segment_count
    assert case.tree_labels.data.max() <= spec.class_count
    assert count_components(case.complete_tree) == 1


def test_depth_zero_single_capsule():
    case = generate_case(TreeSpec(depth=0, seed=3))
    assert len(case.branches) == 1
    assert count_components(case.complete_tree) == 1
    labels = case.tree_labels.data
    assert set(np.unique(labels[labels > 0]).tolist()) == {case.spec.class_count}


def test_deterministic():
    a = generate_case(TreeSpec(seed=5))
    b = generate_case(TreeSpec(seed=5))
    for attr in ("complete_tree", "tree_labels", "lung_mask", "segment_labels"):
        assert getattr(a, attr).data.tobytes() == getattr(b, attr).data.tobytes()


def test_depth3_binary_branch_count():
    spec = TreeSpec(dims=(96, 96, 96), depth=3, children_per_node=2, branch_length_range=(12, 16), seed=2)
    case = generate_case(spec)
    assert len(case.branches) == 15
    _, g = skeletonize_graph(case.complete_tree)
    # 8 leaves plus the root end; junction clusters may merge or split a short edge
    assert sum(n.kind == "endpoint" for n in g.nodes) in (8, 9)
    assert abs(len(g.edges) - 15) <= 3


def test_spec_does_not_fit():
    with pytest.raises(SpecDoesNotFit, match="spec does not fit"):
        generate_case(TreeSpec(dims=(12, 12, 12), trunk_radius=5))


def test_spec_validation():
    with pytest.raises(ValueError):
        TreeSpec(trunk_radius=0.5)
    with pytest.raises(ValueError):
        TreeSpec(radius_decay=1.5)
    with pytest.raises(ValueError):
        TreeSpec(class_count=1)


def test_split():
    one = generate_split(TreeSpec(), 1, seed=4)
    assert len(one) == 1
    assert one[0].complete_tree == generate_case(TreeSpec(seed=4)).complete_tree
    a = generate_split(TreeSpec(), 5, seed=0)
    b = generate_split(TreeSpec(), 5, seed=0)
    assert all(x.tree_labels == y.tree_labels for x, y in zip(a, b))
    for case in a:
        check_case(case)
    with pytest.raises(ValueError):
        generate_split(TreeSpec(), 0, seed=0)


def test_invariant_sweep_and_radius_monotone():
    for seed in range(10):
        case = generate_case(TreeSpec(seed=seed))
        check_case(case)
        for br in case.branches:
            if br.parent >= 0:
                assert br.radius <= case.branches[br.parent].radius


def test_voronoi_tie_break_smallest_class():
    case = generate_case(TreeSpec(seed=1))
    from scipy import ndimage as ndi

    labels = case.tree_labels.data
    lung = case.lung_mask.mask
    best = np.full(labels.shape, np.inf)
    owner = np.zeros(labels.shape, np.int64)
    for c in range(case.spec.class_count - 1, 0, -1):  # reverse order, <= gives ties to smaller
        if not (labels == c).any():
            continue
        d = ndi.distance_transform_edt(labels != c)
        upd = d <= best
        best[upd] = d[upd]
        owner[upd] = c
    seg = np.where(lung, (owner - 1) % case.spec.segment_count + 1, 0)
    assert np.array_equal(seg, case.segment_labels.data)


def test_save_load(tmp_path):
    case = generate_case(TreeSpec(seed=9))
    save_case(case, tmp_path / "c")
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["seed"] == 9
    back = load_case(tmp_path / "c")
    assert back.complete_tree == case.complete_tree and back.segment_labels == case.segment_labels
