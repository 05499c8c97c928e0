import json

import numpy as np
import pytest

from oracles import components_as_sets, confusion_micro_dice, flood_fill_labels, naive_cf1, naive_dmf1, naive_gdice
from topofield.metrics import (
    ComponentSet,
    MetricsReport,
    containment_f1,
    dice_matching_f1,
    global_dice,
    gt_components,
    micro_dice,
    ncc_repaired,
    weak_accuracy_monte_carlo,
    weak_supervision_accuracy,
)
from topofield.synthtree import TreeSpec, generate_case
from topofield.topobreak import corrupt, removed_mask
from topofield.voxel import VoxelVolume

SHAPE = (4, 4, 12)


def line_set(xs, y=0, z=0):
    return np.array([[x, y, z] for x in xs])


def cs(*sets, shape=SHAPE):
    return ComponentSet.from_sets(list(sets), shape)


def test_component_set_validation():
    with pytest.raises(ValueError):
        cs(line_set([0, 1]), line_set([1, 2]))
    with pytest.raises(ValueError):
        cs(np.zeros((0, 3)))


def test_cf1_examples():
    a = line_set(range(10))
    assert tuple(containment_f1(cs(a), cs(a))) == (1.0, 1.0, 1.0)
    assert containment_f1(cs(a), cs()).f1 == 0.0
    assert containment_f1(cs(), cs()).f1 == 1.0
    # 10-voxel pred sharing 6 voxels: both ratios 0.6
    p6 = np.concatenate([line_set(range(4, 10)), line_set(range(4, 8), y=1)])
    assert tuple(containment_f1(cs(a), cs(p6))) == (1.0, 1.0, 1.0)
    p5 = np.concatenate([line_set(range(5, 10)), line_set(range(5, 10), y=1)])
    assert containment_f1(cs(a), cs(p5)).f1 == 0.0


def test_dmf1_examples():
    a = line_set(range(8))
    assert tuple(dice_matching_f1(cs(a), cs(a))) == (1.0, 1.0, 1.0)
    b = np.concatenate([line_set(range(4, 8)), line_set(range(4, 8), y=1)])
    assert dice_matching_f1(cs(a), cs(b)).f1 == 0.0  # Dice exactly 0.5
    g = line_set(range(10))
    h1 = np.concatenate([line_set(range(0, 2)), line_set(range(0, 3), y=2)])  # |h1|=5, overlap 2 -> 4/15
    h2 = np.concatenate([line_set(range(6, 8)), line_set(range(6, 9), y=2)])
    res = dice_matching_f1(cs(g), cs(h1, h2))
    assert res.recall == 0.0


def test_global_dice_examples():
    a = line_set(range(4))
    assert global_dice(cs(a), cs(a)) == 1.0
    assert global_dice(cs(a), cs(line_set(range(6, 10)))) == 0.0
    assert global_dice(cs(a), cs(line_set(range(2, 6)))) == 0.5
    assert global_dice(cs(), cs()) == 1.0


def test_cf1_not_bounded_by_dmf1():
    # Dice 8/14 > 0.5 matches, but only 4 of 10 gt voxels are covered
    g = line_set(range(10))
    p = line_set(range(4))
    assert dice_matching_f1(cs(g), cs(p)).f1 == 1.0
    assert containment_f1(cs(g), cs(p)).f1 < dice_matching_f1(cs(g), cs(p)).f1


def _random_sets(rng, shape):
    gm = rng.random(shape) < rng.uniform(0.05, 0.4)
    pm = rng.random(shape) < rng.uniform(0.05, 0.4)
    if rng.random() < 0.3:
        pm = gm ^ (rng.random(shape) < 0.1)
    return gm, pm


def test_metrics_match_naive_oracles():
    rng = np.random.default_rng(11)
    for _ in range(150):
        shape = tuple(rng.integers(2, 9, 3))
        gm, pm = _random_sets(rng, shape)
        G, P = components_as_sets(gm), components_as_sets(pm)
        g, p = ComponentSet.from_mask(gm), ComponentSet.from_mask(pm)
        assert np.allclose(tuple(containment_f1(g, p)), naive_cf1(G, P), atol=1e-12)
        assert np.allclose(tuple(dice_matching_f1(g, p)), naive_dmf1(G, P), atol=1e-12)
        assert abs(global_dice(g, p) - naive_gdice(G, P)) < 1e-12
        assert global_dice(g, p) == global_dice(p, g)
        # a pairwise Dice above 0.5 forces both overlap ratios above 1/3
        for gi in G:
            for pj in P:
                if 2 * len(gi & pj) / (len(gi) + len(pj)) > 0.5:
                    assert len(gi & pj) / len(gi) > 1 / 3 and len(gi & pj) / len(pj) > 1 / 3
        corr = rng.random(shape) < 0.2
        assert ncc_repaired(VoxelVolume.from_mask(corr), p) == flood_fill_labels(corr | pm)[1]


def test_gt_components():
    case = generate_case(TreeSpec(seed=2))
    assert gt_components(case.complete_tree, case.complete_tree).count == 0
    out, recs = corrupt(case.complete_tree, 1, seed=0)
    g = gt_components(case.complete_tree, out)
    rm = removed_mask(recs, out.mask.shape)
    assert np.array_equal(g.union, rm)
    assert g.count == flood_fill_labels(rm)[1]
    out3, _ = corrupt(case.complete_tree, 3, seed=0)
    diff = case.complete_tree.mask & ~out3.mask
    assert gt_components(case.complete_tree, out3).count == flood_fill_labels(diff)[1]
    with pytest.raises(ValueError):
        gt_components(out3, case.complete_tree)


def test_repair_perfect_and_empty():
    case = generate_case(TreeSpec(seed=6))
    out, _ = corrupt(case.complete_tree, 2, seed=3)
    gt = gt_components(case.complete_tree, out)
    perfect = ComponentSet.from_mask(gt.union)
    assert containment_f1(gt, perfect).f1 == dice_matching_f1(gt, perfect).f1 == global_dice(gt, perfect) == 1.0
    assert ncc_repaired(out, perfect) == 1
    empty = ComponentSet.from_mask(np.zeros(out.mask.shape, bool))
    assert ncc_repaired(out, empty) == flood_fill_labels(out.mask)[1]


def test_micro_dice():
    gt = np.array([1, 1, 2, 2], np.uint8).reshape(1, 1, 4)
    pred = np.array([1, 2, 2, 2], np.uint8).reshape(1, 1, 4)
    mask = np.ones(gt.shape, bool)
    assert micro_dice(gt, gt, mask)[0] == 1.0
    assert micro_dice(pred, gt, mask)[0] == pytest.approx(0.75)
    rng = np.random.default_rng(0)
    for _ in range(50):
        g = rng.integers(0, 5, (4, 5, 6)).astype(np.uint8)
        p = rng.integers(0, 5, (4, 5, 6)).astype(np.uint8)
        m = rng.random(g.shape) < 0.6
        micro, per = micro_dice(p, g, m)
        assert micro == pytest.approx(confusion_micro_dice(p[m], g[m], 5), abs=1e-12)
        coords = np.argwhere(m)[:, ::-1]
        assert micro_dice(p, g, coords)[0] == micro


def test_weak_accuracy_formula():
    assert weak_supervision_accuracy(1000, 0.0, 100000) == 1.0
    assert weak_supervision_accuracy(1000, 0.01, 100000) == pytest.approx(0.9999)
    with pytest.raises(ValueError):
        weak_supervision_accuracy(1000, 0.5, 100)
    with pytest.raises(ValueError):
        weak_supervision_accuracy(10, 0.1, 0)


def test_weak_accuracy_monte_carlo_small():
    case = generate_case(TreeSpec(seed=1))
    out, _ = corrupt(case.complete_tree, 2, seed=1)
    est = weak_accuracy_monte_carlo(case.complete_tree, out, 200_000, seed=0)
    assert abs(est.analytic - est.empirical) < 0.01


def test_report_json(tmp_path):
    rep = MetricsReport(1.0, 1.0, 1.0, 1, 0.9, 0.8, 0.7, {"tree": {1: 0.9}}, {"n_gt": 2})
    rep.save(tmp_path / "m.json")
    js = json.loads((tmp_path / "m.json").read_text())
    assert list(js) == ["cf1", "dmf1", "gdice", "ncc", "dice_tree", "dice_skeleton", "dice_lung", "per_class", "counts"]
    assert js["per_class"]["tree"] == {"1": 0.9}
