import numpy as np
import pytest

from topofield.metrics import weak_accuracy_monte_carlo
from topofield.pointcloud import make_normalizer
from topofield.sampling import (
    make_weak_sample,
    sample_capsule,
    sample_label_queries,
    sample_repair_queries,
    sample_segment_queries,
)
from topofield.synthtree import TreeSpec, generate_case
from topofield.topobreak import BranchNotBreakable, corrupt, removed_mask
from topofield.voxel import VoxelVolume


@pytest.fixture(scope="module")
def broken():
    case = generate_case(TreeSpec(seed=3))
    cor, recs = corrupt(case.complete_tree, 2, seed=3)
    return case, cor, recs


def _lookup(mask, vox):
    return mask[vox[:, 2], vox[:, 1], vox[:, 0]]


def test_repair_queries_p_limit(broken):
    case, cor, recs = broken
    b = sample_repair_queries(case.complete_tree, cor, recs, 1000, p=0.999, seed=0)
    near = b.provenance == "near_break"
    assert near.sum() >= 999
    norm = make_normalizer(case.complete_tree.dims)
    pts = norm.denormalize(b.coords[near])
    ok = False
    for r in recs:
        a, c = np.array(r.endpoint_a, float), np.array(r.endpoint_b, float)
        ab = c - a
        t = np.clip((pts - a) @ ab / (ab @ ab), 0, 1)
        d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
        ok |= bool((d <= 6 * r.branch_radius + 1e-9).all())
    assert ok


def test_repair_targets_are_voxel_lookups(broken):
    case, cor, recs = broken
    b = sample_repair_queries(case.complete_tree, cor, recs, 2000, p=0.8, seed=1)
    assert np.array_equal(b.targets, _lookup(case.complete_tree.mask, b.voxels).astype(np.uint8))
    bg = b.provenance == "background"
    assert not _lookup(cor.mask, b.voxels[bg]).any()
    assert set(np.unique(b.targets)) == {0, 1}
    gap = removed_mask(recs, cor.mask.shape)
    in_gap = _lookup(gap, b.voxels)
    assert (b.targets[in_gap] == 1).all()
    assert np.abs(b.coords).max() <= 1


def test_repair_errors_and_determinism(broken):
    case, cor, recs = broken
    with pytest.raises(ValueError, match="no disconnection available"):
        sample_repair_queries(case.complete_tree, cor, [], 10)
    a = sample_repair_queries(case.complete_tree, cor, recs, 300, seed=7)
    b = sample_repair_queries(case.complete_tree, cor, recs, 300, seed=7)
    assert a.coords.tobytes() == b.coords.tobytes()


def test_capsule_sampler_uniform_inside():
    rng = np.random.default_rng(0)
    pts = sample_capsule((10, 10, 10), (20, 10, 10), 3.0, 5000, rng, (40, 40, 40))
    assert len(pts) == 5000
    t = np.clip((pts[:, 0] - 10) / 10, 0, 1)
    d = np.linalg.norm(pts - np.stack([10 + 10 * t, np.full(len(t), 10.0), np.full(len(t), 10.0)], 1), axis=1)
    assert d.max() <= 3.0
    # cylinder part holds pi r^2 L / (pi r^2 L + 4/3 pi r^3) of the volume
    frac = np.mean((pts[:, 0] > 10) & (pts[:, 0] < 20))
    want = (np.pi * 9 * 10) / (np.pi * 9 * 10 + 4 / 3 * np.pi * 27)
    assert abs(frac - want) < 3 * np.sqrt(want * (1 - want) / 5000)


def _histogram_check(batch, labels, region):
    vals = labels[region]
    classes = np.unique(vals)
    freq = np.array([(vals == c).mean() for c in classes])
    got = np.array([(batch.targets == c).mean() for c in classes])
    sigma = np.sqrt(freq * (1 - freq) / len(batch))
    assert (np.abs(got - freq) <= 3 * sigma + 1e-12).all()


def test_label_queries(broken):
    case, cor, _ = broken
    b = sample_label_queries(cor, case.tree_labels, 500, seed=0)
    assert (b.targets > 0).all() and _lookup(cor.mask, b.voxels).all()
    assert np.array_equal(b.targets, sample_label_queries(cor, case.tree_labels, 500, seed=0).targets)
    big = sample_label_queries(cor, case.tree_labels, 100_000, seed=1)
    _histogram_check(big, case.tree_labels.data, cor.mask)


def test_segment_queries(broken):
    case, _, _ = broken
    b = sample_segment_queries(case.lung_mask, case.segment_labels, 500, seed=0)
    assert (b.targets > 0).all()
    assert np.array_equal(b.targets, sample_segment_queries(case.lung_mask, case.segment_labels, 500, seed=0).targets)
    big = sample_segment_queries(case.lung_mask, case.segment_labels, 100_000, seed=2)
    _histogram_check(big, case.segment_labels.data, case.lung_mask.mask)


def test_weak_sample(broken):
    case, cor, _ = broken
    ws = make_weak_sample(cor, seed=0)
    assert not (ws.input_tree.mask & ~ws.target_tree.mask).any()
    diff = ws.target_tree.mask & ~ws.input_tree.mask
    assert np.array_equal(diff, removed_mask([ws.synthetic_record], diff.shape))
    tiny = np.zeros((5, 5, 5), bool)
    tiny[2, 2, 1:4] = True
    with pytest.raises(BranchNotBreakable):
        make_weak_sample(VoxelVolume.from_mask(tiny))


def test_weak_disagreement_tracks_estimate():
    for seed in range(4):
        case = generate_case(TreeSpec(seed=20 + seed))
        cor, recs = corrupt(case.complete_tree, 2, seed=seed)
        ws = make_weak_sample(cor, seed=seed)
        b = sample_repair_queries(ws.target_tree, ws.input_tree, [ws.synthetic_record], 4000, seed=seed)
        truth = _lookup(case.complete_tree.mask, b.voxels).astype(np.uint8)
        disagree = np.mean(truth != b.targets)
        est = weak_accuracy_monte_carlo(case.complete_tree, cor, 1000, seed=0).analytic
        assert disagree <= 1 - est + 0.02
