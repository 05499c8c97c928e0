"""Dense inference over a whole volume and case-level evaluation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..metrics import (
    ComponentSet,
    MetricsReport,
    containment_f1,
    dice_matching_f1,
    global_dice,
    gt_components,
    micro_dice,
    ncc_repaired,
)
from ..neural.field import TopoFieldModel, TriPlaneField
from ..neural.inputs import prepare_inputs
from ..pointcloud import make_normalizer
from ..skeleton import thin_3d
from ..synthtree import SyntheticCase
from ..voxel import VoxelVolume, as_mask, count_components, mask_to_coords

REPAIR_THRESHOLD = 0.5
# Queries are evaluated in blocks of this many rows so that results never depend on chunk size.
BLOCK = 4096


@dataclass
class InferenceResult:
    repaired_tree: VoxelVolume
    repair_mask: VoxelVolume
    labeled_tree: VoxelVolume
    segment_volume: VoxelVolume
    timings: dict = field(default_factory=dict)
    repair_probs: np.ndarray | None = None  # per background voxel, scan order


def _blocks(model: TopoFieldModel, fld: TriPlaneField, q: np.ndarray, fn, chunk_size: int):
    """Apply ``fn(model, h)`` over fixed-size row blocks, grouped ``chunk_size`` rows at a time."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    dtype = fld.planes.dtype
    outs = []
    for c0 in range(0, len(q), chunk_size):
        chunk = q[c0:c0 + chunk_size]
        for b0 in range(0, len(chunk), BLOCK):
            blk = torch.as_tensor(chunk[b0:b0 + BLOCK], dtype=dtype)
            n = len(blk)
            if n < BLOCK:
                blk = torch.cat([blk, blk.new_zeros(BLOCK - n, 3)])
            outs.append(fn(model, model.embed(fld, blk))[:n].numpy())
    return np.concatenate(outs) if outs else np.zeros((0,))


def infer_full(model: TopoFieldModel, corrupted, lung_mask, n_surface: int, n_skeleton: int,
               seed: int = 0, chunk_size: int = 65536) -> InferenceResult:
    model.eval()
    mcfg = model.cfg
    obs = as_mask(corrupted)
    lung = as_mask(lung_mask)
    nz, ny, nx = obs.shape
    norm = make_normalizer((nx, ny, nz))
    timings = {}
    with torch.no_grad():
        t0 = time.perf_counter()
        inputs = prepare_inputs(corrupted, n_surface, n_skeleton, mcfg.K, mcfg.r, seed=seed)
        timings["points"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        fld = model.build_field(inputs)
        timings["field"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        bg = mask_to_coords(~obs)
        probs = _blocks(model, fld, norm.normalize(bg), lambda m, h: m.repair_prob(h), chunk_size)
        hit = bg[probs > REPAIR_THRESHOLD]
        repair = np.zeros(obs.shape, bool)
        repair[hit[:, 2], hit[:, 1], hit[:, 0]] = True
        repaired = obs | repair
        timings["repair"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        fg = mask_to_coords(repaired)
        cls = _blocks(model, fld, norm.normalize(fg), lambda m, h: m.label_logits(h).argmax(1), chunk_size)
        labeled = np.zeros(obs.shape, np.uint8)
        labeled[fg[:, 2], fg[:, 1], fg[:, 0]] = cls + 1
        timings["label"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        lv = mask_to_coords(lung)
        seg_cls = _blocks(model, fld, norm.normalize(lv), lambda m, h: m.segment_logits(h).argmax(1), chunk_size)
        seg = np.zeros(obs.shape, np.uint8)
        seg[lv[:, 2], lv[:, 1], lv[:, 0]] = seg_cls + 1
        timings["segment"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())
    return InferenceResult(
        repaired_tree=VoxelVolume.from_mask(repaired),
        repair_mask=VoxelVolume.from_mask(repair),
        labeled_tree=VoxelVolume(labeled, class_count=mcfg.n_label + 1),
        segment_volume=VoxelVolume(seg, class_count=mcfg.n_segment + 1),
        timings=timings,
        repair_probs=probs,
    )


def evaluate_case(result: InferenceResult, case: SyntheticCase, corrupted) -> MetricsReport:
    """Repair scored on the removed voxels, labels on observed and skeleton voxels, segments on the lung."""
    gt = gt_components(case.complete_tree, corrupted)
    pred = ComponentSet.from_mask(as_mask(result.repair_mask) & ~as_mask(corrupted))
    cf = containment_f1(gt, pred)
    dm = dice_matching_f1(gt, pred)
    gd = global_dice(gt, pred)
    ncc = ncc_repaired(corrupted, pred)
    dice_tree, pc_tree = micro_dice(result.labeled_tree, case.tree_labels, as_mask(corrupted))
    skel = as_mask(thin_3d(case.complete_tree))
    dice_skel, pc_skel = micro_dice(result.labeled_tree, case.tree_labels, skel)
    dice_lung, pc_lung = micro_dice(result.segment_volume, case.segment_labels, as_mask(case.lung_mask))
    counts = {
        "n_gt": gt.count,
        "n_pred": pred.count,
        "cf1_precision": cf.precision,
        "cf1_recall": cf.recall,
        "dmf1_precision": dm.precision,
        "dmf1_recall": dm.recall,
        "ncc_corrupted": count_components(corrupted, 26),
    }
    return MetricsReport(cf.f1, dm.f1, gd, ncc, dice_tree, dice_skel, dice_lung,
                         {"tree": pc_tree, "skeleton": pc_skel, "lung": pc_lung}, counts)
