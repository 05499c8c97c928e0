"""Repair, labeling and reconstruction metrics plus the weak-supervision accuracy estimate.

Thresholds are strict (> 0.5). Empty conventions: both sides empty is a perfect score,
exactly one side empty scores 0.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .voxel import (
    VoxelVolume,
    as_mask,
    connected_components,
    coords_to_mask,
    count_components,
    mask_to_coords,
)


@dataclass
class ComponentSet:
    """Disjoint voxel components stored as a label grid (0 = none, 1..count)."""

    labels: np.ndarray
    count: int

    @classmethod
    def from_mask(cls, mask) -> ComponentSet:
        cc = connected_components(as_mask(mask), 26)
        return cls(cc.labels, cc.count)

    @classmethod
    def from_sets(cls, components, shape_zyx) -> ComponentSet:
        labels = np.zeros(shape_zyx, np.int32)
        for i, comp in enumerate(components, start=1):
            comp = np.asarray(comp, np.int64).reshape(-1, 3)
            if len(comp) == 0:
                raise ValueError("components must be nonempty")
            sel = labels[comp[:, 2], comp[:, 1], comp[:, 0]]
            if sel.any():
                raise ValueError("components must be pairwise disjoint")
            labels[comp[:, 2], comp[:, 1], comp[:, 0]] = i
        return cls(labels, len(components))

    @property
    def shape(self):
        return self.labels.shape

    @property
    def union(self) -> np.ndarray:
        return self.labels > 0

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)[1:]

    @property
    def components(self) -> list[np.ndarray]:
        return [mask_to_coords(self.labels == i) for i in range(1, self.count + 1)]

    def __len__(self):
        return self.count


@dataclass
class F1Result:
    precision: float
    recall: float
    f1: float
    n_gt: int
    n_pred: int

    def __iter__(self):
        return iter((self.precision, self.recall, self.f1))


def _f1(hit_gt: np.ndarray, hit_pred: np.ndarray) -> F1Result:
    n, m = len(hit_gt), len(hit_pred)
    if n == 0 and m == 0:
        return F1Result(1.0, 1.0, 1.0, 0, 0)
    if n == 0 or m == 0:
        return F1Result(0.0, 0.0, 0.0, n, m)
    recall = float(np.mean(hit_gt))
    precision = float(np.mean(hit_pred))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return F1Result(precision, recall, f1, n, m)


def _check_shapes(gt: ComponentSet, pred: ComponentSet):
    if gt.shape != pred.shape:
        raise ValueError(f"grid mismatch {gt.shape} vs {pred.shape}")


def containment_f1(gt: ComponentSet, pred: ComponentSet) -> F1Result:
    _check_shapes(gt, pred)
    g_in = np.bincount(gt.labels[pred.union], minlength=gt.count + 1)[1:]
    p_in = np.bincount(pred.labels[gt.union], minlength=pred.count + 1)[1:]
    # ratio > 0.5  <=>  2 * overlap > size, kept in integers
    return _f1(2 * g_in > gt.sizes, 2 * p_in > pred.sizes)


def overlap_matrix(gt: ComponentSet, pred: ComponentSet) -> np.ndarray:
    """(N, M) counts of voxels shared by G_i and P_j."""
    both = gt.union & pred.union
    flat = gt.labels[both].astype(np.int64) * (pred.count + 1) + pred.labels[both]
    inter = np.bincount(flat, minlength=(gt.count + 1) * (pred.count + 1))
    return inter.reshape(gt.count + 1, pred.count + 1)[1:, 1:]


def dice_matching_f1(gt: ComponentSet, pred: ComponentSet) -> F1Result:
    _check_shapes(gt, pred)
    inter = overlap_matrix(gt, pred)
    denom = gt.sizes[:, None] + pred.sizes[None, :]
    # Dice > 0.5  <=>  4 * |G n P| > |G| + |P|
    match = 4 * inter > denom
    return _f1(match.any(axis=1), match.any(axis=0))


def global_dice(gt: ComponentSet, pred: ComponentSet) -> float:
    _check_shapes(gt, pred)
    g, p = gt.union, pred.union
    total = int(g.sum()) + int(p.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((g & p).sum()) / total


def gt_components(complete, corrupted) -> ComponentSet:
    full, part = as_mask(complete), as_mask(corrupted)
    if full.shape != part.shape:
        raise ValueError("grid mismatch")
    if (part & ~full).any():
        raise ValueError("corrupted foreground is not contained in the complete tree")
    return ComponentSet.from_mask(full & ~part)


def ncc_repaired(corrupted, pred: ComponentSet) -> int:
    return count_components(as_mask(corrupted) | pred.union, 26)


def micro_dice(pred_labels, gt_labels, eval_mask) -> tuple[float, dict[int, float]]:
    """Pooled Dice over classes >= 1 on ``eval_mask`` (boolean grid or (n, 3) xyz coordinates).

    A voxel predicted as 0 counts only as a miss for its true class.
    """
    pred = pred_labels.data if isinstance(pred_labels, VoxelVolume) else np.asarray(pred_labels)
    gt = gt_labels.data if isinstance(gt_labels, VoxelVolume) else np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ValueError("grid mismatch")
    m = np.asarray(eval_mask)
    if m.dtype != bool or m.shape != gt.shape:
        m = coords_to_mask(m, gt.shape)
    p = pred[m].astype(np.int64)
    g = gt[m].astype(np.int64)
    classes = np.union1d(np.unique(p), np.unique(g))
    classes = classes[classes > 0]
    tp_sum = fp_sum = fn_sum = 0
    per_class: dict[int, float] = {}
    for c in classes:
        tp = int(np.sum((p == c) & (g == c)))
        fp = int(np.sum((p == c) & (g != c)))
        fn = int(np.sum((p != c) & (g == c)))
        per_class[int(c)] = 2 * tp / (2 * tp + fp + fn)
        tp_sum += tp
        fp_sum += fp
        fn_sum += fn
    denom = 2 * tp_sum + fp_sum + fn_sum
    return (1.0 if denom == 0 else 2 * tp_sum / denom), per_class


def weak_supervision_accuracy(tree_voxels: int, rho_d: float, query_space_voxels: int) -> float:
    """Expected fraction of correct weak repair targets: 1 - |T| rho_d / |Q|."""
    if query_space_voxels <= 0:
        raise ValueError("query_space_voxels must be > 0")
    if not 0.0 <= rho_d <= 1.0:
        raise ValueError("rho_d must lie in [0, 1]")
    wrong = tree_voxels * rho_d
    if wrong > query_space_voxels:
        raise ValueError("tree_voxels * rho_d exceeds the query space")
    return 1.0 - wrong / query_space_voxels


@dataclass
class WeakAccuracyEstimate:
    analytic: float
    empirical: float
    tree_voxels: int
    rho_d: float
    query_space_voxels: int
    n_queries: int


def weak_accuracy_monte_carlo(complete, corrupted, n_queries: int = 1_000_000, seed: int = 0,
                              query_space=None) -> WeakAccuracyEstimate:
    """Compare the analytic estimate with the agreement rate of uniformly drawn queries.

    The observed (corrupted) tree is the weak target and ``complete`` the truth; the
    missing voxels play the role of undetected disconnections. The query space defaults
    to every background voxel of the observed tree, the set repair inference scores.
    """
    full, part = as_mask(complete), as_mask(corrupted)
    missing = full & ~part
    space = ~part if query_space is None else as_mask(query_space)
    if (missing & ~space).any():
        raise ValueError("query space must contain every missing voxel")
    tree_voxels = int(part.sum())
    n_missing = int(missing.sum())
    rho_d = n_missing / tree_voxels if tree_voxels else 0.0
    flat = np.flatnonzero(space)
    analytic = weak_supervision_accuracy(tree_voxels, rho_d, len(flat))
    rng = np.random.default_rng(seed)
    idx = flat[rng.integers(0, len(flat), n_queries)]
    weak = part.ravel()[idx]
    truth = full.ravel()[idx]
    return WeakAccuracyEstimate(analytic, float(np.mean(weak == truth)), tree_voxels, rho_d,
                                len(flat), n_queries)


@dataclass
class MetricsReport:
    cf1: float
    dmf1: float
    gdice: float
    ncc: int
    dice_tree: float
    dice_skeleton: float
    dice_lung: float
    per_class: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["per_class"] = {k: {str(c): v for c, v in t.items()} for k, t in self.per_class.items()}
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def repair_report(complete, corrupted, repair_mask) -> tuple[F1Result, F1Result, float, int]:
    gt = gt_components(complete, corrupted)
    pred = ComponentSet.from_mask(as_mask(repair_mask) & ~as_mask(corrupted))
    return containment_f1(gt, pred), dice_matching_f1(gt, pred), global_dice(gt, pred), ncc_repaired(corrupted, pred)
