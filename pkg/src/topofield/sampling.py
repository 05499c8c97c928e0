"""Training queries for repair, labeling and segment reconstruction, and weak repair samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud import make_normalizer
from .topobreak import BranchNotBreakable, BreakParams, BreakRecord, corrupt
from .voxel import VoxelVolume, as_mask, mask_to_coords

TASKS = ("repair", "label", "segment")


@dataclass
class QueryBatch:
    coords: np.ndarray  # (Q, 3) normalized
    task: str
    targets: np.ndarray  # occupancy (repair) or class id >= 1 (label, segment)
    provenance: np.ndarray  # per-query tag
    voxels: np.ndarray  # (Q, 3) containing voxel, xyz

    def __len__(self):
        return len(self.targets)


@dataclass
class WeakSample:
    input_tree: VoxelVolume
    target_tree: VoxelVolume
    synthetic_record: BreakRecord


def _dims(mask):
    nz, ny, nx = mask.shape
    return np.array([nx, ny, nz])


def _lookup(mask_or_labels: np.ndarray, vox: np.ndarray) -> np.ndarray:
    return mask_or_labels[vox[:, 2], vox[:, 1], vox[:, 0]]


def sample_capsule(a, b, radius: float, n: int, rng: np.random.Generator, dims) -> np.ndarray:
    """``n`` continuous points uniform in the capsule a-b of ``radius`` (voxel units), clipped to the grid.

    The grid spans [-0.5, dims - 0.5] since voxel centres sit at integer coordinates.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    lo = np.maximum(np.minimum(a, b) - radius, -0.5)
    hi = np.minimum(np.maximum(a, b) + radius, np.asarray(dims, float) - 0.5)
    ab = b - a
    denom = float(ab @ ab)
    out = []
    have = 0
    while have < n:
        pts = rng.uniform(lo, hi, size=(max(2 * (n - have), 64), 3))
        t = np.zeros(len(pts)) if denom == 0 else np.clip((pts - a) @ ab / denom, 0, 1)
        d2 = ((pts - (a + t[:, None] * ab)) ** 2).sum(1)
        keep = pts[d2 <= radius * radius]
        out.append(keep[: n - have])
        have += len(out[-1])
    return np.concatenate(out)[:n] if n else np.zeros((0, 3))


def containing_voxel(pts: np.ndarray, dims) -> np.ndarray:
    return np.clip(np.floor(pts + 0.5), 0, np.asarray(dims) - 1).astype(np.int64)


def sample_repair_queries(complete, corrupted, records: list[BreakRecord], Q_r: int, p: float = 0.8,
                          seed: int = 0, capsule_scale: float = 6.0) -> QueryBatch:
    """Near-break capsule queries plus uniform background queries; targets from ``complete``."""
    if not records:
        raise ValueError("no disconnection available")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    target = as_mask(complete)
    bg = ~as_mask(corrupted)
    dims = _dims(target)
    rec = records[int(rng.integers(len(records)))]
    n_near = int(np.floor(Q_r * p))
    near = sample_capsule(rec.endpoint_a, rec.endpoint_b, capsule_scale * rec.branch_radius, n_near, rng, dims)
    bg_vox = mask_to_coords(bg)
    far = bg_vox[rng.integers(0, len(bg_vox), Q_r - n_near)].astype(float)
    pts = np.concatenate([near, far])
    vox = containing_voxel(pts, dims)
    norm = make_normalizer(dims)
    tags = np.array(["near_break"] * n_near + ["background"] * (Q_r - n_near))
    return QueryBatch(norm.normalize(pts), "repair", _lookup(target, vox).astype(np.uint8), tags, vox)


def _region_queries(region: np.ndarray, labels: np.ndarray, n: int, seed: int, task: str, tag: str) -> QueryBatch:
    vox = mask_to_coords(region)
    if len(vox) == 0:
        raise ValueError(f"empty region for {task} queries")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(vox), n) if len(vox) < n else rng.choice(len(vox), n, replace=False)
    sel = vox[idx]
    norm = make_normalizer(_dims(region))
    return QueryBatch(norm.normalize(sel), task, _lookup(labels, sel).astype(np.int64),
                      np.array([tag] * n), sel)


def sample_label_queries(corrupted, tree_labels, Q_l: int, seed: int = 0) -> QueryBatch:
    labels = tree_labels.data if isinstance(tree_labels, VoxelVolume) else np.asarray(tree_labels)
    return _region_queries(as_mask(corrupted), labels, Q_l, seed, "label", "foreground")


def sample_segment_queries(lung_mask, segment_labels, Q_s: int, seed: int = 0) -> QueryBatch:
    labels = segment_labels.data if isinstance(segment_labels, VoxelVolume) else np.asarray(segment_labels)
    return _region_queries(as_mask(lung_mask), labels, Q_s, seed, "segment", "lung")


def make_weak_sample(corrupted, min_nodes: int = 8, seed: int = 0,
                     params: BreakParams = BreakParams()) -> WeakSample:
    """One extra break on an already corrupted tree; the pre-break tree becomes the target."""
    broken, records = corrupt(corrupted, 1, min_nodes=min_nodes, seed=seed, params=params)
    if not records:
        raise BranchNotBreakable("no breakable branch")
    target = VoxelVolume.from_mask(as_mask(corrupted))
    return WeakSample(broken, target, records[0])
