"""Skeleton-guided branch removal with position-dependent voxel retention."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .skeleton import SkeletonGraph, skeletonize_graph
from .voxel import STRUCT_26, VoxelVolume, as_mask, coords_to_mask, mask_to_coords


class BranchNotBreakable(ValueError):
    pass


@dataclass(frozen=True)
class BreakParams:
    p_edge: float = 0.35
    gamma: float = 2.0
    inflation: float = 1.25
    central_band: float = 0.1
    min_band_halfwidth: float = 1.0  # voxels of arc length; keeps the cut 26-tight
    radius_pad: float = 1.0  # skeleton voxels sit up to ~1 voxel off the tube axis
    margin: int = 2
    break_span: int = 3


@dataclass
class BreakRecord:
    branch_id: int
    endpoint_a: tuple[int, int, int]
    endpoint_b: tuple[int, int, int]
    capsule_radius: float
    branch_radius: float
    removed: np.ndarray  # (n, 3) xyz
    polyline: np.ndarray  # skeleton path between the breakpoints

    def to_json(self) -> dict:
        return {
            "branch_id": self.branch_id,
            "endpoint_a": list(self.endpoint_a),
            "endpoint_b": list(self.endpoint_b),
            "capsule_radius": self.capsule_radius,
            "branch_radius": self.branch_radius,
            "removed_count": int(len(self.removed)),
        }


def select_breakable_branches(graph: SkeletonGraph, min_nodes: int = 8) -> list[int]:
    return [i for i, b in enumerate(graph.edges) if len(b.path) > min_nodes]


def retention_probability(t, params: BreakParams = BreakParams(), band: float | None = None):
    """Keep probability at normalised segment position ``t``; zero inside the central band."""
    band = params.central_band if band is None else band
    off = np.abs(np.asarray(t, float) - 0.5)
    p = params.p_edge * (2.0 * off) ** params.gamma
    return np.where(off <= band, 0.0, p)


def chord_parameter(points, a, b) -> np.ndarray:
    """Position of each point along the chord a->b, clamped to [0, 1].

    Level sets are planes, so the always-removed central band is a flat slab that every
    path between the two stubs has to cross.
    """
    a = np.asarray(a, float)
    ab = np.asarray(b, float) - a
    denom = float(ab @ ab)
    if denom == 0:
        return np.full(len(points), 0.5)
    return np.clip((np.asarray(points, float) - a) @ ab / denom, 0.0, 1.0)


def polyline_projection(points: np.ndarray, polyline: np.ndarray):
    """Distance from each point to the polyline and the arc-length position (0..1) of the foot."""
    pts = np.asarray(points, float)
    poly = np.asarray(polyline, float)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    seg_len = np.linalg.norm(ab, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    denom = np.where(seg_len > 0, seg_len ** 2, 1.0)
    rel = pts[:, None, :] - a[None]
    u = np.clip((rel * ab[None]).sum(-1) / denom[None], 0.0, 1.0)
    foot = a[None] + u[..., None] * ab[None]
    d2 = ((pts[:, None, :] - foot) ** 2).sum(-1)
    k = np.argmin(d2, axis=1)
    rows = np.arange(len(pts))
    arc = cum[k] + u[rows, k] * seg_len[k]
    t = arc / total if total > 0 else np.full(len(pts), 0.5)
    return np.sqrt(d2[rows, k]), t, total


def _breakpoint_pairs(branch, params: BreakParams):
    """Breakpoint index pairs leaving skeleton outside the removal capsule on both sides."""
    path = branch.path.astype(float)
    n = len(path)
    reach = params.inflation * (float(np.max(branch.radius_profile)) + params.radius_pad) if n else 0.0
    head = np.linalg.norm(path - path[0], axis=1) > reach + 1.0
    tail = np.linalg.norm(path - path[-1], axis=1) > reach + 1.0
    lo, hi = params.margin, n - 1 - params.margin
    return [
        (i, j)
        for i in range(lo, hi + 1) if head[i]
        for j in range(i + params.break_span, hi + 1) if tail[j]
    ]


def apply_break(vol, graph: SkeletonGraph, branch_id: int, rng: np.random.Generator,
                params: BreakParams = BreakParams()) -> tuple[VoxelVolume, BreakRecord]:
    branch = graph.edges[branch_id]
    pairs = _breakpoint_pairs(branch, params)
    if not pairs:
        raise BranchNotBreakable("branch not breakable")
    i, j = pairs[int(rng.integers(len(pairs)))]
    poly = branch.path[i:j + 1].astype(float)
    radii = branch.radius_profile[i:j + 1]
    capsule_radius = float(np.max(radii)) + params.radius_pad
    reach = capsule_radius * params.inflation

    mask = as_mask(vol)
    nz, ny, nx = mask.shape
    lo = np.maximum(np.floor(poly.min(0) - reach), 0).astype(int)
    hi = np.minimum(np.ceil(poly.max(0) + reach), [nx - 1, ny - 1, nz - 1]).astype(int)
    sub = mask[lo[2]:hi[2] + 1, lo[1]:hi[1] + 1, lo[0]:hi[0] + 1]
    fg = mask_to_coords(sub) + lo
    dist, _, _ = polyline_projection(fg, poly)
    cand = fg[dist <= reach]
    t = chord_parameter(cand, poly[0], poly[-1])
    chord = float(np.linalg.norm(poly[-1] - poly[0]))

    band = max(params.central_band, params.min_band_halfwidth / max(chord, 1e-9))
    keep = rng.random(len(cand)) < retention_probability(t, params, band)
    removed_mask = coords_to_mask(cand[~keep], mask.shape)

    # retained candidate voxels cut off from everything outside the candidate set go too
    cand_mask = coords_to_mask(cand, mask.shape)
    rest = mask & ~removed_mask
    labels, _ = ndi.label(rest, structure=STRUCT_26)
    anchored = np.unique(labels[rest & ~cand_mask])
    stray = rest & cand_mask & ~np.isin(labels, anchored[anchored > 0])
    removed_mask |= stray

    out = mask & ~removed_mask
    record = BreakRecord(
        branch_id=branch_id,
        endpoint_a=tuple(int(v) for v in branch.path[i]),
        endpoint_b=tuple(int(v) for v in branch.path[j]),
        capsule_radius=capsule_radius,
        branch_radius=float(np.mean(radii)),
        removed=mask_to_coords(removed_mask),
        polyline=poly,
    )
    return VoxelVolume.from_mask(out), record


def corrupt(tree, n_breaks: int, min_nodes: int = 8, seed: int = 0,
            params: BreakParams = BreakParams()) -> tuple[VoxelVolume, list[BreakRecord]]:
    """Apply up to ``n_breaks`` sequential breaks, re-skeletonising after each one."""
    if n_breaks < 0:
        raise ValueError("n_breaks must be >= 0")
    rng = np.random.default_rng(seed)
    current = VoxelVolume.from_mask(as_mask(tree))
    records: list[BreakRecord] = []
    for _ in range(n_breaks):
        _, graph = skeletonize_graph(current)
        eligible = [
            b for b in select_breakable_branches(graph, min_nodes)
            if _breakpoint_pairs(graph.edges[b], params)
        ]
        if not eligible:
            break
        branch_id = eligible[int(rng.integers(len(eligible)))]
        current, record = apply_break(current, graph, branch_id, rng, params)
        records.append(record)
    return current, records


def removed_mask(records: list[BreakRecord], shape_zyx) -> np.ndarray:
    out = np.zeros(shape_zyx, bool)
    for r in records:
        out |= coords_to_mask(r.removed, shape_zyx)
    return out
