"""Procedural labelled tubular trees with lung-region masks and segment partitions."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .voxel import VoxelVolume, read_volume, write_volume


class SpecDoesNotFit(ValueError):
    pass


@dataclass
class TreeSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    depth: int = 2
    children_per_node: int = 3
    trunk_radius: float = 3.0
    radius_decay: float = 0.75
    branch_length_range: tuple[float, float] = (14.0, 20.0)
    bend_jitter: float = 0.25
    class_count: int = 7
    segment_count: int | None = None
    seed: int = 0
    split_angle: float = 0.75

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.branch_length_range = tuple(float(v) for v in self.branch_length_range)
        if self.segment_count is None:
            self.segment_count = max(1, self.class_count - 1)
        if self.depth < 0 or self.children_per_node < 1:
            raise ValueError("depth must be >= 0 and children_per_node >= 1")
        if self.trunk_radius < 1:
            raise ValueError("trunk_radius must be >= 1")
        if not 0 < self.radius_decay <= 1:
            raise ValueError("radius_decay must be in (0, 1]")
        if self.class_count < 2 or self.segment_count < 1:
            raise ValueError("class_count must be >= 2 and segment_count >= 1")
        lo, hi = self.branch_length_range
        if not 0 < lo <= hi:
            raise ValueError("branch_length_range must satisfy 0 < min <= max")


@dataclass
class BranchSpec:
    start: np.ndarray
    end: np.ndarray
    radius: float
    depth: int
    parent: int
    tree_class: int


@dataclass
class SyntheticCase:
    complete_tree: VoxelVolume
    tree_labels: VoxelVolume
    lung_mask: VoxelVolume
    segment_labels: VoxelVolume
    spec: TreeSpec
    branches: list[BranchSpec] = field(default_factory=list)


def _orthonormal(d):
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, a)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _fits(p, r, dims):
    lo = r + 1.0
    return all(lo <= p[i] <= dims[i] - 1 - lo for i in range(3))


def _grow(spec: TreeSpec, rng: np.random.Generator) -> list[BranchSpec]:
    dims = spec.dims
    lo, hi = spec.branch_length_range
    branches: list[BranchSpec] = []
    r0 = spec.trunk_radius
    start = np.array([(dims[0] - 1) / 2, (dims[1] - 1) / 2, r0 + 2.0])
    stack = [(start, np.array([0.0, 0.0, 1.0]), r0, 0, -1, spec.class_count)]
    next_class = 0
    while stack:
        p0, d, r, depth, parent, cls = stack.pop(0)
        length = rng.uniform(lo, hi)
        if depth == 0:
            length *= 1.25
        # shorten until the capsule fits; fail only when even the minimum does not
        while True:
            p1 = p0 + length * d
            if _fits(p1, r, dims):
                break
            length -= 1.0
            if length < lo * 0.5:
                raise SpecDoesNotFit("spec does not fit")
        if not _fits(p0, r, dims):
            raise SpecDoesNotFit("spec does not fit")
        idx = len(branches)
        branches.append(BranchSpec(p0, p1, float(r), depth, parent, cls))
        if depth >= spec.depth:
            continue
        u, v = _orthonormal(d)
        n = spec.children_per_node
        # near-fixed phase so a class keeps its direction from tree to tree
        phase = rng.normal(0, spec.bend_jitter)
        for k in range(n):
            az = phase + 2 * np.pi * k / n + rng.normal(0, spec.bend_jitter)
            polar = spec.split_angle + rng.normal(0, spec.bend_jitter)
            if n == 1:
                polar = rng.normal(0, spec.bend_jitter)
            cd = np.cos(polar) * d + np.sin(polar) * (np.cos(az) * u + np.sin(az) * v)
            cd /= np.linalg.norm(cd)
            if depth == 0:
                child_cls = next_class % (spec.class_count - 1) + 1
                next_class += 1
            else:
                child_cls = cls
            stack.append((p1, cd, r * spec.radius_decay, depth + 1, idx, child_cls))
    return branches


def capsule_mask(shape_zyx, a, b, radius) -> np.ndarray:
    """Voxels (centres at integer xyz) within ``radius`` of segment a-b."""
    nz, ny, nx = shape_zyx
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    lo = np.maximum(np.floor(np.minimum(a, b) - radius), 0).astype(int)
    hi = np.minimum(np.ceil(np.maximum(a, b) + radius), [nx - 1, ny - 1, nz - 1]).astype(int)
    out = np.zeros(shape_zyx, bool)
    if (hi < lo).any():
        return out
    zz, yy, xx = np.meshgrid(
        np.arange(lo[2], hi[2] + 1), np.arange(lo[1], hi[1] + 1), np.arange(lo[0], hi[0] + 1),
        indexing="ij",
    )
    pts = np.stack([xx, yy, zz], axis=-1).astype(float)
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(pts.shape[:-1]) if denom == 0 else np.clip(((pts - a) @ ab) / denom, 0, 1)
    closest = a + t[..., None] * ab
    inside = ((pts - closest) ** 2).sum(-1) <= radius * radius
    out[lo[2]:hi[2] + 1, lo[1]:hi[1] + 1, lo[0]:hi[0] + 1] = inside
    return out


def generate_case(spec: TreeSpec) -> SyntheticCase:
    rng = np.random.default_rng(spec.seed)
    branches = _grow(spec, rng)
    nx, ny, nz = spec.dims
    shape = (nz, ny, nx)
    labels = np.zeros(shape, np.uint8)
    # parents painted first so junction voxels take the child's class
    for br in sorted(branches, key=lambda b: b.depth):
        labels[capsule_mask(shape, br.start, br.end, br.radius)] = br.tree_class
    tree = labels > 0

    peripheral = (labels > 0) & (labels < spec.class_count)
    if peripheral.any():
        lung = ndi.distance_transform_edt(~peripheral) <= 3.0 * spec.trunk_radius
        segments = _voronoi_segments(labels, lung, spec)
    else:
        lung = np.zeros(shape, bool)
        segments = np.zeros(shape, np.uint8)

    return SyntheticCase(
        complete_tree=VoxelVolume.from_mask(tree),
        tree_labels=VoxelVolume(labels, class_count=spec.class_count + 1),
        lung_mask=VoxelVolume.from_mask(lung),
        segment_labels=VoxelVolume(segments, class_count=spec.segment_count + 1),
        spec=spec,
        branches=branches,
    )


def _voronoi_segments(labels, lung, spec: TreeSpec) -> np.ndarray:
    """Nearest-peripheral-voxel partition of the lung; ties go to the smallest class."""
    best = np.full(labels.shape, np.inf)
    out = np.zeros(labels.shape, np.uint8)
    for c in range(1, spec.class_count):
        seeds = labels == c
        if not seeds.any():
            continue
        d = ndi.distance_transform_edt(~seeds)
        closer = d < best
        best[closer] = d[closer]
        out[closer] = c
    # peripheral class c maps to segment ((c - 1) mod segment_count) + 1
    seg = np.where(out > 0, (out.astype(np.int64) - 1) % spec.segment_count + 1, 0).astype(np.uint8)
    seg[~lung] = 0
    return seg


def generate_split(template: TreeSpec, n_cases: int, seed: int) -> list[SyntheticCase]:
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    return [generate_case(replace(template, seed=seed + i)) for i in range(n_cases)]


_CASE_FILES = {
    "complete_tree": "complete_tree.vvol",
    "tree_labels": "tree_labels.vvol",
    "lung_mask": "lung_mask.vvol",
    "segment_labels": "segment_labels.vvol",
}


def save_case(case: SyntheticCase, directory, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for attr, name in _CASE_FILES.items():
        write_volume(getattr(case, attr), directory / name)
    manifest = {"spec": asdict(case.spec), "seed": case.spec.seed, "files": dict(_CASE_FILES)}
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_case(directory) -> SyntheticCase:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    spec = TreeSpec(**manifest["spec"])
    vols = {attr: read_volume(directory / name) for attr, name in manifest["files"].items()}
    return SyntheticCase(spec=spec, **vols)
