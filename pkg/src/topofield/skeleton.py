"""Topology-preserving thinning and branch-graph extraction."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _thinning as _k
from .voxel import VoxelVolume, as_mask, mask_to_coords

# Sub-iteration order as (dz, dy, dx): north, south, east, west, up, down.
DIRECTIONS = np.array(
    [(0, -1, 0), (0, 1, 0), (0, 0, 1), (0, 0, -1), (1, 0, 0), (-1, 0, 0)], dtype=np.int64
)

_NEIGHBOR_OFFSETS = [
    (dx, dy, dz)
    for dz in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dx in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


@dataclass
class Node:
    coord: tuple[int, int, int]
    kind: str  # endpoint | junction | isolated | loop
    members: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass
class Branch:
    path: np.ndarray  # (n, 3) xyz, consecutive entries 26-adjacent
    radius_profile: np.ndarray
    nodes: tuple[int, int]

    @property
    def length(self) -> int:
        return len(self.path) - 1

    @property
    def mean_radius(self) -> float:
        return float(np.mean(self.radius_profile)) if len(self.radius_profile) else 0.0


@dataclass
class SkeletonGraph:
    nodes: list[Node]
    edges: list[Branch]
    dims: tuple[int, int, int] = (0, 0, 0)

    def to_json(self) -> dict:
        return {
            "nodes": [[list(n.coord), n.kind] for n in self.nodes],
            "edges": [
                {"path": b.path.tolist(), "radius": [float(r) for r in b.radius_profile]}
                for b in self.edges
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


def thin_3d(vol) -> VoxelVolume:
    """Iterative directional boundary peeling down to a one-voxel-wide skeleton.

    A voxel is removed only if it is not an end point, deleting it leaves the local
    Euler characteristic unchanged and it is a simple point; candidates found in a
    sub-iteration are re-checked (simple, not an end point) before each sequential
    deletion. Flat objects of even thickness may shrink along their length.
    """
    mask = as_mask(vol)
    padded = np.pad(mask.astype(np.uint8), 1)
    _k.thin_padded(
        padded, DIRECTIONS, _k.ADJ26, _k.N26, _k.ADJ6, _k.N6, _k.IN18, _k.FACES,
        _k.CORNER_SHARE, _k.EDGE_SHARE, _k.FACE_SHARE,
    )
    return VoxelVolume.from_mask(padded[1:-1, 1:-1, 1:-1])


def neighbor_count_map(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask.astype(np.uint8), 1)
    return _k.neighbor_counts(padded)[1:-1, 1:-1, 1:-1]


def build_skeleton_graph(skel, dist: np.ndarray) -> SkeletonGraph:
    """Split a skeleton into nodes (voxels with != 2 neighbours) and branch chains.

    Adjacent junction voxels are merged into one node placed at the member nearest the
    cluster centroid; branch paths route through the cluster to that voxel.
    """
    mask = as_mask(skel)
    nz, ny, nx = mask.shape
    dims = (nx, ny, nz)
    coords = mask_to_coords(mask)
    if len(coords) == 0:
        return SkeletonGraph([], [], dims)

    counts = neighbor_count_map(mask)
    index = np.full(mask.shape, -1, np.int64)
    index[coords[:, 2], coords[:, 1], coords[:, 0]] = np.arange(len(coords))
    ncount = counts[coords[:, 2], coords[:, 1], coords[:, 0]]

    def neighbors(i):
        x, y, z = coords[i]
        out = []
        for dx, dy, dz in _NEIGHBOR_OFFSETS:
            xx, yy, zz = x + dx, y + dy, z + dz
            if 0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz:
                j = index[zz, yy, xx]
                if j >= 0:
                    out.append(int(j))
        return out

    # Node clusters: junction voxels merge with adjacent junction voxels.
    cluster_of = np.full(len(coords), -1, np.int64)
    clusters: list[list[int]] = []
    for i in range(len(coords)):
        if ncount[i] == 2 or cluster_of[i] >= 0:
            continue
        cid = len(clusters)
        members = [i]
        cluster_of[i] = cid
        if ncount[i] >= 3:
            queue = deque([i])
            while queue:
                c = queue.popleft()
                for j in neighbors(c):
                    if ncount[j] >= 3 and cluster_of[j] < 0:
                        cluster_of[j] = cid
                        members.append(j)
                        queue.append(j)
        clusters.append(sorted(members))

    nodes: list[Node] = []
    reps: list[int] = []
    for members in clusters:
        pts = coords[members].astype(float)
        centroid = pts.mean(axis=0)
        d2 = ((pts - centroid) ** 2).sum(axis=1)
        rep = members[int(np.argmin(d2))]
        n = ncount[members[0]]
        kind = "junction" if n >= 3 else ("endpoint" if n == 1 else "isolated")
        nodes.append(Node(tuple(int(v) for v in coords[rep]), kind,
                          [tuple(int(v) for v in coords[m]) for m in members]))
        reps.append(rep)

    def route(cid, target):
        """Shortest in-cluster route from the cluster representative to ``target``."""
        start = reps[cid]
        if start == target:
            return [start]
        prev = {start: -1}
        queue = deque([start])
        while queue:
            c = queue.popleft()
            if c == target:
                break
            for j in neighbors(c):
                if cluster_of[j] == cid and j not in prev:
                    prev[j] = c
                    queue.append(j)
        out = [target]
        while prev[out[-1]] != -1:
            out.append(prev[out[-1]])
        return out[::-1]

    edges: list[Branch] = []
    visited = np.zeros(len(coords), bool)

    def emit(chain):
        a, b = int(cluster_of[chain[0]]), int(cluster_of[chain[-1]])
        full = route(a, chain[0])[:-1] + chain + route(b, chain[-1])[::-1][1:]
        path = coords[full]
        radius = dist[path[:, 2], path[:, 1], path[:, 0]].astype(float)
        edges.append(Branch(path.copy(), radius, (a, b)))

    for i in range(len(coords)):
        if cluster_of[i] < 0:
            continue
        for j in neighbors(i):
            if cluster_of[j] >= 0:
                if cluster_of[j] != cluster_of[i] and i < j:
                    emit([i, j])
                continue
            if visited[j]:
                continue
            chain = [i, j]
            visited[j] = True
            prev, cur = i, j
            while True:
                # chain voxels have exactly two neighbours, one of which is prev
                nxt = [k for k in neighbors(cur) if k != prev]
                if not nxt or (cluster_of[nxt[0]] < 0 and visited[nxt[0]]):
                    break
                k = nxt[0]
                chain.append(k)
                if cluster_of[k] >= 0:
                    break
                visited[k] = True
                prev, cur = cur, k
            if cluster_of[chain[-1]] >= 0:
                emit(chain)

    # Pure cycles carry no node voxel; anchor each at its first voxel in scan order.
    for i in range(len(coords)):
        if cluster_of[i] >= 0 or visited[i]:
            continue
        cid = len(clusters)
        clusters.append([i])
        cluster_of[i] = cid
        reps.append(i)
        nodes.append(Node(tuple(int(v) for v in coords[i]), "loop", [tuple(int(v) for v in coords[i])]))
        nb = neighbors(i)
        chain = [i]
        prev, cur = i, nb[0]
        while cur != i:
            visited[cur] = True
            chain.append(cur)
            nxt = [k for k in neighbors(cur) if k != prev]
            prev, cur = cur, nxt[0]
        chain.append(i)
        emit(chain)

    return SkeletonGraph(nodes, edges, dims)


def skeletonize_graph(vol) -> tuple[VoxelVolume, SkeletonGraph]:
    """Thin ``vol`` and build its branch graph with radii from the unthinned volume."""
    from .voxel import distance_transform

    skel = thin_3d(vol)
    mask = as_mask(vol)
    dist = distance_transform(vol) if not mask.all() else np.ones(mask.shape)
    return skel, build_skeleton_graph(skel, dist)
