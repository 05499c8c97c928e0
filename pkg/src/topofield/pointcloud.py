"""Surface and skeleton point sets in a shared normalized frame, descriptors and grid KNN."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .skeleton import thin_3d
from .voxel import as_mask, boundary_voxels, mask_to_coords


@dataclass(frozen=True)
class Normalizer:
    """Isotropic map from voxel-centre coordinates (x, y, z) to [-1, 1]^3."""

    origin: tuple[float, float, float]
    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")

    def normalize(self, xyz) -> np.ndarray:
        return (np.asarray(xyz, float) - np.asarray(self.origin)) / self.scale

    def denormalize(self, q) -> np.ndarray:
        return np.asarray(q, float) * self.scale + np.asarray(self.origin)


def make_normalizer(dims) -> Normalizer:
    dims = np.asarray(dims, float)
    # voxel i covers [i, i+1); its centre i + 0.5 lands at (i + 0.5 - n/2) / (max n / 2)
    origin = tuple(float(v) for v in dims / 2.0 - 0.5)
    return Normalizer(origin, float(dims.max() / 2.0))


@dataclass
class PointSet:
    coords: np.ndarray  # (N, 3) normalized
    source_voxels: np.ndarray  # (N, 3) xyz
    kind: str  # surface | skeleton

    def __len__(self):
        return len(self.coords)

    def save_txt(self, path) -> None:
        np.savetxt(path, np.hstack([self.coords, self.source_voxels]), fmt="%.6f")


def resample_indices(count: int, n_target: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform subsample without replacement, or every index plus repeats drawn with replacement."""
    if count >= n_target:
        return rng.choice(count, n_target, replace=False)
    extra = rng.integers(0, count, n_target - count)
    return np.concatenate([np.arange(count), extra])


def _point_set(voxels: np.ndarray, n_target: int, seed: int, kind: str, dims) -> PointSet:
    if len(voxels) == 0:
        raise ValueError("empty foreground")
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    rng = np.random.default_rng(seed)
    sel = voxels[resample_indices(len(voxels), n_target, rng)]
    norm = make_normalizer(dims)
    return PointSet(norm.normalize(sel), sel, kind)


def _dims(vol):
    nz, ny, nx = as_mask(vol).shape
    return nx, ny, nz


def extract_surface_points(vol, n_target: int, seed: int = 0) -> PointSet:
    return _point_set(boundary_voxels(vol), n_target, seed, "surface", _dims(vol))


def extract_skeleton_points(vol, n_target: int, seed: int = 0, skeleton=None) -> PointSet:
    skel = thin_3d(vol) if skeleton is None else skeleton
    return _point_set(mask_to_coords(as_mask(skel)), n_target, seed, "skeleton", _dims(vol))


def super_point_descriptor(vol, source_voxel, r: int = 2) -> np.ndarray:
    return super_point_descriptors(vol, np.asarray(source_voxel).reshape(1, 3), r)[0]


def super_point_descriptors(vol, voxels, r: int = 2) -> np.ndarray:
    """(N, (2r+1)^3) binary occupancy around each voxel, flattened in (dz, dy, dx) order."""
    if r < 0:
        raise ValueError("r must be >= 0")
    padded = np.pad(as_mask(vol), r)
    v = np.asarray(voxels, np.int64).reshape(-1, 3)
    k = np.arange(-r, r + 1)
    dz, dy, dx = np.meshgrid(k, k, k, indexing="ij")
    zi = v[:, 2, None] + r + dz.ravel()[None]
    yi = v[:, 1, None] + r + dy.ravel()[None]
    xi = v[:, 0, None] + r + dx.ravel()[None]
    return padded[zi, yi, xi].astype(np.float32)


@njit(cache=True)
def _grid_knn(q, ref, order, starts, cell_of_ref_min, h, gdim, K, out_idx, out_d2):
    nq = q.shape[0]
    gx, gy, gz = gdim[0], gdim[1], gdim[2]
    best_d = np.empty(K)
    best_i = np.empty(K, np.int64)
    for n in range(nq):
        cx = min(max(int((q[n, 0] - cell_of_ref_min[0]) / h), 0), gx - 1)
        cy = min(max(int((q[n, 1] - cell_of_ref_min[1]) / h), 0), gy - 1)
        cz = min(max(int((q[n, 2] - cell_of_ref_min[2]) / h), 0), gz - 1)
        found = 0
        ring = 0
        maxring = max(gx, gy, gz)
        while True:
            for iz in range(cz - ring, cz + ring + 1):
                if iz < 0 or iz >= gz:
                    continue
                for iy in range(cy - ring, cy + ring + 1):
                    if iy < 0 or iy >= gy:
                        continue
                    for ix in range(cx - ring, cx + ring + 1):
                        if ix < 0 or ix >= gx:
                            continue
                        if max(abs(ix - cx), abs(iy - cy), abs(iz - cz)) != ring:
                            continue
                        c = (iz * gy + iy) * gx + ix
                        for s in range(starts[c], starts[c + 1]):
                            j = order[s]
                            dx = ref[j, 0] - q[n, 0]
                            dy = ref[j, 1] - q[n, 1]
                            dz = ref[j, 2] - q[n, 2]
                            d = dx * dx + dy * dy + dz * dz
                            if found < K:
                                pos = found
                                found += 1
                            elif d < best_d[K - 1] or (d == best_d[K - 1] and j < best_i[K - 1]):
                                pos = K - 1
                            else:
                                continue
                            while pos > 0 and (best_d[pos - 1] > d or (best_d[pos - 1] == d and best_i[pos - 1] > j)):
                                best_d[pos] = best_d[pos - 1]
                                best_i[pos] = best_i[pos - 1]
                                pos -= 1
                            best_d[pos] = d
                            best_i[pos] = j
            # anything beyond this ring is at least ring * h away along some axis
            bound = ring * h
            if found == K and best_d[K - 1] < bound * bound:
                break
            if ring >= maxring:
                break
            ring += 1
        for k in range(K):
            out_idx[n, k] = best_i[k]
            out_d2[n, k] = best_d[k]


def _coords(points) -> np.ndarray:
    return np.ascontiguousarray(points.coords if isinstance(points, PointSet) else points, dtype=np.float64)


def knn_indices(query_points, reference_points, K: int, return_distances: bool = False):
    """K nearest references per query, ascending distance, ties to the smaller index."""
    q = _coords(query_points).reshape(-1, 3)
    ref = _coords(reference_points).reshape(-1, 3)
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(ref) < K:
        raise ValueError(f"reference has {len(ref)} points, fewer than K={K}")
    lo = ref.min(axis=0)
    extent = float(max((ref.max(axis=0) - lo).max(), 1e-12))
    # about two references per cell on average
    cells_per_axis = max(1, int(np.ceil((len(ref) / 2.0) ** (1.0 / 3.0))))
    h = extent / cells_per_axis * (1 + 1e-9)
    gdim = np.minimum(np.floor((ref.max(axis=0) - lo) / h).astype(np.int64) + 1, cells_per_axis)
    cell = np.minimum(np.floor((ref - lo) / h).astype(np.int64), gdim - 1)
    flat = (cell[:, 2] * gdim[1] + cell[:, 1]) * gdim[0] + cell[:, 0]
    order = np.argsort(flat, kind="stable")
    starts = np.searchsorted(flat[order], np.arange(int(np.prod(gdim)) + 1))
    idx = np.empty((len(q), K), np.int64)
    d2 = np.empty((len(q), K))
    _grid_knn(q, ref, order, starts.astype(np.int64), lo, h, gdim, K, idx, d2)
    if return_distances:
        return idx, np.sqrt(d2)
    return idx
