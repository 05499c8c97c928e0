"""Dense voxel volumes: connectivity, boundary extraction, distances, dilation and VVOL I/O.

Arrays are stored as ``(nz, ny, nx)`` so that the flat C-order payload is x-fastest.
Coordinates handed in and out of this module are ``(x, y, z)`` integer triples.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

MAGIC = b"VVOL"
VERSION = 1
_HEADER = struct.Struct("<4sBBH3I3fH")

STRUCT_6 = ndi.generate_binary_structure(3, 1)
STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


class VolumeFormatError(ValueError):
    """Base class for VVOL parse failures."""


class BadMagicError(VolumeFormatError):
    pass


class TruncatedPayloadError(VolumeFormatError):
    pass


class DimsMismatchError(VolumeFormatError):
    pass


@dataclass
class VoxelVolume:
    """Label grid with per-axis spacing. ``data`` has shape ``(nz, ny, nx)``."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    class_count: int = 2

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"volume must be 3D with positive dims, got {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be positive")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if self.data.size and int(self.data.max()) >= self.class_count:
            raise ValueError(f"label {int(self.data.max())} >= class_count {self.class_count}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @classmethod
    def zeros(cls, dims, class_count: int = 2, spacing=(1.0, 1.0, 1.0)) -> VoxelVolume:
        nx, ny, nz = dims
        return cls(np.zeros((nz, ny, nx), np.uint8), spacing, class_count)

    @classmethod
    def from_mask(cls, mask: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> VoxelVolume:
        return cls(np.asarray(mask).astype(bool).astype(np.uint8), spacing, 2)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def mask(self) -> np.ndarray:
        return self.data > 0

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def copy(self) -> VoxelVolume:
        return VoxelVolume(self.data.copy(), self.spacing, self.class_count)

    def __eq__(self, other):
        if not isinstance(other, VoxelVolume):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.spacing == other.spacing
            and self.class_count == other.class_count
            and np.array_equal(self.data, other.data)
        )


@dataclass
class ComponentLabeling:
    labels: np.ndarray  # (nz, ny, nx) int32, 0 = background
    count: int
    sizes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def as_mask(vol) -> np.ndarray:
    """Binary (nz, ny, nx) view of a VoxelVolume or array (label > 0 is foreground)."""
    if isinstance(vol, VoxelVolume):
        return vol.data > 0
    return np.asarray(vol) > 0


def mask_to_coords(mask: np.ndarray) -> np.ndarray:
    """Foreground coordinates as (N, 3) ``(x, y, z)``, ascending (z, y, x) order."""
    zyx = np.argwhere(mask)
    return np.ascontiguousarray(zyx[:, ::-1]).astype(np.int64)


def coords_to_mask(coords, shape_zyx) -> np.ndarray:
    mask = np.zeros(shape_zyx, dtype=bool)
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(c):
        mask[c[:, 2], c[:, 1], c[:, 0]] = True
    return mask


def connected_components(vol, connectivity: int = 26) -> ComponentLabeling:
    """Label foreground components under 6- or 26-adjacency.

    Component ids follow first appearance in (z, y, x) scan order.
    """
    if connectivity == 26:
        structure = STRUCT_26
    elif connectivity == 6:
        structure = STRUCT_6
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    mask = as_mask(vol)
    labels, count = ndi.label(mask, structure=structure)
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:].astype(np.int64)
    return ComponentLabeling(labels.astype(np.int32), int(count), sizes)


def count_components(vol, connectivity: int = 26) -> int:
    return connected_components(vol, connectivity).count


def boundary_voxels(vol) -> np.ndarray:
    """Foreground voxels with a background or out-of-grid 6-neighbour, as (N, 3) xyz."""
    mask = as_mask(vol)
    interior = ndi.binary_erosion(mask, structure=STRUCT_6, border_value=0)
    return mask_to_coords(mask & ~interior)


def distance_transform(vol) -> np.ndarray:
    """Exact Euclidean distance (voxel units) from each foreground voxel to the nearest background voxel."""
    mask = as_mask(vol)
    if mask.all():
        raise ValueError("no background reference")
    return ndi.distance_transform_edt(mask)


def dilate_ball(seeds, radius: float, dims) -> VoxelVolume:
    """Voxels whose centre lies within ``radius`` of any seed centre."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    nx, ny, nz = dims
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 3)
    if len(seeds) and (
        (seeds < 0).any() or (seeds >= np.array([nx, ny, nz])).any()
    ):
        raise ValueError("seed outside dims")
    seed_mask = coords_to_mask(seeds, (nz, ny, nx))
    if not seed_mask.any():
        return VoxelVolume.zeros(dims)
    if radius == 0:
        return VoxelVolume.from_mask(seed_mask)
    dist = ndi.distance_transform_edt(~seed_mask)
    return VoxelVolume.from_mask(dist <= radius)


def dilate_mask(mask: np.ndarray, radius: float) -> np.ndarray:
    """Ball dilation of a boolean (nz, ny, nx) mask; same rule as :func:`dilate_ball`."""
    if not mask.any():
        return mask.copy()
    return ndi.distance_transform_edt(~mask) <= radius


def write_volume(vol: VoxelVolume, path) -> None:
    nx, ny, nz = vol.dims
    header = _HEADER.pack(MAGIC, VERSION, 0, 0, nx, ny, nz, *vol.spacing, vol.class_count)
    Path(path).write_bytes(header + vol.data.tobytes())


def read_volume(path) -> VoxelVolume:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, dtype, _, nx, ny, nz, sx, sy, sz, class_count = _HEADER.unpack_from(raw)
    if version != VERSION or dtype != 0:
        raise VolumeFormatError(f"{path}: unsupported version {version} / dtype {dtype}")
    payload = raw[_HEADER.size:]
    expected = nx * ny * nz
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise DimsMismatchError(f"{path}: payload has {len(payload)} bytes, dims imply {expected}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(nz, ny, nx).copy()
    return VoxelVolume(data, (sx, sy, sz), class_count)
