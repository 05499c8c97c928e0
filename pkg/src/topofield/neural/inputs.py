"""Turn a voxel tree into the point tensors consumed by the field."""
from __future__ import annotations

import numpy as np
import torch

from ..pointcloud import (
    extract_skeleton_points,
    extract_surface_points,
    knn_indices,
    super_point_descriptors,
)
from ..skeleton import thin_3d
from .field import FieldInputs


def prepare_inputs(vol, n_surface: int, n_skeleton: int, K: int, r: int = 2, seed: int = 0,
                   skeleton=None, dtype=torch.float32) -> FieldInputs:
    skel = thin_3d(vol) if skeleton is None else skeleton
    surf = extract_surface_points(vol, n_surface, seed)
    sk = extract_skeleton_points(vol, n_skeleton, seed + 1, skeleton=skel)
    desc = super_point_descriptors(vol, surf.source_voxels, r)
    idx, dist = knn_indices(surf, sk, K, return_distances=True)
    return FieldInputs(
        surface=torch.as_tensor(surf.coords, dtype=dtype),
        descriptors=torch.as_tensor(desc, dtype=dtype),
        skeleton=torch.as_tensor(sk.coords, dtype=dtype),
        knn=torch.as_tensor(idx, dtype=torch.long),
        knn_dist=torch.as_tensor(np.asarray(dist), dtype=dtype),
    )
