"""Point encoders, surface-to-skeleton fusion, tri-plane projection, 2D U-Net and implicit heads."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

FUSION_MODES = ("ssa", "early", "late", "distance_weighted")
PE_BANDS = 10
PE_IN = 3 + 2 * 3 * PE_BANDS
# (width axis, height axis) of each plane in xyz indices
PLANE_AXES = {"xy": (0, 1), "yz": (1, 2), "xz": (0, 2)}


@dataclass
class ModelConfig:
    d: int = 64
    K: int = 8
    R: int = 256
    C: int = 64
    D: int = 64
    r: int = 2
    n_label: int = 19
    n_segment: int = 18
    fusion: str = "ssa"
    voxel_grid: int = 32
    hidden: tuple[int, int] = (256, 128)
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")
        if self.R % 4:
            raise ValueError("R must be divisible by 4")
        for name in ("d", "K", "R", "C", "D", "n_label", "n_segment", "voxel_grid"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def descriptor_dim(self) -> int:
        return (2 * self.r + 1) ** 3

    def to_json(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class FieldInputs:
    """Tensors describing one tree: surface points with descriptors and skeleton points."""

    surface: torch.Tensor  # (N_s, 3) normalized
    descriptors: torch.Tensor  # (N_s, (2r+1)^3)
    skeleton: torch.Tensor  # (N_k, 3)
    knn: torch.Tensor  # (N_s, K) indices into skeleton
    knn_dist: torch.Tensor  # (N_s, K)

    def to(self, dtype) -> FieldInputs:
        return FieldInputs(self.surface.to(dtype), self.descriptors.to(dtype), self.skeleton.to(dtype),
                           self.knn, self.knn_dist.to(dtype))


@dataclass
class TriPlaneField:
    planes: torch.Tensor  # (3, C, R, R) in order xy, yz, xz; rows index the height axis

    @property
    def plane_xy(self):
        return self.planes[0]

    @property
    def plane_yz(self):
        return self.planes[1]

    @property
    def plane_xz(self):
        return self.planes[2]


def _cell(coord: torch.Tensor, n: int) -> torch.Tensor:
    return torch.clamp(torch.floor((coord + 1.0) * 0.5 * n), 0, n - 1).long()


def scatter_mean(flat_index: torch.Tensor, feats: torch.Tensor, n_cells: int) -> torch.Tensor:
    """(n_cells, C) mean of the rows of ``feats`` landing in each cell; empty cells are 0."""
    sums = feats.new_zeros(n_cells, feats.shape[1]).index_add_(0, flat_index, feats)
    counts = torch.bincount(flat_index, minlength=n_cells).to(feats.dtype).clamp_min(1.0)
    return sums / counts[:, None]


def triplane_project(coords: torch.Tensor, feats: torch.Tensor, R: int) -> torch.Tensor:
    """Mean-pool point features onto the xy, yz and xz planes; returns (3, C, R, R)."""
    planes = []
    for w_ax, h_ax in PLANE_AXES.values():
        if len(coords):
            flat = _cell(coords[:, h_ax], R) * R + _cell(coords[:, w_ax], R)
            grid = scatter_mean(flat, feats, R * R)
        else:
            grid = feats.new_zeros(R * R, feats.shape[1])
        planes.append(grid.t().reshape(feats.shape[1], R, R))
    return torch.stack(planes)


def sample_planes(planes: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Bilinear lookup of each plane at the query's in-plane coordinates; returns (Q, 3C)."""
    q = torch.clamp(q, -1.0, 1.0)
    out = []
    for i, (w_ax, h_ax) in enumerate(PLANE_AXES.values()):
        grid = torch.stack([q[:, w_ax], q[:, h_ax]], dim=-1)[None, None]
        s = F.grid_sample(planes[i:i + 1], grid, mode="bilinear", padding_mode="border", align_corners=False)
        out.append(s[0, :, 0].t())
    return torch.cat(out, dim=1)


def fourier_features(q: torch.Tensor) -> torch.Tensor:
    freqs = (2.0 ** torch.arange(PE_BANDS, dtype=q.dtype, device=q.device)) * math.pi
    ang = q[:, :, None] * freqs
    return torch.cat([q, torch.sin(ang).flatten(1), torch.cos(ang).flatten(1)], dim=1)


class PointEncoder(nn.Module):
    """Shared point MLP plus a coarse voxel branch added back residually."""

    def __init__(self, in_dim: int, d: int, grid: int = 32):
        super().__init__()
        self.in_dim = in_dim
        self.grid = grid
        self.fc1 = nn.Linear(in_dim, d)
        self.fc2 = nn.Linear(d, d)
        self.conv = nn.Conv3d(d, d, 3, padding=1)

    def forward(self, coords: torch.Tensor, extra: torch.Tensor | None = None) -> torch.Tensor:
        x = coords if extra is None else torch.cat([coords, extra], dim=1)
        if x.shape[1] != self.in_dim:
            raise ValueError(f"encoder expects {self.in_dim} input features, got {x.shape[1]}")
        h = self.fc2(F.relu(self.fc1(x)))
        g = self.grid
        flat = (_cell(coords[:, 2], g) * g + _cell(coords[:, 1], g)) * g + _cell(coords[:, 0], g)
        vox = scatter_mean(flat, h, g ** 3).t().reshape(1, -1, g, g, g)
        vox = self.conv(vox)
        grid = torch.clamp(coords, -1.0, 1.0)[None, None, None]
        back = F.grid_sample(vox, grid, mode="bilinear", padding_mode="border", align_corners=False)
        return h + back[0, :, 0, 0].t()


class SurfaceToSkeletonAttention(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d, bias=False)
        self.w_o = nn.Linear(d, d, bias=False)

    def forward(self, phi_s, phi_k, knn, K: int | None = None):
        if K is not None and knn.shape[1] != K:
            raise ValueError(f"knn has {knn.shape[1]} neighbours, expected {K}")
        q = self.w_q(phi_s)
        nb = phi_k[knn]  # (N_s, K, d)
        logits = (self.w_k(nb) * q[:, None, :]).sum(-1) / math.sqrt(self.d)
        w = torch.softmax(logits, dim=1)
        agg = (w[..., None] * self.w_v(nb)).sum(1)
        return phi_s + self.w_o(agg)


def inverse_distance_weights(dist: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    w = 1.0 / (eps + dist)
    return w / w.sum(dim=1, keepdim=True)


class DistanceWeightedFusion(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.proj = nn.Linear(2 * d, d)

    def forward(self, phi_s, phi_k, knn, dist):
        w = inverse_distance_weights(dist)
        agg = (w[..., None] * phi_k[knn]).sum(1)
        return self.proj(torch.cat([phi_s, agg], dim=1))


class UNet2D(nn.Module):
    """Two stride-2 stages (C -> 2C -> 4C) with skip concatenations back to C at full size."""

    def __init__(self, c_in: int, c: int):
        super().__init__()
        self.c_in = c_in
        self.enc0 = nn.Conv2d(c_in, c, 3, padding=1)
        self.enc1 = nn.Conv2d(c, 2 * c, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1)
        self.dec1 = nn.Conv2d(4 * c + 2 * c, 2 * c, 3, padding=1)
        self.dec0 = nn.Conv2d(2 * c + c, c, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.c_in:
            raise ValueError(f"U-Net expects {self.c_in} channels, got {x.shape[1]}")
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError("plane resolution must be divisible by 4")
        e0 = F.relu(self.enc0(x))
        e1 = F.relu(self.enc1(e0))
        e2 = F.relu(self.enc2(e1))
        d1 = F.relu(self.dec1(torch.cat([F.interpolate(e2, scale_factor=2, mode="nearest"), e1], 1)))
        return self.dec0(torch.cat([F.interpolate(d1, scale_factor=2, mode="nearest"), e0], 1))


class ImplicitHead(nn.Module):
    def __init__(self, in_dim: int, hidden: tuple[int, int], out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden[0])
        self.fc2 = nn.Linear(hidden[0], hidden[1])
        self.out = nn.Linear(hidden[1], out_dim)

    def forward(self, h):
        return self.out(F.relu(self.fc2(F.relu(self.fc1(h)))))


def seeded_init_(module: nn.Module, seed: int) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias, in registration order."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Linear, nn.Conv2d, nn.Conv3d)):
                fan_in = m.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                for p in (m.weight, m.bias):
                    if p is not None:
                        vals = torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 - 1
                        p.copy_(vals * bound)


class TopoFieldModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.surface_encoder = PointEncoder(3 + cfg.descriptor_dim, d, cfg.voxel_grid)
        self.skeleton_encoder = PointEncoder(3, d, cfg.voxel_grid)
        if cfg.fusion == "ssa":
            self.fusion = SurfaceToSkeletonAttention(d)
        elif cfg.fusion == "distance_weighted":
            self.fusion = DistanceWeightedFusion(d)
        else:
            self.fusion = None
        self.unet = UNet2D(2 * d if cfg.fusion == "late" else d, cfg.C)
        self.pe = nn.Linear(PE_IN, cfg.D)
        in_dim = 3 * cfg.C + cfg.D
        self.head_repair = ImplicitHead(in_dim, cfg.hidden, 1)
        self.head_label = ImplicitHead(in_dim, cfg.hidden, cfg.n_label)
        self.head_segment = ImplicitHead(in_dim, cfg.hidden, cfg.n_segment)
        seeded_init_(self, cfg.seed)

    def encode(self, inp: FieldInputs):
        phi_s = self.surface_encoder(inp.surface, inp.descriptors)
        phi_k = self.skeleton_encoder(inp.skeleton)
        return phi_s, phi_k

    def project(self, inp: FieldInputs, phi_s, phi_k) -> torch.Tensor:
        """Fusion stage: the only place the four modes differ. Returns pre-U-Net planes."""
        mode, R = self.cfg.fusion, self.cfg.R
        if mode == "ssa":
            return triplane_project(inp.surface, self.fusion(phi_s, phi_k, inp.knn, self.cfg.K), R)
        if mode == "distance_weighted":
            return triplane_project(inp.surface, self.fusion(phi_s, phi_k, inp.knn, inp.knn_dist), R)
        if mode == "early":
            pts = torch.cat([inp.surface, inp.skeleton])
            return triplane_project(pts, torch.cat([phi_s, phi_k]), R)
        return torch.cat([triplane_project(inp.surface, phi_s, R), triplane_project(inp.skeleton, phi_k, R)], 1)

    def refine(self, planes: torch.Tensor) -> TriPlaneField:
        return TriPlaneField(self.unet(planes))

    def build_field(self, inp: FieldInputs) -> TriPlaneField:
        phi_s, phi_k = self.encode(inp)
        return self.refine(self.project(inp, phi_s, phi_k))

    def embed(self, field: TriPlaneField, q: torch.Tensor) -> torch.Tensor:
        return torch.cat([sample_planes(field.planes, q), self.pe(fourier_features(q))], dim=1)

    def repair_prob(self, h):
        return torch.sigmoid(self.head_repair(h))[:, 0]

    def label_logits(self, h):
        return self.head_label(h)

    def segment_logits(self, h):
        return self.head_segment(h)
