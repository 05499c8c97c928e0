"""Task losses. Probabilities in, scalars out; the logits variants are the same maths, stabler."""
from __future__ import annotations

import torch
import torch.nn.functional as F


def soft_dice(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return 1.0 - (2.0 * (probs * targets).sum() + 1.0) / (probs.sum() + targets.sum() + 1.0)


def loss_repair(probs, targets, lambda_bce: float = 0.5, lambda_dice: float = 0.5) -> torch.Tensor:
    targets = targets.to(probs.dtype)
    return lambda_bce * F.binary_cross_entropy(probs, targets) + lambda_dice * soft_dice(probs, targets)


def loss_repair_logits(logits, targets, lambda_bce: float = 0.5, lambda_dice: float = 0.5) -> torch.Tensor:
    targets = targets.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, targets)
    return lambda_bce * bce + lambda_dice * soft_dice(torch.sigmoid(logits), targets)


def loss_ce(pred_dist, target_class) -> torch.Tensor:
    """Mean negative log probability of the target class (0-based indices)."""
    picked = pred_dist.gather(1, target_class.long()[:, None])[:, 0]
    return -torch.log(picked.clamp_min(torch.finfo(pred_dist.dtype).tiny)).mean()


def loss_ce_logits(logits, target_class) -> torch.Tensor:
    return F.cross_entropy(logits, target_class.long())


def total_loss(repair=None, label=None, segment=None) -> torch.Tensor:
    parts = [t for t in (repair, label, segment) if t is not None]
    if not parts:
        return torch.zeros(())
    out = parts[0]
    for t in parts[1:]:
        out = out + t
    return out
