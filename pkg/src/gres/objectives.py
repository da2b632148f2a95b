"""Segmentation, mirror and triplet losses and the ramped composite objective."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import torch
from torch.nn import functional as F

Number = Union[float, torch.Tensor]


@dataclass
class LossTerms:
    ce: Number
    ce_mirror: Number
    tri: Number
    total: Number
    epoch_weight: float
    lam: float

    def as_row(self):
        return {
            "ce": _scalar(self.ce),
            "ce_mirror": _scalar(self.ce_mirror),
            "tri": _scalar(self.tri),
            "total": _scalar(self.total),
            "t_over_T": self.epoch_weight,
        }


def _scalar(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def seg_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel binary cross-entropy of ``sigmoid(logits)`` against ``target``."""
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype))


def _hinge(x: torch.Tensor) -> torch.Tensor:
    # subgradient 0 at the kink
    return torch.where(x > 0, x, torch.zeros_like(x))


def triplet_loss(e, Lp, Lp_anti, is_positive_gt, m: float = 1.0) -> torch.Tensor:
    """Margin loss with the image embedding as anchor.

    For a positive image the expression is the positive example and the
    anti-expression the negative one; the roles flip for negatives.
    ``is_positive_gt`` may be a bool or a bool tensor matching ``e``'s batch.
    """
    if m < 0:
        raise ValueError("margin must be nonnegative")
    d_pos = (e - Lp).norm(dim=-1)
    d_neg = (e - Lp_anti).norm(dim=-1)
    is_pos = torch.as_tensor(is_positive_gt, dtype=torch.bool, device=d_pos.device)
    x = torch.where(is_pos, d_pos - d_neg, d_neg - d_pos) + m
    return _hinge(x)


def positive_seg_loss(logits: torch.Tensor, targets: torch.Tensor, positive: torch.Tensor) -> torch.Tensor:
    """Mean of per-image ``seg_loss`` over ground-truth positives (0 if none)."""
    idx = torch.nonzero(positive, as_tuple=False).flatten().tolist()
    if not idx:
        return logits.sum() * 0.0
    # ascending image index for a fixed summation order
    per_image = [seg_loss(logits[i], targets[i]) for i in idx]
    return torch.stack(per_image).mean()


def mirror_pass(group, model, criterion=None, seed: int = 0, V=None):
    """Swap expression and anti-expression, rerun the forward pass, score against ``1 - Y``.

    Returns ``(loss, has_positives)``; the loss is 0 when the group has no
    ground-truth positives.
    """
    images, targets, positive = model.group_tensors(group)
    if not bool(positive.any()):
        return torch.zeros((), dtype=images.dtype), False
    out = model(images, group.expression, criterion=criterion, seed=seed, swap=True, V=V)
    return positive_seg_loss(out.logits, 1 - targets, positive), True


def epoch_weight(t: int, T: int) -> float:
    if T < 1 or not 0 <= t <= T:
        raise ValueError(f"need 0 <= t <= T and T >= 1, got t={t}, T={T}")
    return t / T


def total_loss(ce: Number, ce_mirror: Number, tri: Number, t: int, T: int, lam: float = 1.0) -> LossTerms:
    """``ce + lam * ce_mirror + (t / T) * tri``."""
    w = epoch_weight(t, T)
    total = ce + lam * ce_mirror
    if w != 0:
        total = total + w * tri
    return LossTerms(ce, ce_mirror, tri, total, w, lam)
