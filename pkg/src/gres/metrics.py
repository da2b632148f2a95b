"""Group-aware segmentation metrics and the saliency measures.

Report JSON written by ``gres eval``::

    {"miou_bar": float, "miou": float|null, "r_neg": float|null,
     "mae": float, "f_max": float, "s_alpha": float, "e_xi": float|null,
     "meta": {...}, "records": [...]}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

BETA2 = 0.3
ALPHA = 0.5
N_THRESHOLDS = 255
_EPS = np.finfo(np.float64).eps


def iou(pred, gt) -> float:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


@dataclass
class EvalRecord:
    image_id: str
    gt_positive: bool
    pred_positive: bool
    iou: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def category(self) -> str:
        if self.gt_positive:
            return "TP" if self.pred_positive else "FN"
        return "FP" if self.pred_positive else "TN"

    @property
    def adapted_iou(self) -> float:
        cat = self.category
        if cat == "TP":
            if self.iou is None:
                raise ValueError(f"{self.image_id}: TP record without an IoU")
            return float(self.iou)
        return 1.0 if cat == "TN" else 0.0

    def to_dict(self):
        d = {
            "image_id": self.image_id,
            "gt_positive": self.gt_positive,
            "pred_positive": self.pred_positive,
            "category": self.category,
            "iou": self.iou,
        }
        d.update(self.extra)
        return d


def adapted_miou(records: Sequence[EvalRecord]) -> float:
    """Mean of: IoU for TP, 1 for TN, 0 for FP and FN."""
    if not records:
        raise ValueError("adapted mIoU of an empty record list")
    return float(sum(r.adapted_iou for r in records) / len(records))


def vanilla_miou(records: Sequence[EvalRecord]) -> Optional[float]:
    """Plain mIoU over ground-truth positives; a missed positive (empty mask) scores 0."""
    pos = [r for r in records if r.gt_positive]
    if not pos:
        return None
    return float(sum(r.iou if r.category == "TP" else 0.0 for r in pos) / len(pos))


def r_neg(records: Sequence[EvalRecord]) -> Optional[float]:
    """Recall of ground-truth negatives, x100; ``None`` without negatives."""
    neg = [r for r in records if not r.gt_positive]
    if not neg:
        return None
    tn = sum(1 for r in neg if not r.pred_positive)
    return 100.0 * tn / len(neg)


# --------------------------------------------------------------------------- saliency measures


@dataclass
class SaliencyPair:
    pred: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        self.pred = np.clip(np.asarray(self.pred, dtype=np.float64), 0.0, 1.0)
        self.gt = np.asarray(self.gt).astype(bool)
        if self.pred.shape != self.gt.shape:
            raise ValueError(f"shape mismatch: {self.pred.shape} vs {self.gt.shape}")


def mae(pred, gt) -> float:
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))))


def thresholds():
    return np.arange(1, N_THRESHOLDS + 1) / N_THRESHOLDS


def f_curve(pred, gt, beta2: float = BETA2) -> np.ndarray:
    """F-measure at each threshold ``k / 255``, ``k = 1..255`` (foreground = pred >= thr)."""
    gt = np.asarray(gt).astype(bool)
    binarized = np.asarray(pred)[None] >= thresholds()[:, None, None]
    tp = np.count_nonzero(binarized & gt, axis=(1, 2)).astype(np.float64)
    n_pred = np.count_nonzero(binarized, axis=(1, 2))
    n_gt = np.count_nonzero(gt)
    precision = np.divide(tp, n_pred, out=np.zeros_like(tp), where=n_pred > 0)
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    num = (1 + beta2) * precision * recall
    den = beta2 * precision + recall
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def _s_object_part(x):
    mean = x.mean()
    std = x.std(ddof=1) if x.size > 1 else 0.0
    return 2 * mean / (mean**2 + 1 + std + _EPS)


def _ssim(pred, gt):
    n = pred.size
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    a = 4 * x * y * sxy
    b = (x**2 + y**2) * (sx + sy)
    if a != 0:
        return a / (b + _EPS)
    return 1.0 if b == 0 else 0.0


def s_measure(pred, gt, alpha: float = ALPHA) -> float:
    """Structure measure: ``alpha * object + (1 - alpha) * region`` similarity."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    y = gt.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())
    obj = y * _s_object_part(pred[gt]) + (1 - y) * _s_object_part(1 - pred[~gt])

    h, w = gt.shape
    cy, cx = np.argwhere(gt).mean(axis=0).round()
    cy, cx = int(cy) + 1, int(cx) + 1
    gtf = gt.astype(np.float64)
    region = 0.0
    for rows, cols in (
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    ):
        p, g = pred[rows, cols], gtf[rows, cols]
        if p.size == 0:
            continue
        region += _ssim(p, g) * p.size / (h * w)
    return float(max(0.0, alpha * obj + (1 - alpha) * region))


def e_measure(pred, gt) -> float:
    """Enhanced alignment of the map binarized at ``min(2 * mean, 1)`` with ``gt``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    fm = (pred >= min(2 * pred.mean(), 1.0)).astype(np.float64)
    g = gt.astype(np.float64)
    if not gt.any():
        enhanced = 1 - fm
    elif gt.all():
        enhanced = fm
    else:
        dfm = fm - fm.mean()
        dg = g - g.mean()
        align = 2 * dg * dfm / (dg**2 + dfm**2 + _EPS)
        enhanced = (align + 1) ** 2 / 4
    return float(enhanced.sum() / (gt.size - 1 + _EPS))


def sod_metrics(pairs: Sequence[SaliencyPair]) -> dict:
    """MAE, max F-measure (of the pair-averaged curve), S-measure and E-measure means."""
    if not pairs:
        raise ValueError("sod_metrics needs at least one pair")
    pairs = [p if isinstance(p, SaliencyPair) else SaliencyPair(*p) for p in pairs]
    curve = np.mean([f_curve(p.pred, p.gt) for p in pairs], axis=0)
    return {
        "mae": float(np.mean([mae(p.pred, p.gt) for p in pairs])),
        "f_max": float(curve.max()),
        "s_alpha": float(np.mean([s_measure(p.pred, p.gt) for p in pairs])),
        "e_xi": float(np.mean([e_measure(p.pred, p.gt) for p in pairs])),
    }
