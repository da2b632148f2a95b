"""Triphasic feature assembly, the distance decision rule and the mask decoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .hierarchizer import RankedHeatmapStack


@dataclass
class Decision:
    is_positive: bool
    d_pos: float
    d_neg: float


def assemble_triphasic(V: torch.Tensor, Ml: torch.Tensor, ranked) -> torch.Tensor:
    """Stack ``[V, Ml, ranked maps]`` along the channel axis.

    Works on one image (``V`` (C, H, W), ``Ml`` (H, W), maps (N, H, W)) or a
    batch with a leading axis. ``ranked`` may be ``None`` (no vision maps).
    """
    maps = ranked.maps if isinstance(ranked, RankedHeatmapStack) else ranked
    parts = [V, Ml.unsqueeze(-3)]
    if maps is not None:
        parts.append(maps)
    hw = V.shape[-2:]
    for t in parts[1:]:
        if t.shape[-2:] != hw or t.ndim != V.ndim:
            raise ValueError(f"shape mismatch: features {tuple(V.shape)} vs {tuple(t.shape)}")
    return torch.cat(parts, dim=-3)


def split_triphasic(z: torch.Tensor, C_v: int):
    """Inverse of :func:`assemble_triphasic`: ``(V, Ml, maps)``."""
    V = z[..., :C_v, :, :]
    Ml = z[..., C_v, :, :]
    maps = z[..., C_v + 1:, :, :]
    return V, Ml, maps


class HeatmapGain(nn.Module):
    """Learnable positive gain on the trailing ``k`` heatmap channels of ``dim``.

    Cosine maps from a fresh encoder vary by ~1e-2 across pixels, which
    leaves the heads blind to the expression for many epochs; the gain plays
    the role of a similarity temperature. ``k = 0`` is the identity.
    Only the mask decoder uses it.
    """

    def __init__(self, k: int = 0, gain: float = 30.0):
        super().__init__()
        self.k = k
        self.log_gain = nn.Parameter(torch.tensor(math.log(gain))) if k else None

    def forward(self, x: torch.Tensor, dim: int = -3) -> torch.Tensor:
        if not self.k:
            return x
        n = x.shape[dim]
        keep, maps = x.split([n - self.k, self.k], dim=dim)
        return torch.cat([keep, maps * self.log_gain.exp()], dim=dim)


class EmbeddingHead(nn.Module):
    """Global average pool over space, then an affine map to R^{C_v}."""

    def __init__(self, in_channels: int, C_v: int):
        super().__init__()
        self.fc = nn.Linear(in_channels, C_v)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.fc(z.mean(dim=(-2, -1)))


def embed_group_features(z: torch.Tensor, head: EmbeddingHead) -> torch.Tensor:
    return head(z)


def distances(e: torch.Tensor, Lp: torch.Tensor, Lp_anti: torch.Tensor):
    return (e - Lp).norm(dim=-1), (e - Lp_anti).norm(dim=-1)


def decide(e, Lp, Lp_anti, m: float = 1.0) -> Decision:
    """Positive iff ``d_pos + m < d_neg`` (strict)."""
    if m < 0:
        raise ValueError("margin must be nonnegative")
    d_pos, d_neg = distances(torch.as_tensor(e), torch.as_tensor(Lp), torch.as_tensor(Lp_anti))
    d_pos, d_neg = float(d_pos), float(d_neg)
    return Decision(d_pos + m < d_neg, d_pos, d_neg)


def decide_from_distances(d_pos: float, d_neg: float, m: float = 1.0) -> Decision:
    return Decision(d_pos + m < d_neg, float(d_pos), float(d_neg))


class MaskDecoder(nn.Module):
    """Two stride-2 transposed-conv blocks and a 1x1 logit head.

    The trailing ``heatmap_channels`` input channels go through a
    :class:`HeatmapGain` first.
    """

    def __init__(self, in_channels: int, width: int = 32, heatmap_channels: int = 0, gain: float = 30.0):
        super().__init__()
        if not 0 <= heatmap_channels <= in_channels:
            raise ValueError(f"heatmap_channels={heatmap_channels} outside [0, {in_channels}]")
        self.gain = HeatmapGain(heatmap_channels, gain)
        self.up = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(width, width, 2, stride=2),
            nn.ReLU(),
            nn.ConvTranspose2d(width, width // 2, 2, stride=2),
            nn.ReLU(),
        )
        self.head = nn.Conv2d(width // 2, 1, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, 4H, 4W) logits; a single (C, H, W) gives (4H, 4W)."""
        single = z.ndim == 3
        if single:
            z = z.unsqueeze(0)
        logits = self.head(self.up(self.gain(z)))[:, 0]
        return logits[0] if single else logits


def decode_mask(z: torch.Tensor, decoder: MaskDecoder) -> torch.Tensor:
    return decoder(z)


def emit_mask(logits: torch.Tensor, decision: Decision):
    """Binary mask from logits, forced to all-zero for negative decisions."""
    if not decision.is_positive:
        return torch.zeros(logits.shape, dtype=torch.uint8)
    return (logits > 0).to(torch.uint8)
