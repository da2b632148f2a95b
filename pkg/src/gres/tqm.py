"""Language- and vision-activated heatmaps and heatmap-weighted prototypes.

Shapes: a single image's features are ``(C, H, W)``; a group is ``(N, C, H, W)``.
All functions accept either and broadcast over the leading group axis.
"""
from __future__ import annotations

import torch
from torch import nn

EPS = 1e-8


class LanguageProjection(nn.Linear):
    """1x1 conv on a vector, i.e. an affine map R^{C_l} -> R^{C_v}.

    Initialized norm-preserving (std 1/sqrt(C_l), zero bias) so that the
    expression and its anti-expression start further apart than the margin.
    """

    def __init__(self, C_l: int, C_v: int):
        super().__init__(C_l, C_v)
        nn.init.normal_(self.weight, std=C_l ** -0.5)
        nn.init.zeros_(self.bias)


def project_language(L: torch.Tensor, proj: nn.Linear) -> torch.Tensor:
    return proj(L)


def cosine_map(V: torch.Tensor, q: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Per-pixel cosine between feature columns of ``V`` (..., C, H, W) and ``q`` (..., C).

    Entries whose column or query norm product is at most ``eps`` are 0.
    """
    dots = torch.einsum("...chw,...c->...hw", V, q)
    v_norm = V.norm(dim=-3)
    q_norm = q.norm(dim=-1)[..., None, None]
    denom = v_norm * q_norm
    valid = denom > eps
    cos = dots / torch.where(valid, denom, torch.ones_like(denom))
    cos = torch.where(valid, cos, torch.zeros_like(cos))
    return cos.clamp(-1.0, 1.0)


def language_heatmap(V: torch.Tensor, Lp: torch.Tensor) -> torch.Tensor:
    """(N, C, H, W), (C,) -> (N, H, W)."""
    if V.ndim == 4:
        Lp = Lp.expand(V.shape[0], -1)
    return cosine_map(V, Lp)


def pooling_weights(M: torch.Tensor) -> torch.Tensor:
    # signed cosine -> nonnegative weight
    return (M + 1.0) / 2.0


def extract_prototype(V: torch.Tensor, M: torch.Tensor, eps: float = EPS):
    """Heatmap-weighted mean of feature columns.

    Returns ``(p, degenerate)`` where ``degenerate`` marks images whose weights
    sum to at most ``eps`` (their prototype is the zero vector).
    """
    w = pooling_weights(M)
    total = w.sum(dim=(-2, -1))
    weighted = torch.einsum("...chw,...hw->...c", V, w)
    degenerate = total <= eps
    safe = torch.where(degenerate, torch.ones_like(total), total)
    p = weighted / safe[..., None]
    p = torch.where(degenerate[..., None], torch.zeros_like(p), p)
    return p, degenerate


def vision_heatmaps(V_n: torch.Tensor, prototypes: torch.Tensor) -> torch.Tensor:
    """Cosine maps of one image against every group prototype.

    ``V_n`` (C, H, W) with ``prototypes`` (N, C) gives (N, H, W). A group
    ``V`` (N, C, H, W) gives (N, N, H, W) indexed ``[image, prototype]``.
    """
    if prototypes.ndim != 2 or prototypes.shape[0] < 1:
        raise ValueError("prototypes must be a non-empty (N, C) tensor")
    if V_n.ndim == 3:
        return cosine_map(V_n.unsqueeze(0).expand(prototypes.shape[0], -1, -1, -1), prototypes)
    n_img, n_proto = V_n.shape[0], prototypes.shape[0]
    Vx = V_n.unsqueeze(1).expand(n_img, n_proto, *V_n.shape[1:])
    px = prototypes.unsqueeze(0).expand(n_img, n_proto, prototypes.shape[1])
    return cosine_map(Vx, px)
