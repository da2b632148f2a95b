"""Distance-based ranking and channel rearrangement of vision heatmaps."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

import numpy as np
import torch


class Criterion(str, Enum):
    POS = "pos"
    NEG = "neg"
    POS_PLUS_NEG = "pos_plus_neg"
    RANDOM = "random"


@dataclass
class PrototypeScores:
    s_pos: torch.Tensor
    s_neg: torch.Tensor


@dataclass
class RankedHeatmapStack:
    maps: torch.Tensor  # (..., N, H, W) in ranked order
    order: List[int]  # original index of each slot
    keys: List[int]  # sort key of each slot, nondecreasing


def score_prototypes(prototypes: torch.Tensor, Lp: torch.Tensor, Lp_anti: torch.Tensor) -> PrototypeScores:
    """Euclidean distance of every prototype to the projected expression / anti-expression."""
    return PrototypeScores(
        s_pos=(prototypes - Lp).norm(dim=-1),
        s_neg=(prototypes - Lp_anti).norm(dim=-1),
    )


def ascending_ranks(values: Sequence[float]) -> np.ndarray:
    """Rank 0 for the smallest value; ties keep index order."""
    order = np.argsort(np.asarray(values), kind="stable")
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(len(order))
    return ranks


def descending_ranks(values: Sequence[float]) -> np.ndarray:
    """Rank 0 for the largest value; ties keep index order."""
    return ascending_ranks(-np.asarray(values, dtype=np.float64))


def compute_order(s_pos, s_neg, criterion, seed: int = 0):
    """Return ``(order, keys)`` for the given criterion."""
    s_pos = np.asarray(_as_numpy(s_pos), dtype=np.float64)
    s_neg = np.asarray(_as_numpy(s_neg), dtype=np.float64)
    if s_pos.shape != s_neg.shape or s_pos.ndim != 1:
        raise ValueError(f"score length mismatch: {s_pos.shape} vs {s_neg.shape}")
    criterion = Criterion(criterion)
    n = len(s_pos)
    if criterion is Criterion.RANDOM:
        order = np.random.default_rng(seed).permutation(n)
        return order.tolist(), list(range(n))
    if criterion is Criterion.POS:
        key = ascending_ranks(s_pos)
    elif criterion is Criterion.NEG:
        key = descending_ranks(s_neg)
    else:
        key = ascending_ranks(s_pos) + descending_ranks(s_neg)
    order = np.argsort(key, kind="stable")
    return order.tolist(), key[order].tolist()


def rank_and_rearrange(maps: torch.Tensor, scores: PrototypeScores, criterion, seed: int = 0) -> RankedHeatmapStack:
    """Reorder the prototype axis (dim -3) of ``maps``.

    ``maps`` is ``(N, H, W)`` for one image or ``(B, N, H, W)`` for a group.
    The ordering is a hard permutation; no gradient flows through it.
    """
    n = maps.shape[-3]
    if len(scores.s_pos) != n or len(scores.s_neg) != n:
        raise ValueError(f"{n} maps but {len(scores.s_pos)}/{len(scores.s_neg)} scores")
    order, keys = compute_order(scores.s_pos, scores.s_neg, criterion, seed)
    index = torch.as_tensor(order, dtype=torch.long, device=maps.device)
    return RankedHeatmapStack(maps.index_select(-3, index), order, keys)


def _as_numpy(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return x
