"""The grouped referring segmenter: encoders -> heatmaps -> ranking -> predictor."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
from torch import nn

from .config import RunConfig
from .encoders import ImageEncoder, TextEncoder, make_anti, pixels_to_tensor
from .hierarchizer import Criterion, PrototypeScores, RankedHeatmapStack, rank_and_rearrange, score_prototypes
from .predictor import Decision, EmbeddingHead, MaskDecoder, assemble_triphasic, decide_from_distances, distances
from .tqm import LanguageProjection, extract_prototype, language_heatmap, vision_heatmaps


@dataclass
class GroupOutput:
    V: torch.Tensor  # (N, C_v, H, W)
    Lp: torch.Tensor  # projected expression (or anti-expression when swapped)
    Lp_anti: torch.Tensor
    Ml: torch.Tensor  # (N, H, W)
    prototypes: Optional[torch.Tensor]  # (N, C_v)
    scores: Optional[PrototypeScores]
    ranked: Optional[RankedHeatmapStack]  # maps (N, N, H, W)
    z: torch.Tensor  # (N, C_v + 1 [+ N], H, W)
    e: torch.Tensor  # (N, C_v)
    logits: torch.Tensor  # (N, H_img, W_img)


def swap_roles(Lp, Lp_anti):
    return Lp_anti, Lp


class GRSer(nn.Module):
    def __init__(self, vocab: Sequence[str], config: RunConfig):
        super().__init__()
        self.config = config
        self.text_encoder = TextEncoder(vocab, config.C_l)
        self.image_encoder = ImageEncoder(config.C_v)
        self.lang_proj = LanguageProjection(config.C_l, config.C_v)
        in_ch = config.C_v + 1 + (config.N if config.use_tqm else 0)
        self.embed_head = EmbeddingHead(in_ch, config.C_v)
        self.decoder = MaskDecoder(in_ch, heatmap_channels=in_ch - config.C_v)

    @property
    def vocab(self) -> List[str]:
        return self.text_encoder.vocab

    @property
    def dtype(self):
        return self.lang_proj.weight.dtype

    def default_criterion(self):
        if not self.config.use_hierarchizer:
            return Criterion.RANDOM
        return Criterion(self.config.rank_criterion)

    def language(self, expression):
        L = self.text_encoder(expression)
        L_anti = self.text_encoder(make_anti(expression))
        return self.lang_proj(L), self.lang_proj(L_anti)

    def forward(self, images, expression, criterion=None, seed: int = 0, swap: bool = False, V=None) -> GroupOutput:
        if criterion is None:
            criterion = self.default_criterion()
        if V is None:
            V = self.image_encoder(images)
        Lp, Lp_anti = self.language(expression)
        if swap:
            Lp, Lp_anti = swap_roles(Lp, Lp_anti)
        Ml = language_heatmap(V, Lp)
        prototypes = scores = ranked = None
        if self.config.use_tqm:
            prototypes, _ = extract_prototype(V, Ml)
            Mv = vision_heatmaps(V, prototypes)
            scores = score_prototypes(prototypes, Lp, Lp_anti)
            ranked = rank_and_rearrange(Mv, scores, criterion, seed)
        z = assemble_triphasic(V, Ml, ranked)
        e = self.embed_head(z)
        logits = self.decoder(z)
        return GroupOutput(V, Lp, Lp_anti, Ml, prototypes, scores, ranked, z, e, logits)

    def group_tensors(self, group):
        """Stack a :class:`GroupSample` into ``(images, targets, positive)`` tensors."""
        images = torch.stack([pixels_to_tensor(r.pixels) for r in group.images]).to(self.dtype)
        targets = torch.stack([torch.as_tensor(r.target) for r in group.images]).to(self.dtype)
        positive = torch.tensor([r.is_positive for r in group.images], dtype=torch.bool)
        return images, targets, positive

    def decisions(self, out: GroupOutput) -> List[Decision]:
        d_pos, d_neg = distances(out.e, out.Lp, out.Lp_anti)
        result = []
        for dp, dn in zip(d_pos.tolist(), d_neg.tolist()):
            dec = decide_from_distances(dp, dn, self.config.m)
            if not self.config.use_triplet:
                # the embedding head gets no training signal without the triplet term
                dec = Decision(True, dec.d_pos, dec.d_neg)
            result.append(dec)
        return result
