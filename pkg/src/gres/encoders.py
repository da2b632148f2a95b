"""Small trainable text and image encoders."""
from __future__ import annotations

from typing import List, Sequence

import torch
from torch import nn

from .dataset import NO_TOKEN, UNK_TOKEN

STRIDE = 4


def make_anti(expression: Sequence[str]) -> List[str]:
    """Prefix the negation token; callers never apply it twice."""
    if not expression:
        raise ValueError("expression must be non-empty")
    return [NO_TOKEN] + list(expression)


class TextEncoder(nn.Module):
    """Token embedding -> mean over tokens -> 2-layer MLP."""

    def __init__(self, vocab: Sequence[str], C_l: int = 64, hidden: int = 64):
        super().__init__()
        vocab = list(vocab)
        for tok in (NO_TOKEN, UNK_TOKEN):
            if tok not in vocab:
                vocab.append(tok)
        self.vocab = vocab
        self.index = {tok: i for i, tok in enumerate(vocab)}
        self.embedding = nn.Embedding(len(vocab), C_l)
        self.mlp = nn.Sequential(nn.Linear(C_l, hidden), nn.ReLU(), nn.Linear(hidden, C_l))
        # variance-preserving init: the default Linear init shrinks the
        # vector so much that L' and L'_anti start closer than the margin
        nn.init.kaiming_normal_(self.mlp[0].weight, nonlinearity="relu")
        nn.init.normal_(self.mlp[2].weight, std=hidden ** -0.5)
        for layer in (self.mlp[0], self.mlp[2]):
            nn.init.zeros_(layer.bias)

    def token_ids(self, tokens: Sequence[str]) -> torch.Tensor:
        unk = self.index[UNK_TOKEN]
        return torch.tensor([self.index.get(t, unk) for t in tokens], dtype=torch.long)

    def forward(self, tokens: Sequence[str]) -> torch.Tensor:
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty token list")
        ids = self.token_ids(tokens).to(self.embedding.weight.device)
        pooled = self.embedding(ids).mean(dim=0)
        return self.mlp(pooled)


def _block(c_in, c_out, stride):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
        nn.ReLU(),
        nn.Conv2d(c_out, c_out, 3, stride=1, padding=1),
        nn.ReLU(),
    )


class ImageEncoder(nn.Module):
    """Three conv blocks with strides 2, 2, 1 (total stride 4).

    Each block is a strided 3x3 conv followed by a stride-1 3x3 conv. The
    last layer is linear so features can take either sign, which the cosine
    heatmaps need.
    """

    def __init__(self, C_v: int = 64, width: int = 32):
        super().__init__()
        self.blocks = nn.Sequential(
            _block(3, width, 2),
            _block(width, C_v, 2),
            nn.Conv2d(C_v, C_v, 3, stride=1, padding=1),
            nn.ReLU(),
        )
        self.out = nn.Conv2d(C_v, C_v, 3, stride=1, padding=1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """``images``: (B, 3, H, W) in [0, 1] -> (B, C_v, H/4, W/4)."""
        h, w = images.shape[-2:]
        if h % STRIDE or w % STRIDE:
            raise ValueError(f"image size {h}x{w} not divisible by stride {STRIDE}")
        return self.out(self.blocks(images))


def encode_text(tokens: Sequence[str], encoder: TextEncoder) -> torch.Tensor:
    return encoder(tokens)


def encode_image(pixels, encoder: ImageEncoder) -> torch.Tensor:
    """Encode one H x W x 3 image (uint8 0-255 or float in [0, 1]) to C_v x H/4 x W/4."""
    x = pixels_to_tensor(pixels)
    return encoder(x.unsqueeze(0))[0]


def pixels_to_tensor(pixels) -> torch.Tensor:
    x = torch.as_tensor(pixels)
    if x.dtype == torch.uint8:
        x = x.float() / 255.0
    if x.ndim == 3 and x.shape[-1] == 3:
        x = x.permute(2, 0, 1)
    return x.contiguous()
