"""Frozen prompt encoder: dense logit maps and sparse tokens to prompt embeddings.

All parameters are created with ``requires_grad=False`` and must never change.
Gradients still flow through to the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ContractError, InputError
from .layers import LayerNorm2d

POLARITIES = {"pos": 0, "neg": 1}


@dataclass
class EncodedPrompts:
    z_pos: torch.Tensor  # B×C×H×W
    z_neg: torch.Tensor
    u_pos: torch.Tensor  # B×K×C
    u_neg: torch.Tensor
    null_dense: torch.Tensor  # 1×C×H×W


class PromptEncoder(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mask_downscaling = nn.Sequential(
            nn.Conv2d(1, dim // 4, kernel_size=2, stride=2),
            LayerNorm2d(dim // 4),
            nn.GELU(),
            nn.Conv2d(dim // 4, dim // 2, kernel_size=2, stride=2),
            LayerNorm2d(dim // 2),
            nn.GELU(),
            nn.Conv2d(dim // 2, dim, kernel_size=1),
        )
        self.point_embeddings = nn.Embedding(len(POLARITIES), dim)
        nn.init.normal_(self.point_embeddings.weight, std=1.0)
        self.requires_grad_(False)
        self._null_cache: dict = {}

    def encode_dense(self, p: torch.Tensor) -> torch.Tensor:
        """B×1×4H×4W logits (continuous, never binarised) -> B×C×H×W."""
        if p.dim() == 3:
            p = p.unsqueeze(0)
        if p.dim() != 4 or p.shape[1] != 1 or p.shape[-1] % 4 or p.shape[-2] % 4:
            raise ContractError(f"dense prompt must be B×1×4H×4W, got {tuple(p.shape)}")
        if not torch.isfinite(p).all():
            raise InputError("dense prompt contains non-finite values")
        return self.mask_downscaling(p)

    def null_dense(self, h: int, w: int, like: torch.Tensor) -> torch.Tensor:
        """Embedding of the all-zero logit map at embedding size h×w, cached."""
        key = (h, w, like.dtype, like.device)
        cached = self._null_cache.get(key)
        if cached is None:
            with torch.no_grad():
                zeros = torch.zeros(1, 1, 4 * h, 4 * w, dtype=like.dtype, device=like.device)
                cached = self.encode_dense(zeros)
            self._null_cache[key] = cached
        return cached

    def encode_sparse(self, s: torch.Tensor, polarity: str) -> torch.Tensor:
        """Add the frozen point-type embedding of ``polarity`` to every token row."""
        if polarity not in POLARITIES:
            raise ContractError(f"unknown polarity {polarity!r}")
        if s.shape[-1] != self.dim:
            raise ContractError(f"sparse tokens have dim {s.shape[-1]}, expected {self.dim}")
        if not torch.isfinite(s).all():
            raise InputError("sparse tokens contain non-finite values")
        return s + self.point_embeddings.weight[POLARITIES[polarity]]

    def _apply(self, fn, *args, **kwargs):
        self._null_cache = {}
        return super()._apply(fn, *args, **kwargs)

    def forward(self, p_pos, p_neg, s_pos, s_neg) -> EncodedPrompts:
        z_pos = self.encode_dense(p_pos)
        z_neg = self.encode_dense(p_neg)
        h, w = z_pos.shape[-2:]
        return EncodedPrompts(
            z_pos=z_pos,
            z_neg=z_neg,
            u_pos=self.encode_sparse(s_pos, "pos"),
            u_neg=self.encode_sparse(s_neg, "neg"),
            null_dense=self.null_dense(h, w, z_pos),
        )


def empty_sparse(batch: int, dim: int, like: torch.Tensor) -> torch.Tensor:
    """Zero-row sparse token block used by the null-prompt protocol."""
    return like.new_zeros(batch, 0, dim)
