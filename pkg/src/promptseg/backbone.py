"""Miniature hierarchical image encoder with an FPN neck.

Patch embedding at stride 4, two transformer stages at strides 8 and 16, and
1x1 lateral convolutions with a top-down pathway producing the pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractError, InputError
from .layers import MLP, init_weights, sine_position_encoding

FPN_STRIDES = (4, 8, 16)
PIXEL_MEAN, PIXEL_STD = 0.5, 0.25


@dataclass
class ImageEmbedding:
    top: torch.Tensor  # B×C×S/16×S/16
    fpn_levels: list[torch.Tensor]  # strides 4, 8, 16
    input_resolution: tuple[int, int]


class SelfAttention(nn.Module):
    """Attention with the two LoRA sites ``qkv`` and ``out``."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * (q.shape[-1] ** -0.5)
        x = (attn.softmax(-1) @ v).transpose(1, 2).reshape(b, n, c)
        return self.out(x)


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, mlp_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Backbone(nn.Module):
    def __init__(self, embed_dim: int, num_heads: int, mlp_dim: int, blocks_per_stage: int = 2):
        super().__init__()
        c = embed_dim
        self.embed_dim = c
        self.patch_embed = nn.Conv2d(3, c, kernel_size=4, stride=4)
        self.stages = nn.ModuleList(
            nn.ModuleList(Block(c, num_heads, mlp_dim) for _ in range(blocks_per_stage)) for _ in range(2)
        )
        self.laterals = nn.ModuleList(nn.Conv2d(c, c, 1) for _ in FPN_STRIDES)
        init_weights(self)

    @property
    def blocks(self) -> list[Block]:
        return [blk for stage in self.stages for blk in stage]

    def attention_sites(self) -> list[tuple[int, str, nn.Module]]:
        """(block index, site name, owning attention module) for every LoRA site."""
        sites = []
        for i, blk in enumerate(self.blocks):
            sites.append((i, "qkv", blk.attn))
            sites.append((i, "out", blk.attn))
        return sites

    def _run_stage(self, x: torch.Tensor, stage: nn.ModuleList) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2) + sine_position_encoding(h, w, c, x.dtype).to(x.device)
        for blk in stage:
            tokens = blk(tokens)
        return tokens.transpose(1, 2).reshape(b, c, h, w)

    def forward(self, image: torch.Tensor) -> ImageEmbedding:
        return encode_image(image, self)


def encode_image(image: torch.Tensor, model: Backbone) -> ImageEmbedding:
    """Encode a 3×S×S (or B×3×S×S) image in [0, 1] into the feature pyramid."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4 or image.shape[1] != 3:
        raise ContractError(f"expected B×3×S×S image, got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h % 16 or w % 16:
        raise ConfigError(f"image size {h}x{w} not divisible by 16")
    if not torch.isfinite(image).all():
        raise InputError("image contains non-finite values")

    f4 = model.patch_embed((image - PIXEL_MEAN) / PIXEL_STD)
    f8 = model._run_stage(F.avg_pool2d(f4, 2), model.stages[0])
    f16 = model._run_stage(F.avg_pool2d(f8, 2), model.stages[1])

    p16 = model.laterals[2](f16)
    p8 = model.laterals[1](f8) + F.interpolate(p16, scale_factor=2, mode="nearest")
    p4 = model.laterals[0](f4) + F.interpolate(p8, scale_factor=2, mode="nearest")
    return ImageEmbedding(top=p16, fpn_levels=[p4, p8, p16], input_resolution=(h, w))
