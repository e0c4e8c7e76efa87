"""Self-prompt generator: learnable queries read the image embedding through a
two-way transformer and emit complementary dense/sparse prompts.

Query layout (2 * (K + K_m) rows)::

    [ pos sparse (K) | pos mask (K_m) | neg sparse (K) | neg mask (K_m) ]

The positive mask-token states double as the propagated output tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, InputError
from .layers import MLP, TwoWayTransformer, init_weights, sine_position_encoding


@dataclass
class SelfPrompts:
    p_pos: torch.Tensor  # B×1×4H×4W logits
    p_neg: torch.Tensor
    s_pos: torch.Tensor  # B×K×C
    s_neg: torch.Tensor
    t_prop: torch.Tensor  # B×K_m×C


class DenseHead(nn.Module):
    """Upsample keys 4x (bilinear 2x, 3x3 conv, bilinear 2x) and score each pixel
    against a per-token projection."""

    def __init__(self, dim: int):
        super().__init__()
        self.up_dim = dim
        self.conv = nn.Conv2d(dim, self.up_dim, 3, padding=1, padding_mode="replicate")

    def upscale(self, keys: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(keys, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.gelu(self.conv(x))
        return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)

    def forward(self, token_proj: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        """``token_proj`` B×up_dim, ``features`` B×up_dim×4H×4W -> B×1×4H×4W."""
        return torch.einsum("bc,bchw->bhw", token_proj, features).unsqueeze(1)


def dense_head(head: DenseHead, hyper: nn.Module, mask_token_state: torch.Tensor,
               keys: torch.Tensor) -> torch.Tensor:
    return head(hyper(mask_token_state), head.upscale(keys))


class SelfPromptGenerator(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_dim: int, num_sparse: int, num_mask_tokens: int,
                 depth: int = 2):
        super().__init__()
        self.dim = dim
        self.num_sparse = num_sparse
        self.num_mask_tokens = num_mask_tokens
        n = 2 * (num_sparse + num_mask_tokens)
        self.queries = nn.Parameter(torch.randn(n, dim) * 0.02)
        self.transformer = TwoWayTransformer(dim, num_heads, mlp_dim, depth)
        self.dense_head = DenseHead(dim)
        self.hyper_pos = MLP(dim, dim, self.dense_head.up_dim, 3)
        self.hyper_neg = MLP(dim, dim, self.dense_head.up_dim, 3)
        self.sparse_pos = nn.Linear(dim, dim)
        self.sparse_neg = nn.Linear(dim, dim)
        init_weights(self)

    @property
    def num_queries(self) -> int:
        return self.queries.shape[0]

    def forward(self, embedding: torch.Tensor) -> SelfPrompts:
        return generate_prompts(embedding, self.queries, self)


def generate_prompts(embedding: torch.Tensor, queries: torch.Tensor, gen: SelfPromptGenerator) -> SelfPrompts:
    """Run the generator on the top-level embedding ``B×C×H×W``."""
    if embedding.dim() == 3:
        embedding = embedding.unsqueeze(0)
    b, c, h, w = embedding.shape
    k, km = gen.num_sparse, gen.num_mask_tokens
    if c != gen.dim:
        raise ContractError(f"embedding has {c} channels, generator expects {gen.dim}")
    if queries.shape != (2 * (k + km), gen.dim):
        raise ContractError(f"queries shape {tuple(queries.shape)} != {(2 * (k + km), gen.dim)}")
    if not torch.isfinite(embedding).all():
        raise InputError("image embedding contains non-finite values")

    pe = sine_position_encoding(h, w, c, embedding.dtype).to(embedding.device)
    tokens = queries.unsqueeze(0).expand(b, -1, -1)
    hs, keys = gen.transformer(embedding, pe, tokens)
    keys = keys.transpose(1, 2).reshape(b, c, h, w)

    pos, neg = hs[:, : k + km], hs[:, k + km:]
    features = gen.dense_head.upscale(keys)
    p_pos = gen.dense_head(gen.hyper_pos(pos[:, k]), features)
    p_neg = gen.dense_head(gen.hyper_neg(neg[:, k]), features)
    return SelfPrompts(
        p_pos=p_pos,
        p_neg=p_neg,
        s_pos=gen.sparse_pos(pos[:, :k]),
        s_neg=gen.sparse_neg(neg[:, :k]),
        t_prop=pos[:, k:],
    )
