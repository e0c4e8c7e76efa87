"""Task-specific mask decoder plus the two optional heads (lateral gate, refinement)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError, StateError
from .layers import MLP, LayerNorm2d, TwoWayTransformer, init_weights, sine_position_encoding


@dataclass
class DecoderOutput:
    coarse: torch.Tensor  # B×1×4H×4W logits (M_c)
    per_token_masks: torch.Tensor  # B×K_m×4H×4W
    iou_pred: torch.Tensor  # B×K_m


class MaskDecoder(nn.Module):
    """Decodes ``E + Z`` with tokens ``[T_iou; mask tokens; sparse tokens]``.

    ``mask_tokens`` may be the propagated tokens from the prompt generator or,
    when omitted, the decoder's own learnable mask tokens. When pyramid
    levels at strides 4 and 8 are supplied, they are projected and added
    inside the upscaling path (high-resolution skips).
    """

    def __init__(self, dim: int, num_heads: int, mlp_dim: int, num_mask_tokens: int, depth: int = 2):
        super().__init__()
        self.dim = dim
        self.num_mask_tokens = num_mask_tokens
        self.iou_token = nn.Parameter(torch.randn(1, dim) * 0.02)
        self.mask_tokens = nn.Parameter(torch.randn(num_mask_tokens, dim) * 0.02)
        self.transformer = TwoWayTransformer(dim, num_heads, mlp_dim, depth)
        up = dim // 4
        self.output_upscaling = nn.Sequential(
            nn.ConvTranspose2d(dim, up, 2, stride=2),
            LayerNorm2d(up),
            nn.GELU(),
            nn.ConvTranspose2d(up, up, 2, stride=2),
            nn.GELU(),
        )
        self.conv_s0 = nn.Conv2d(dim, up, 1)  # stride-4 skip
        self.conv_s1 = nn.Conv2d(dim, up, 1)  # stride-8 skip
        self.hypernetworks = nn.ModuleList(MLP(dim, dim, up, 3) for _ in range(num_mask_tokens))
        self.iou_head = MLP(dim, dim, num_mask_tokens, 3)
        init_weights(self)

    def token_sequence(self, sparse: torch.Tensor, mask_tokens: torch.Tensor | None) -> torch.Tensor:
        b = sparse.shape[0]
        if mask_tokens is None:
            mask_tokens = self.mask_tokens.unsqueeze(0).expand(b, -1, -1)
        if mask_tokens.shape[1:] != (self.num_mask_tokens, self.dim):
            raise ContractError(
                f"expected {self.num_mask_tokens} mask tokens of dim {self.dim}, got {tuple(mask_tokens.shape)}"
            )
        if sparse.shape[-1] != self.dim:
            raise ContractError(f"sparse tokens have dim {sparse.shape[-1]}, expected {self.dim}")
        iou = self.iou_token.unsqueeze(0).expand(b, -1, -1)
        return torch.cat([iou, mask_tokens, sparse], dim=1)

    def forward(self, image: torch.Tensor, dense: torch.Tensor, sparse: torch.Tensor,
                mask_tokens: torch.Tensor | None = None, high_res=None) -> DecoderOutput:
        return decode_coarse(self, image, dense, sparse, mask_tokens, high_res)


def upscale(dec: MaskDecoder, x: torch.Tensor, high_res=None) -> torch.Tensor:
    dc1, ln1, act1, dc2, act2 = dec.output_upscaling
    if high_res is None:
        return act2(dc2(act1(ln1(dc1(x)))))
    f4, f8 = high_res
    x = act1(ln1(dc1(x) + dec.conv_s1(f8)))
    return act2(dc2(x) + dec.conv_s0(f4))


def decode_coarse(dec: MaskDecoder, image: torch.Tensor, dense: torch.Tensor, sparse: torch.Tensor,
                  mask_tokens: torch.Tensor | None = None, high_res=None) -> DecoderOutput:
    """``image`` and ``dense`` B×C×H×W; ``sparse`` B×n×C with n = 2K (or 0 for null prompts).

    ``high_res`` is an optional ``(stride-4, stride-8)`` pair of B×C feature maps.
    """
    if dense.shape[0] == 1 and image.shape[0] > 1:
        dense = dense.expand(image.shape[0], -1, -1, -1)
    if image.shape != dense.shape:
        raise ContractError(f"image {tuple(image.shape)} and dense prompt {tuple(dense.shape)} differ")
    b, c, h, w = image.shape
    tokens = dec.token_sequence(sparse, mask_tokens)
    pe = sine_position_encoding(h, w, c, image.dtype).to(image.device)
    hs, keys = dec.transformer(image + dense, pe, tokens)
    iou_out = hs[:, 0]
    mask_out = hs[:, 1: 1 + dec.num_mask_tokens]

    upscaled = upscale(dec, keys.transpose(1, 2).reshape(b, c, h, w), high_res)
    hyper = torch.stack([mlp(mask_out[:, i]) for i, mlp in enumerate(dec.hypernetworks)], dim=1)
    masks = torch.einsum("bkc,bchw->bkhw", hyper, upscaled)
    return DecoderOutput(coarse=masks[:, :1], per_token_masks=masks, iou_pred=dec.iou_head(iou_out))


def lateral_gate(fpn_levels: list[torch.Tensor], coarse: torch.Tensor) -> list[torch.Tensor]:
    """Scale every pyramid level by sigmoid of the *detached* coarse logits."""
    soft = torch.sigmoid(coarse.detach())
    gated = []
    for level in fpn_levels:
        g = soft if soft.shape[-2:] == level.shape[-2:] else F.interpolate(
            soft, size=level.shape[-2:], mode="bilinear", align_corners=False)
        gated.append(level * g)
    return gated


class LateralInhibition(nn.Module):
    """Gates the pyramid with the coarse mask and scores the finest gated level.

    The score map feeds an auxiliary BCE term; the gated level also feeds the
    refinement head when it is enabled.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.aux_head = nn.Conv2d(dim, 1, 1)
        init_weights(self)

    def forward(self, fpn_levels: list[torch.Tensor], coarse: torch.Tensor):
        gated = lateral_gate(fpn_levels, coarse)
        return gated, self.aux_head(gated[0])


class RefinementHead(nn.Module):
    """Residual correction ``M = M_c + R([M_c, Z, F])`` with a zero-initialised output conv."""

    def __init__(self, dim: int):
        super().__init__()
        self.conv = nn.Conv2d(1 + 2 * dim, dim // 4, 3, padding=1)
        self.out = nn.Conv2d(dim // 4, 1, 1)
        init_weights(self)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, coarse, dense, features):
        return refine(self, coarse, dense, features)


def refine(head: RefinementHead | None, coarse: torch.Tensor, dense: torch.Tensor,
           features: torch.Tensor) -> torch.Tensor:
    if head is None:
        raise StateError("refinement head is disabled")
    size = coarse.shape[-2:]
    if dense.shape[0] == 1 and coarse.shape[0] > 1:
        dense = dense.expand(coarse.shape[0], -1, -1, -1)
    dense = F.interpolate(dense, size=size, mode="bilinear", align_corners=False)
    if features.shape[-2:] != size:
        features = F.interpolate(features, size=size, mode="bilinear", align_corners=False)
    x = torch.cat([coarse, dense, features], dim=1)
    return coarse + head.out(F.gelu(head.conv(x)))
