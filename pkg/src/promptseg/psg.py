"""Prompt-space gating.

The negative prompt embedding predicts a per-pixel gate ``G``; ``1 - G``
suppresses the positive embedding, a fusion block reads the suppressed
embedding together with features of the negative one, and its output is
added back onto the *unsuppressed* positive embedding.

Alternative operators (subtraction, concatenation, cross-attention, residual
anchored on the suppressed embedding, no interaction) are provided for
ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import PSG_VARIANTS
from .errors import ConfigError, ContractError
from .layers import LayerNorm2d, init_weights


@dataclass
class GatedCondition:
    gate: torch.Tensor  # B×1×H×W in (0, 1)
    z_suppressed: torch.Tensor  # B×C×H×W
    z_out: torch.Tensor  # B×C×H×W
    energy_delta: torch.Tensor  # B×1×H×W, per-pixel L2 norm of z_out - z_pos


def suppress(z_pos: torch.Tensor, gate_logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(G, Z+ * (1 - G))`` with ``G = sigmoid(gate_logits)`` broadcast over channels."""
    gate = torch.sigmoid(gate_logits)
    # sigmoid(-x) == 1 - sigmoid(x) without cancellation when the gate saturates
    return gate, z_pos * torch.sigmoid(-gate_logits)


class PromptSpaceGate(nn.Module):
    def __init__(self, dim: int, variant: str = "asym_gate"):
        super().__init__()
        if variant not in PSG_VARIANTS:
            raise ConfigError(f"unknown PSG variant {variant!r}; expected one of {PSG_VARIANTS}")
        self.variant = variant
        self.dim = dim
        if variant in ("asym_gate", "anchor_suppressed"):
            self.phi = nn.Sequential(
                nn.Conv2d(dim, dim // 4, 3, padding=1),
                nn.GELU(),
                nn.Conv2d(dim // 4, 1, 1),
            )
            self.phi_feat = nn.Sequential(nn.Conv2d(dim, dim, 3, padding=1), nn.GELU())
            self.psi = nn.Sequential(
                nn.Conv2d(2 * dim, dim, 3, padding=1),
                LayerNorm2d(dim),
                nn.GELU(),
                nn.Conv2d(dim, dim, 1),
            )
        elif variant == "concatenation":
            self.fuse = nn.Conv2d(2 * dim, dim, 1)
        elif variant == "cross_attn":
            self.q_proj = nn.Linear(dim, dim)
            self.k_proj = nn.Linear(dim, dim)
            self.v_proj = nn.Linear(dim, dim)
            self.out_proj = nn.Linear(dim, dim)
        init_weights(self)
        if variant in ("asym_gate", "anchor_suppressed"):
            nn.init.zeros_(self.psi[-1].weight)
            nn.init.zeros_(self.psi[-1].bias)
        elif variant == "cross_attn":
            nn.init.zeros_(self.out_proj.weight)
            nn.init.zeros_(self.out_proj.bias)

    def forward(self, z_pos: torch.Tensor, z_neg: torch.Tensor) -> GatedCondition:
        return psg_forward(z_pos, z_neg, self)


def psg_forward(z_pos: torch.Tensor, z_neg: torch.Tensor, psg: PromptSpaceGate) -> GatedCondition:
    if z_pos.shape != z_neg.shape:
        raise ContractError(f"Z+ {tuple(z_pos.shape)} and Z- {tuple(z_neg.shape)} differ")
    if z_pos.dim() != 4 or z_pos.shape[1] != psg.dim:
        raise ContractError(f"expected B×{psg.dim}×H×W, got {tuple(z_pos.shape)}")
    variant = psg.variant
    half = z_pos.new_full((z_pos.shape[0], 1, *z_pos.shape[2:]), 0.5)

    if variant in ("asym_gate", "anchor_suppressed"):
        gate, z_sup = suppress(z_pos, psg.phi(z_neg))
        correction = psg.psi(torch.cat([z_sup, psg.phi_feat(z_neg)], dim=1))
        anchor = z_pos if variant == "asym_gate" else z_sup
        z_out = correction + anchor
    elif variant == "none":
        gate, z_sup, z_out = half, z_pos, z_pos
    elif variant == "subtraction":
        gate, z_sup, z_out = half, z_pos, z_pos - z_neg
    elif variant == "concatenation":
        gate, z_sup = half, z_pos
        z_out = psg.fuse(torch.cat([z_pos, z_neg], dim=1))
    elif variant == "cross_attn":
        gate, z_sup = half, z_pos
        b, c, h, w = z_pos.shape
        qp = z_pos.flatten(2).transpose(1, 2)
        kn = z_neg.flatten(2).transpose(1, 2)
        q, k, v = psg.q_proj(qp), psg.k_proj(kn), psg.v_proj(kn)
        attn = (q @ k.transpose(1, 2) / math.sqrt(c)).softmax(-1)
        out = psg.out_proj(attn @ v)
        z_out = z_pos + out.transpose(1, 2).reshape(b, c, h, w)
    else:  # pragma: no cover - guarded in the constructor
        raise ConfigError(f"unknown PSG variant {variant!r}")

    energy = torch.linalg.vector_norm(z_out - z_pos, dim=1, keepdim=True)
    return GatedCondition(gate=gate, z_suppressed=z_sup, z_out=z_out, energy_delta=energy)
