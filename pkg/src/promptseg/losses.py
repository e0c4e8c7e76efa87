"""Training objectives.

All reductions are means over every element (batch and pixels together),
except the soft-IoU term, which is computed per sample and then averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError, InputError

IOU_SMOOTH = 1e-8


def _check_binary(y: torch.Tensor) -> None:
    if not bool(((y == 0) | (y == 1)).all()):
        raise InputError("target mask must be binary {0, 1}")


def _as_map(t: torch.Tensor) -> torch.Tensor:
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 3:
        return t.unsqueeze(0)
    return t


def bce_logits(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean BCE in log-sum-exp form: ``max(x, 0) - x*y + log(1 + exp(-|x|))``."""
    return F.binary_cross_entropy_with_logits(logits, target, reduction="mean")


def resize_target(y: torch.Tensor, size) -> torch.Tensor:
    """Nearest-neighbour resize, which keeps the target binary."""
    y = _as_map(y)
    if tuple(y.shape[-2:]) == tuple(size):
        return y
    return F.interpolate(y, size=size, mode="nearest")


def spg_loss(p_pos: torch.Tensor, p_neg: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """``BCE(sigmoid(P+), Y) + BCE(sigmoid(P-), 1 - Y)`` at the prompt resolution."""
    p_pos, p_neg = _as_map(p_pos), _as_map(p_neg)
    if p_pos.shape != p_neg.shape:
        raise ContractError(f"P+ {tuple(p_pos.shape)} and P- {tuple(p_neg.shape)} differ")
    y = _as_map(y).to(p_pos.dtype)
    _check_binary(y)
    y = resize_target(y, p_pos.shape[-2:])
    return bce_logits(p_pos, y) + bce_logits(p_neg, 1 - y)


def mask_loss(logits: torch.Tensor, y: torch.Tensor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """BCE + (1 - soft IoU) + L1, with logits bilinearly resized to the target."""
    logits = _as_map(logits)
    y = _as_map(y).to(logits.dtype)
    _check_binary(y)
    if logits.shape[-2:] != y.shape[-2:]:
        logits = F.interpolate(logits, size=y.shape[-2:], mode="bilinear", align_corners=False)
    if logits.shape != y.shape:
        raise ContractError(f"prediction {tuple(logits.shape)} and target {tuple(y.shape)} differ")
    p = torch.sigmoid(logits)
    bce = bce_logits(logits, y)
    inter = (p * y).flatten(1).sum(1)
    union = p.flatten(1).sum(1) + y.flatten(1).sum(1) - inter
    iou = (1 - (inter + IOU_SMOOTH) / (union + IOU_SMOOTH)).mean()
    l1 = (p - y).abs().mean()
    return bce + iou + l1, {"bce": bce, "iou": iou, "l1": l1}


@dataclass
class LossBreakdown:
    l_spg: torch.Tensor
    l_mask_coarse: torch.Tensor
    l_mask_refined: torch.Tensor
    l_lateral: torch.Tensor
    total: torch.Tensor
    components: dict[str, dict[str, torch.Tensor]] = field(default_factory=dict)

    def as_floats(self) -> dict:
        def f(t):
            return float(t.detach()) if torch.is_tensor(t) else float(t)

        out = {
            "l_spg": f(self.l_spg),
            "l_mask_coarse": f(self.l_mask_coarse),
            "l_mask_refined": f(self.l_mask_refined),
            "l_lateral": f(self.l_lateral),
            "total": f(self.total),
        }
        for name, parts in self.components.items():
            for key, value in parts.items():
                out[f"{name}.{key}"] = f(value)
        return out


def total_loss(l_spg, l_mask_coarse, l_mask_refined, lambda_spg: float = 1.0, lambda_c: float = 1.0,
               lambda_r: float = 1.0, refine_enabled: bool = True, l_lateral=None,
               lambda_lat: float = 0.0, components=None) -> LossBreakdown:
    """Weighted sum; the refined term is dropped entirely when ``lambda_r == 0``."""
    if lambda_r > 0 and not refine_enabled:
        raise ConfigError("lambda_r > 0 requires the refinement head")
    zero = torch.zeros((), dtype=torch.as_tensor(l_mask_coarse).dtype)
    l_spg = torch.as_tensor(l_spg)
    l_mask_coarse = torch.as_tensor(l_mask_coarse)
    l_mask_refined = zero if l_mask_refined is None else torch.as_tensor(l_mask_refined)
    l_lateral = zero if l_lateral is None else torch.as_tensor(l_lateral)
    total = lambda_spg * l_spg + lambda_c * l_mask_coarse
    if lambda_r > 0:
        total = total + lambda_r * l_mask_refined
    if lambda_lat > 0:
        total = total + lambda_lat * l_lateral
    return LossBreakdown(l_spg, l_mask_coarse, l_mask_refined, l_lateral, total, components or {})
