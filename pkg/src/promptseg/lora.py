"""Low-rank adapters on backbone attention projections, and parameter partitioning."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .config import LORA_STRATEGIES
from .errors import ConfigError, ContractError, StateError


class LoraAdapter(nn.Module):
    """Additive low-rank update ``(alpha / r) * B @ A``; B starts at zero."""

    def __init__(self, d_in: int, d_out: int, rank: int, alpha: float | None = None,
                 site: tuple[int, str] | None = None, generator: torch.Generator | None = None):
        super().__init__()
        if rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
        self.rank = rank
        self.alpha = float(rank if alpha is None else alpha)
        if not self.alpha > 0:
            raise ConfigError("LoRA alpha must be positive")
        self.site = site
        self.A = nn.Parameter(torch.randn(rank, d_in, generator=generator) / rank)
        self.B = nn.Parameter(torch.zeros(d_out, rank))

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta_weight(self) -> torch.Tensor:
        return self.scale * (self.B @ self.A)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.scale * ((x @ self.A.t()) @ self.B.t())


class LoRALinear(nn.Module):
    """A frozen ``nn.Linear`` plus an adapter."""

    def __init__(self, base: nn.Linear, adapter: LoraAdapter):
        super().__init__()
        _check_shapes(base.weight, adapter)
        self.base = base
        self.adapter = adapter

    @property
    def weight(self) -> torch.Tensor:
        return self.base.weight

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.adapter(x)


def _check_shapes(weight: torch.Tensor, adapter: LoraAdapter) -> None:
    d_out, d_in = weight.shape
    if adapter.A.shape[1] != d_in or adapter.B.shape[0] != d_out:
        raise ContractError(
            f"adapter A{tuple(adapter.A.shape)} B{tuple(adapter.B.shape)} does not fit weight {tuple(weight.shape)}"
        )


def lora_forward(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None,
                 adapter: LoraAdapter) -> torch.Tensor:
    """``W x + b + (alpha/r) B A x`` without merging."""
    _check_shapes(weight, adapter)
    if x.shape[-1] != weight.shape[1]:
        raise ContractError(f"input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    y = x @ weight.t()
    if bias is not None:
        y = y + bias
    return y + adapter(x)


def merge_lora(weight: torch.Tensor, adapter: LoraAdapter) -> torch.Tensor:
    _check_shapes(weight, adapter)
    return weight + adapter.delta_weight()


def strategy_sites(strategy: str, num_blocks: int) -> list[tuple[int, str]]:
    """Sites (block index, projection) an injection strategy adapts."""
    half = num_blocks // 2
    both = ("qkv", "out")
    if strategy == "full":
        return [(i, s) for i in range(num_blocks) for s in both]
    if strategy == "qkv_only":
        return [(i, "qkv") for i in range(num_blocks)]
    if strategy == "deep":
        return [(i, s) for i in range(half, num_blocks) for s in both]
    if strategy == "shallow":
        return [(i, s) for i in range(half) for s in both]
    if strategy == "sparse50":
        return [(i, s) for i in range(0, num_blocks, 2) for s in both]
    raise ConfigError(f"unknown LoRA strategy {strategy!r}; expected one of {LORA_STRATEGIES}")


def inject_lora(model: nn.Module, strategy: str, rank: int, alpha: float | None = None,
                seed: int = 0) -> int:
    """Wrap backbone attention projections with adapters; returns the adapter count.

    ``model`` is a backbone or any module with a ``backbone`` attribute.
    """
    backbone = getattr(model, "backbone", model)
    sites = strategy_sites(strategy, len(backbone.blocks))
    if any(isinstance(m, LoRALinear) for m in backbone.modules()):
        raise StateError("LoRA adapters already attached")
    gen = torch.Generator().manual_seed(seed)
    for block_idx, site in sites:
        attn = backbone.blocks[block_idx].attn
        base = getattr(attn, site)
        adapter = LoraAdapter(base.in_features, base.out_features, rank, alpha, (block_idx, site), gen)
        adapter.to(dtype=base.weight.dtype, device=base.weight.device)
        setattr(attn, site, LoRALinear(base, adapter))
    return len(sites)


def adapters(model: nn.Module) -> list[LoraAdapter]:
    return [m for m in model.modules() if isinstance(m, LoraAdapter)]


GROUPS = ("backbone_lora", "backbone", "spg", "prompt_encoder", "psg", "decoder", "lateral", "refine")


def param_group(name: str) -> str:
    head = name.split(".", 1)[0]
    if head == "backbone":
        return "backbone_lora" if ".adapter." in name else "backbone"
    if head not in GROUPS:
        raise ContractError(f"parameter {name!r} belongs to no known group")
    return head


@dataclass
class ParamPartition:
    trainable: dict[str, nn.Parameter] = field(default_factory=dict)
    frozen: dict[str, nn.Parameter] = field(default_factory=dict)
    trainable_counts: dict[str, int] = field(default_factory=dict)
    frozen_counts: dict[str, int] = field(default_factory=dict)

    @property
    def num_trainable(self) -> int:
        return sum(self.trainable_counts.values())

    @property
    def num_frozen(self) -> int:
        return sum(self.frozen_counts.values())


def partition_params(model: nn.Module) -> ParamPartition:
    part = ParamPartition()
    for name, p in model.named_parameters():
        group = param_group(name)
        if p.requires_grad:
            part.trainable[name] = p
            part.trainable_counts[group] = part.trainable_counts.get(group, 0) + p.numel()
        else:
            part.frozen[name] = p
            part.frozen_counts[group] = part.frozen_counts.get(group, 0) + p.numel()
    return part
