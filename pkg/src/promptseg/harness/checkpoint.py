"""Checkpoint container: named tensors, config snapshot, provenance, optimizer state."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..config import RunConfig
from ..model import PromptSegmenter


@dataclass
class Checkpoint:
    state: dict[str, torch.Tensor]
    config: dict  # flat RunConfig snapshot
    step: int
    seed: int
    provenance: dict[str, str]
    frozen_hash: str
    optimizer: dict | None = None
    meta: dict = field(default_factory=dict)

    def run_config(self) -> RunConfig:
        return RunConfig.from_flat(self.config).validate()

    def build_model(self) -> PromptSegmenter:
        model = PromptSegmenter(self.run_config().model)
        model.load_state_dict(self.state)
        if frozen_hash(model) != self.frozen_hash:
            raise ValueError("checkpoint frozen-parameter hash does not match its tensors")
        return model

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.__dict__, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls(**torch.load(path, map_location="cpu", weights_only=False))


def frozen_hash(model: PromptSegmenter) -> str:
    """SHA-256 over the raw bytes of every frozen parameter, in name order."""
    h = hashlib.sha256()
    for name, p in sorted(model.frozen_state().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def make_checkpoint(model: PromptSegmenter, cfg: RunConfig, step: int,
                    optimizer: torch.optim.Optimizer | None = None) -> Checkpoint:
    return Checkpoint(
        state={k: v.detach().clone() for k, v in model.state_dict().items()},
        config=cfg.to_flat(),
        step=step,
        seed=cfg.model.seed,
        provenance=model.provenance(),
        frozen_hash=frozen_hash(model),
        optimizer=optimizer.state_dict() if optimizer is not None else None,
    )
