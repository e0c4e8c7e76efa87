"""Training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..config import RunConfig
from ..datagen import Sample, SynthConfig, load_dataset, synth_dataset
from ..errors import FrozenViolation
from ..lora import partition_params
from ..model import PromptSegmenter
from .checkpoint import Checkpoint, frozen_hash, make_checkpoint

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: PromptSegmenter
    checkpoint: Checkpoint
    history: list[dict] = field(default_factory=list)
    checkpoint_path: Path | None = None
    log_path: Path | None = None


def synth_config(cfg: RunConfig) -> SynthConfig:
    d = cfg.data
    return SynthConfig(resolution=cfg.model.image_size, delta=d.delta, coverage_min=d.coverage_min,
                       coverage_max=d.coverage_max, seed=d.seed)


def build_datasets(cfg: RunConfig) -> tuple[list[Sample], list[Sample]]:
    """Train/test samples; synthetic splits use disjoint index ranges."""
    size = cfg.model.image_size
    if cfg.data.train == "synthetic":
        train = synth_dataset(synth_config(cfg), cfg.data.n_train)
    else:
        train = load_dataset(cfg.data.train, size)
    if cfg.data.test == "synthetic":
        test = synth_dataset(synth_config(cfg), cfg.data.n_test, start=cfg.data.n_train)
    else:
        test = load_dataset(cfg.data.test, size)
    return train, test


def stack(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(np.stack([s.image for s in samples]))
    masks = torch.from_numpy(np.stack([s.mask for s in samples]))
    return images, masks


def make_optimizer(model: PromptSegmenter, cfg: RunConfig) -> torch.optim.Optimizer:
    o = cfg.optim
    params = list(partition_params(model).trainable.values())
    return torch.optim.AdamW(params, lr=o.lr, weight_decay=o.weight_decay, betas=(o.beta1, o.beta2),
                             foreach=True)


@torch.no_grad()
def dataset_loss(model: PromptSegmenter, samples: list[Sample], batch_size: int = 8) -> float:
    """Mean total loss over ``samples`` (model switched to eval mode temporarily)."""
    was_training = model.training
    model.eval()
    images, masks = stack(samples)
    total, n = 0.0, 0
    for i in range(0, len(samples), batch_size):
        x, y = images[i: i + batch_size], masks[i: i + batch_size]
        total += float(model.losses(model(x), y).total) * len(x)
        n += len(x)
    model.train(was_training)
    return total / n


def run_train(cfg: RunConfig, train_samples: list[Sample] | None = None,
              out_dir: str | Path | None = None) -> TrainResult:
    """Train from scratch; writes ``train_log.jsonl`` and ``checkpoint.pt`` when ``out_dir`` is set."""
    cfg.validate()
    if train_samples is None:
        train_samples, _ = build_datasets(cfg)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(cfg.dumps())
        log_fh = open(out / "train_log.jsonl", "w")

    model = PromptSegmenter(cfg.model)
    model.train()
    optimizer = make_optimizer(model, cfg)
    params = [p for group in optimizer.param_groups for p in group["params"]]
    reference_hash = frozen_hash(model)
    images, masks = stack(train_samples)
    gen = torch.Generator().manual_seed(cfg.model.seed)
    bs = cfg.train.batch_size
    max_steps = cfg.train.max_steps or math.inf
    history: list[dict] = []
    step = 0
    last_good = make_checkpoint(model, cfg, step, optimizer)
    try:
        for epoch in range(cfg.train.epochs):
            order = torch.randperm(len(train_samples), generator=gen)
            for i in range(0, len(order), bs):
                if step >= max_steps:
                    break
                idx = order[i: i + bs]
                pred = model(images[idx])
                losses = model.losses(pred, masks[idx])
                if not torch.isfinite(losses.total):
                    path = last_good.save(out / "last_good.pt") if out is not None else None
                    raise FloatingPointError(f"non-finite loss at step {step}; last good checkpoint: {path}")
                optimizer.zero_grad(set_to_none=True)
                losses.total.backward()
                if cfg.optim.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(params, cfg.optim.grad_clip, foreach=True)
                optimizer.step()
                step += 1
                row = {"step": step, "epoch": epoch, **losses.as_floats()}
                history.append(row)
                if log_fh is not None:
                    log_fh.write(json.dumps(row) + "\n")
                if step % 50 == 0:
                    log.info("step %d total %.4f", step, row["total"])
                    last_good = make_checkpoint(model, cfg, step, optimizer)
            if step >= max_steps:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    if frozen_hash(model) != reference_hash:
        raise FrozenViolation("frozen parameters changed during training")
    ckpt = make_checkpoint(model, cfg, step, optimizer)
    ckpt_path = ckpt.save(out / "checkpoint.pt") if out is not None else None
    return TrainResult(model, ckpt, history, ckpt_path, out / "train_log.jsonl" if out else None)
