"""Evaluation under a fixed prompt protocol."""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from ..config import PROTOCOLS
from ..datagen import Sample
from ..errors import ConfigError
from ..metrics import MetricReport, evaluate_pair
from ..model import PromptSegmenter
from .checkpoint import Checkpoint

PredictFn = Callable[[Sample], np.ndarray]


@torch.no_grad()
def predict_probs(model: PromptSegmenter, sample: Sample, protocol: str = "intrinsic") -> np.ndarray:
    """σ(M) bilinearly resized to the ground-truth resolution, as an H×W float64 array."""
    was_training = model.training
    model.eval()
    pred = model(torch.from_numpy(sample.image)[None], protocol=protocol)
    model.train(was_training)
    prob = torch.sigmoid(pred.refined)
    size = sample.mask.shape[-2:]
    if prob.shape[-2:] != size:
        prob = F.interpolate(prob, size=size, mode="bilinear", align_corners=False)
    return prob[0, 0].double().numpy()


def evaluate(predict: PredictFn, samples: list[Sample]) -> MetricReport:
    rows = []
    for smp in samples:
        row = evaluate_pair(predict(smp), smp.mask[0])
        rows.append({"id": smp.id, **row})
    return MetricReport.from_rows(rows)


def model_predictor(model: PromptSegmenter, protocol: str) -> PredictFn:
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}")
    return lambda smp: predict_probs(model, smp, protocol)


def run_eval(checkpoint: Checkpoint | PromptSegmenter | str | Path, samples: list[Sample],
             protocol: str = "intrinsic", out_dir: str | Path | None = None,
             predict: PredictFn | None = None) -> MetricReport:
    """Evaluate a checkpoint (object, path or live model) and optionally write ``metrics.{csv,json}``.

    ``predict`` replaces the model entirely; used to test the plumbing with
    known predictions.
    """
    if predict is None:
        if isinstance(checkpoint, (str, Path)):
            checkpoint = Checkpoint.load(checkpoint)
        model = checkpoint.build_model() if isinstance(checkpoint, Checkpoint) else checkpoint
        predict = model_predictor(model, protocol)
    report = evaluate(predict, samples)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_csv(out / f"metrics_{protocol}.csv")
        report.to_json(out / f"metrics_{protocol}.json")
    return report
