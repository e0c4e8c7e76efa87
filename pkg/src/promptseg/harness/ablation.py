"""Ablation sweeps: each axis is a list of named config overrides trained and evaluated on shared data."""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import LORA_STRATEGIES, RunConfig
from ..datagen import Sample
from ..errors import ConfigError
from ..lora import partition_params
from ..model import PromptSegmenter
from .evaluate import run_eval
from .train import build_datasets, run_train

OFF = {"toggles.spg": False, "toggles.psg": False, "toggles.lateral": False, "toggles.refine": False}


@dataclass
class Variant:
    name: str
    overrides: dict
    protocol: str = "intrinsic"


AXES: dict[str, list[Variant]] = {
    # cumulative toggle lattice, baseline first
    "core": [
        Variant("baseline", dict(OFF), "null_prompt_baseline"),
        Variant("+spg", {**OFF, "toggles.spg": True}),
        Variant("+psg", {**OFF, "toggles.spg": True, "toggles.psg": True}),
        Variant("+lateral", {**OFF, "toggles.spg": True, "toggles.psg": True, "toggles.lateral": True}),
        Variant("+refine", {}),
    ],
    "psg_operator": [
        Variant(v, {"model.psg_variant": v})
        for v in ("none", "subtraction", "concatenation", "cross_attn", "anchor_suppressed", "asym_gate")
    ],
    "tokens": [
        Variant("w/o psg", {"toggles.psg": False}),
        Variant("psg + default tokens", {"model.mask_tokens": "default"}),
        Variant("psg + propagated tokens", {}),
    ],
    "lora": [Variant(s, {"lora.strategy": s}) for s in LORA_STRATEGIES],
}

REPORTED = ("mae", "f_w", "s_m", "e_phi")


def variant_config(base: RunConfig, variant: Variant, seed: int) -> RunConfig:
    cfg = copy.deepcopy(base)
    for key, value in variant.overrides.items():
        cfg.set(key, value)
    cfg.model.seed = seed
    return cfg.validate()


def t_param(cfg: RunConfig) -> int:
    return partition_params(PromptSegmenter(cfg.model)).num_trainable


def run_ablation(base: RunConfig, axis: str, seeds=(0,), train_samples: list[Sample] | None = None,
                 test_samples: list[Sample] | None = None, out_dir: str | Path | None = None) -> list[dict]:
    """Train and evaluate every row of ``axis`` for each seed; metrics are mean and std over seeds."""
    if axis not in AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(AXES)}")
    if train_samples is None or test_samples is None:
        train_samples, test_samples = build_datasets(base)
    rows = []
    for variant in AXES[axis]:
        per_seed = []
        for seed in seeds:
            cfg = variant_config(base, variant, seed)
            result = run_train(cfg, train_samples)
            report = run_eval(result.model, test_samples, variant.protocol)
            per_seed.append(report.summary())
        row = {"config": variant.name, "protocol": variant.protocol,
               "t_param": t_param(variant_config(base, variant, seeds[0])), "seeds": list(seeds)}
        for col in REPORTED:
            vals = np.array([m[col] for m in per_seed])
            row[col] = float(vals.mean())
            row[f"{col}_std"] = float(vals.std())
            row[f"{col}_per_seed"] = vals.tolist()
        rows.append(row)
    if out_dir is not None:
        write_table(rows, Path(out_dir), axis)
    return rows


def write_table(rows: list[dict], out: Path, axis: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablation_{axis}.json").write_text(json.dumps(rows, indent=2))
    with open(out / f"ablation_{axis}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "t_param", *(f"{c}" for c in REPORTED), *(f"{c}_std" for c in REPORTED)])
        for r in rows:
            writer.writerow([r["config"], r["t_param"], *(repr(r[c]) for c in REPORTED),
                             *(repr(r[f"{c}_std"]) for c in REPORTED)])


def format_table(rows: list[dict]) -> str:
    lines = [f"{'config':<26}{'T-Param':>9}" + "".join(f"{c:>18}" for c in REPORTED)]
    for r in rows:
        cells = "".join(f"{r[c]:>10.4f}±{r[c + '_std']:<7.4f}" for c in REPORTED)
        lines.append(f"{r['config']:<26}{r['t_param']:>9}{cells}")
    return "\n".join(lines)
