import json

import numpy as np
import pytest
import torch
from PIL import Image

from promptseg.errors import FrozenViolation
from promptseg.harness import train as train_mod
from promptseg.harness.ablation import AXES, REPORTED, format_table, run_ablation, t_param, variant_config
from promptseg.harness.checkpoint import Checkpoint, frozen_hash
from promptseg.harness.evaluate import run_eval
from promptseg.harness.inspection import BUNDLE, boundary_band_contrast, inspect
from promptseg.harness.train import build_datasets, run_train


def test_checkpoint_roundtrip(tiny_run, tmp_path):
    result = run_train(tiny_run, out_dir=tmp_path)
    ckpt = Checkpoint.load(result.checkpoint_path)
    assert ckpt.step == 3 and ckpt.seed == tiny_run.model.seed
    assert ckpt.provenance["backbone"] == "frozen-random" and ckpt.provenance["spg"] == "scratch"
    model = ckpt.build_model().eval()
    result.model.eval()
    x = torch.rand(2, 3, 32, 32)
    a, b = result.model(x), model(x)
    assert torch.equal(a.refined, b.refined) and torch.equal(a.coarse, b.coarse)
    rows = [json.loads(line) for line in result.log_path.read_text().splitlines()]
    assert [r["step"] for r in rows] == [1, 2, 3]
    assert (tmp_path / "config.toml").exists()


def test_checkpoint_hash_mismatch(tiny_run):
    ckpt = run_train(tiny_run).checkpoint
    ckpt.state["backbone.patch_embed.weight"] = ckpt.state["backbone.patch_embed.weight"] + 1
    with pytest.raises(ValueError):
        ckpt.build_model()


def test_frozen_hash_recorded(tiny_run):
    result = run_train(tiny_run)
    assert frozen_hash(result.model) == result.checkpoint.frozen_hash
    from promptseg.model import PromptSegmenter
    assert frozen_hash(PromptSegmenter(tiny_run.model)) == result.checkpoint.frozen_hash


def test_frozen_violation(tiny_run, monkeypatch):
    real = train_mod.make_optimizer

    def leaky(model, cfg):
        opt = real(model, cfg)
        opt.add_param_group({"params": [model.prompt_encoder.point_embeddings.weight]})
        model.prompt_encoder.point_embeddings.weight.requires_grad_(True)
        return opt

    monkeypatch.setattr(train_mod, "make_optimizer", leaky)
    with pytest.raises(FrozenViolation):
        run_train(tiny_run)


def test_nonfinite_loss_aborts(tiny_run, tmp_path, monkeypatch):
    from promptseg.model import PromptSegmenter
    real = PromptSegmenter.losses

    def bad(self, pred, y):
        out = real(self, pred, y)
        out.total = out.total * float("nan")
        return out

    monkeypatch.setattr(PromptSegmenter, "losses", bad)
    with pytest.raises(FloatingPointError):
        run_train(tiny_run, out_dir=tmp_path)
    assert (tmp_path / "last_good.pt").exists()


def test_gt_passthrough_eval(tiny_run, tmp_path):
    _, test = build_datasets(tiny_run)
    report = run_eval(None, test, predict=lambda s: s.mask[0].astype(np.float64), out_dir=tmp_path)
    assert report.mae == 0 and report.dice == 1 and report.iou == 1
    assert (tmp_path / "metrics_intrinsic.csv").exists() and (tmp_path / "metrics_intrinsic.json").exists()


def test_eval_is_repeatable(tiny_run, tmp_path):
    result = run_train(tiny_run, out_dir=tmp_path)
    _, test = build_datasets(tiny_run)
    a = run_eval(result.checkpoint_path, test)
    b = run_eval(result.checkpoint, test)
    c = run_eval(result.model, test, "null_prompt_baseline")
    assert a.rows == b.rows and a.rows != c.rows


def test_train_is_deterministic(tiny_run):
    a, b = run_train(tiny_run), run_train(tiny_run)
    assert a.history == b.history
    assert all(torch.equal(a.checkpoint.state[k], b.checkpoint.state[k]) for k in a.checkpoint.state)


def test_inspect_bundle(tiny_run, tmp_path):
    from promptseg.model import PromptSegmenter
    model = PromptSegmenter(tiny_run.model)
    image = np.random.default_rng(0).random((3, 32, 32), dtype=np.float32)
    maps = inspect(model, image, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(f"{n}.png" for n in BUNDLE)
    assert np.count_nonzero(maps["energy_delta"]) == 0
    assert ((maps["gate"] > 0) & (maps["gate"] < 1)).all()
    gate_png = np.asarray(Image.open(tmp_path / "gate.png"))
    assert gate_png.dtype == np.uint8 and gate_png.shape == maps["gate"].shape


def test_inspect_without_spg(tiny_run, tmp_path):
    from promptseg.model import PromptSegmenter
    tiny_run.model.toggles.spg = False
    tiny_run.model.toggles.psg = False
    inspect(PromptSegmenter(tiny_run.model), np.zeros((3, 32, 32), np.float32), tmp_path)
    assert len(list(tmp_path.iterdir())) == 6


def test_boundary_band_contrast():
    mask = np.zeros((32, 32))
    mask[12:20, 12:20] = 1
    inside = np.zeros((32, 32))
    inside[8:24, 8:24] = 1.0
    ring, away = boundary_band_contrast(inside, mask)
    assert ring == 1.0 and away == 0.0
    # a coarse gate is upsampled to the mask grid first
    ring, away = boundary_band_contrast(np.full((4, 4), 0.3), mask)
    assert ring == pytest.approx(0.3) and away == pytest.approx(0.3)
    assert all(np.isnan(boundary_band_contrast(inside, np.zeros((32, 32)))))


def test_axes_rows():
    assert [len(AXES[a]) for a in ("core", "psg_operator", "tokens", "lora")] == [5, 6, 3, 5]
    assert [v.name for v in AXES["psg_operator"]] == [
        "none", "subtraction", "concatenation", "cross_attn", "anchor_suppressed", "asym_gate"]
    assert AXES["core"][0].protocol == "null_prompt_baseline"


def test_core_lattice_t_param_increases():
    from promptseg.config import RunConfig
    base = RunConfig()
    counts = [t_param(variant_config(base, v, 0)) for v in AXES["core"]]
    assert all(a < b for a, b in zip(counts, counts[1:])), counts


def test_run_ablation_smoke(tiny_run, tmp_path):
    train, test = build_datasets(tiny_run)
    rows = run_ablation(tiny_run, "tokens", seeds=(0, 1), train_samples=train, test_samples=test, out_dir=tmp_path)
    assert [r["config"] for r in rows] == [v.name for v in AXES["tokens"]]
    for r in rows:
        for c in REPORTED:
            assert len(r[f"{c}_per_seed"]) == 2
            assert r[c] == pytest.approx(np.mean(r[f"{c}_per_seed"]))
    assert (tmp_path / "ablation_tokens.csv").exists()
    assert "psg + propagated tokens" in format_table(rows)
