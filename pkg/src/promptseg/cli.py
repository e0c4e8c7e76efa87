"""Command line entry point: gen-data, train, eval, ablate, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import config as config_mod
from .config import RunConfig
from .datagen import SynthConfig, load_dataset, save_dataset, synth_dataset
from .harness.ablation import AXES, format_table, run_ablation
from .harness.checkpoint import Checkpoint
from .harness.evaluate import run_eval
from .harness.inspection import BUNDLE, inspect
from .harness.train import run_train


def _run_config(args) -> RunConfig:
    overrides = config_mod.parse_overrides(args.set or [])
    if args.config:
        return config_mod.load(args.config, overrides)
    cfg = RunConfig()
    for key, value in overrides.items():
        cfg.set(key, value)
    return cfg.validate()


def _seeds(text: str | None, default: int) -> list[int]:
    if not text:
        return [default]
    return [int(s) for s in text.split(",") if s.strip()]


def cmd_gen_data(args) -> int:
    cfg = SynthConfig(resolution=args.size, delta=args.delta, seed=args.seed,
                      coverage_min=args.coverage[0], coverage_max=args.coverage[1])
    out = save_dataset(synth_dataset(cfg, args.n), args.out)
    print(f"wrote {args.n} samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out or cfg.out_dir)
    for seed in _seeds(args.seeds, cfg.model.seed):
        cfg.model.seed = seed
        run_dir = out if not args.seeds else out / f"seed{seed}"
        result = run_train(cfg, out_dir=run_dir)
        last = result.history[-1]["total"] if result.history else float("nan")
        print(f"seed {seed}: {result.checkpoint.step} steps, final loss {last:.4f}, "
              f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    size = ckpt.run_config().model.image_size
    samples = load_dataset(args.data, size, args.split)
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    report = run_eval(ckpt, samples, args.protocol, out_dir=out)
    print(json.dumps({**report.summary(), "n_samples": report.n_samples}, indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    seeds = _seeds(args.seeds, cfg.model.seed)
    out = Path(args.out or cfg.out_dir) / "ablation"
    rows = run_ablation(cfg, args.axis, seeds=seeds, out_dir=out)
    print(format_table(rows))
    return 0


def cmd_inspect(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    size = ckpt.run_config().model.image_size
    with Image.open(args.image) as im:
        rgb = im.convert("RGB").resize((size, size), Image.BILINEAR)
    image = np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / 255.0
    inspect(ckpt.build_model(), image, args.out)
    print(f"wrote {', '.join(n + '.png' for n in BUNDLE)} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptseg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic camouflage dataset as PNGs")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--delta", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--coverage", type=float, nargs=2, default=(0.08, 0.3), metavar=("MIN", "MAX"))
    g.set_defaults(func=cmd_gen_data)

    def run_opts(q):
        q.add_argument("--config", help="flat key = value config file")
        q.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        q.add_argument("--seeds", help="comma-separated seed sweep, e.g. 0,1,2")
        q.add_argument("--out", help="output directory (default: out_dir from the config)")

    t = sub.add_parser("train", help="train a model")
    run_opts(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on an image/mask directory")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default=None)
    e.add_argument("--protocol", default="intrinsic", choices=config_mod.PROTOCOLS)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate every row of an ablation axis")
    a.add_argument("--axis", required=True, choices=sorted(AXES))
    run_opts(a)
    a.set_defaults(func=cmd_ablate)

    i = sub.add_parser("inspect", help="dump internal maps for one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
