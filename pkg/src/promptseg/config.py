"""Model and run configuration.

Configs are stored as flat text files of dotted ``section.key = value`` lines
(a TOML subset), e.g.::

    lora.rank = 4
    toggles.refine = false
    optim.lr = 1e-3

``model``, ``lora``, ``toggles`` and ``loss`` describe the network; ``optim``,
``train``, ``data`` and ``eval`` describe a run. CLI ``--set k=v`` overrides use
the same keys.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

LORA_STRATEGIES = ("full", "qkv_only", "deep", "shallow", "sparse50")
PSG_VARIANTS = ("asym_gate", "anchor_suppressed", "none", "subtraction", "concatenation", "cross_attn")
MASK_TOKEN_MODES = ("propagated", "default")
PROTOCOLS = ("intrinsic", "null_prompt_baseline")


@dataclass
class LoraConfig:
    rank: int = 4
    alpha: float = 0.0  # <= 0 means alpha = rank
    strategy: str = "full"

    @property
    def scale_alpha(self) -> float:
        return float(self.alpha) if self.alpha > 0 else float(self.rank)


@dataclass
class Toggles:
    spg: bool = True
    psg: bool = True
    lateral: bool = True
    refine: bool = True


@dataclass
class LossWeights:
    spg: float = 1.0
    coarse: float = 1.0
    refined: float = 1.0
    lateral: float = 0.1


@dataclass
class ModelConfig:
    embed_dim: int = 16
    image_size: int = 64
    blocks_per_stage: int = 2
    num_heads: int = 2
    mlp_dim: int = 64
    num_sparse: int = 2
    num_mask_tokens: int = 4
    psg_variant: str = "asym_gate"
    mask_tokens: str = "propagated"
    seed: int = 0
    lora: LoraConfig = field(default_factory=LoraConfig)
    toggles: Toggles = field(default_factory=Toggles)
    loss: LossWeights = field(default_factory=LossWeights)

    @property
    def num_blocks(self) -> int:
        return 2 * self.blocks_per_stage

    def validate(self) -> "ModelConfig":
        """Check invariants; forces ``loss.refined = 0`` when refinement is off."""
        c = self.embed_dim
        if c <= 0 or c % 8:
            raise ConfigError(f"embed_dim must be a positive multiple of 8, got {c}")
        if c % self.num_heads:
            raise ConfigError(f"embed_dim {c} not divisible by num_heads {self.num_heads}")
        if self.image_size % 16:
            raise ConfigError(f"image_size {self.image_size} not divisible by 16")
        if self.blocks_per_stage < 1:
            raise ConfigError("blocks_per_stage must be >= 1")
        if self.num_sparse < 0 or self.num_mask_tokens < 1:
            raise ConfigError("num_sparse must be >= 0 and num_mask_tokens >= 1")
        if self.lora.rank < 1:
            raise ConfigError(f"lora.rank must be >= 1, got {self.lora.rank}")
        if self.lora.strategy not in LORA_STRATEGIES:
            raise ConfigError(f"unknown lora.strategy {self.lora.strategy!r}")
        if self.psg_variant not in PSG_VARIANTS:
            raise ConfigError(f"unknown psg_variant {self.psg_variant!r}")
        if self.mask_tokens not in MASK_TOKEN_MODES:
            raise ConfigError(f"unknown mask_tokens mode {self.mask_tokens!r}")
        for name in ("spg", "coarse", "refined", "lateral"):
            if getattr(self.loss, name) < 0:
                raise ConfigError(f"loss.{name} must be non-negative")
        if not self.toggles.refine:
            self.loss.refined = 0.0
        return self


@dataclass
class OptimConfig:
    name: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0  # max global grad norm; <= 0 disables


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 1
    max_steps: int = 0  # 0 = no cap beyond epochs


@dataclass
class DataConfig:
    train: str = "synthetic"
    test: str = "synthetic"
    n_train: int = 64
    n_test: int = 32
    delta: float = 0.3
    seed: int = 1234
    coverage_min: float = 0.08
    coverage_max: float = 0.3


@dataclass
class EvalConfig:
    protocol: str = "intrinsic"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "runs/default"

    def sections(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "lora": self.model.lora,
            "toggles": self.model.toggles,
            "loss": self.model.loss,
            "optim": self.optim,
            "train": self.train,
            "data": self.data,
            "eval": self.eval,
        }

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.optim.lr <= 0:
            raise ConfigError("optim.lr must be > 0")
        if self.train.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.eval.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown eval.protocol {self.eval.protocol!r}")
        return self

    def set(self, key: str, value: Any) -> None:
        if key == "out_dir":
            self.out_dir = str(value)
            return
        section, _, name = key.partition(".")
        target = self.sections().get(section)
        if target is None or not name or "." in name:
            raise ConfigError(f"unknown config key {key!r}")
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields or dataclasses.is_dataclass(getattr(target, name)):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(target, name, _coerce(getattr(target, name), value, key))

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        for section, obj in self.sections().items():
            for f in dataclasses.fields(obj):
                value = getattr(obj, f.name)
                if not dataclasses.is_dataclass(value):
                    flat[f"{section}.{f.name}"] = value
        flat["out_dir"] = self.out_dir
        return flat

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "RunConfig":
        cfg = cls()
        for key, value in flat.items():
            cfg.set(key, value)
        return cfg

    def dumps(self) -> str:
        lines = []
        for key, value in self.to_flat().items():
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, str):
                text = '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
            else:
                text = repr(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


def _coerce(current: Any, value: Any, key: str) -> Any:
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def _flatten(table: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def parse_value(text: str) -> Any:
    """Parse a CLI override value; bare words fall back to strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_overrides(items: list[str]) -> dict[str, Any]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def loads(text: str) -> RunConfig:
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return RunConfig.from_flat(_flatten(table))


def load(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    cfg = loads(Path(path).read_text())
    for key, value in (overrides or {}).items():
        cfg.set(key, value)
    return cfg.validate()
