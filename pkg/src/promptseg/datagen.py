"""Procedural camouflage data and directory-based dataset loading.

A synthetic sample is a smooth blob whose texture is drawn from the same
band-limited noise family as the background, with an independent noise phase
and a mean shift of ``0.3 * delta``. ``delta = 0`` makes foreground and
background statistically identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, DatasetError, GenerationError

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class Sample:
    image: np.ndarray  # float32, 3×S×S in [0, 1]
    mask: np.ndarray  # float32, 1×S×S in {0, 1}
    id: str


@dataclass
class SynthConfig:
    resolution: int = 64
    delta: float = 0.4
    coverage_min: float = 0.08
    coverage_max: float = 0.3
    seed: int = 0
    texture_std: float = 0.06
    max_retries: int = 50

    def validate(self) -> "SynthConfig":
        if self.resolution % 16 or self.resolution <= 0:
            raise ConfigError(f"resolution {self.resolution} must be a positive multiple of 16")
        if not 0 <= self.delta <= 1:
            raise ConfigError(f"delta {self.delta} outside [0, 1]")
        if not 0 <= self.coverage_min <= self.coverage_max <= 0.5:
            raise ConfigError("coverage range must satisfy 0 <= min <= max <= 0.5")
        return self


def band_noise(rng: np.random.Generator, size: int, octaves=(4.0, 2.0, 1.0),
               weights=(0.5, 0.3, 0.2)) -> np.ndarray:
    """Zero-mean, unit-std sum of smoothed white-noise octaves (sigmas in pixels at 64 px)."""
    scale = size / 64.0
    out = np.zeros((size, size))
    for sigma, wgt in zip(octaves, weights):
        layer = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma * scale, mode="wrap")
        out += wgt * layer / (layer.std() + 1e-12)
    return (out - out.mean()) / (out.std() + 1e-12)


def _texture(rng: np.random.Generator, size: int, tint: np.ndarray, std: float) -> np.ndarray:
    lum = band_noise(rng, size)
    chroma = np.stack([band_noise(rng, size) for _ in range(3)])
    return 0.5 + tint[:, None, None] + std * (lum[None] + 0.3 * chroma)


def _blob(rng: np.random.Generator, size: int, coverage: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    cy, cx = rng.uniform(0.3, 0.7, size=2)
    aspect = rng.uniform(0.6, 1.6)
    r2 = ((yy - cy) * aspect) ** 2 + ((xx - cx) / aspect) ** 2
    field = np.exp(-r2 / 0.05) + 0.25 * band_noise(rng, size, octaves=(6.0,), weights=(1.0,))
    mask = field > np.quantile(field, 1.0 - coverage)
    labels, n = ndimage.label(mask)
    if n > 1:
        sizes = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
        mask = labels == (1 + int(np.argmax(sizes)))
    return ndimage.binary_fill_holes(mask)


def synth_sample(cfg: SynthConfig, index: int) -> Sample:
    """Deterministic in ``(cfg, index)``."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.resolution
    lo, hi = cfg.coverage_min, cfg.coverage_max
    for _ in range(cfg.max_retries):
        target = rng.uniform(lo, hi) if hi > lo else lo
        mask = _blob(rng, s, max(target, 1.0 / (s * s)))
        coverage = mask.mean()
        if lo <= coverage <= hi:
            break
    else:
        raise GenerationError(f"no mask with coverage in [{lo}, {hi}] after {cfg.max_retries} tries")

    tint = rng.normal(0.0, 0.05, size=3)
    background = _texture(rng, s, tint, cfg.texture_std)
    foreground = _texture(rng, s, tint, cfg.texture_std) + 0.3 * cfg.delta
    image = np.clip(np.where(mask[None], foreground, background), 0.0, 1.0)
    return Sample(image=image.astype(np.float32), mask=mask[None].astype(np.float32), id=f"synth_{index:05d}")


def synth_dataset(cfg: SynthConfig, n: int, start: int = 0) -> list[Sample]:
    return [synth_sample(cfg, i) for i in range(start, start + n)]


def save_dataset(samples: Iterable[Sample], out_dir: str | Path) -> Path:
    """Write ``images/<id>.png`` (8-bit RGB) and ``masks/<id>.png`` (8-bit 0/255)."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for smp in samples:
        rgb = np.round(np.transpose(smp.image, (1, 2, 0)) * 255).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(out / "images" / f"{smp.id}.png")
        m = (smp.mask[0] > 0.5).astype(np.uint8) * 255
        Image.fromarray(m, mode="L").save(out / "masks" / f"{smp.id}.png")
    return out


def _listing(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        raise DatasetError(f"missing directory {folder}")
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_EXTS}


def _read(path: Path, mode: str) -> Image.Image:
    try:
        with Image.open(path) as im:
            return im.convert(mode)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def load_dataset(root: str | Path, resolution: int, split: str | None = None) -> list[Sample]:
    """Load ``images/`` and ``masks/`` pairs (matched by basename) in lexicographic order."""
    if resolution % 16:
        raise ConfigError(f"resolution {resolution} not divisible by 16")
    base = Path(root)
    if split:
        base = base / split
    images = _listing(base / "images")
    masks = _listing(base / "masks")
    for stem in sorted(set(images) ^ set(masks)):
        orphan = images.get(stem) or masks.get(stem)
        raise DatasetError(f"unmatched file without counterpart: {orphan}")
    samples = []
    for stem in sorted(images):
        img = _read(images[stem], "RGB").resize((resolution, resolution), Image.BILINEAR)
        msk = _read(masks[stem], "L").resize((resolution, resolution), Image.NEAREST)
        image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
        mask = (np.asarray(msk, dtype=np.float32) / 255.0 > 0.5).astype(np.float32)[None]
        samples.append(Sample(image=image, mask=mask, id=stem))
    return samples
