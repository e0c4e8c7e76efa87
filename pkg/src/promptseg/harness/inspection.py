"""Dump the internal maps of one forward pass as a PNG bundle."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from matplotlib import colormaps
from PIL import Image

from ..model import Prediction, PromptSegmenter, _ungated

BUNDLE = ("p_pos", "p_neg", "gate", "energy_delta", "coarse", "refined")


def internal_maps(model: PromptSegmenter, image: torch.Tensor) -> dict[str, np.ndarray]:
    """H×W float arrays for every bundle entry, computed under the intrinsic protocol."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        pred: Prediction = model(image if image.dim() == 4 else image[None])
    model.train(was_training)
    if pred.prompts is None:
        # no self-prompting: prompts and gate are undefined, report neutral maps
        h, w = pred.coarse.shape[-2:]
        zeros = pred.coarse.new_zeros(1, 1, h, w)
        p_pos = p_neg = zeros
        cond = _ungated(pred.embedding.top)
    else:
        p_pos, p_neg = pred.prompts.p_pos, pred.prompts.p_neg
        cond = pred.condition
    maps = {
        "p_pos": torch.sigmoid(p_pos),
        "p_neg": torch.sigmoid(p_neg),
        "gate": cond.gate,
        "energy_delta": cond.energy_delta,
        "coarse": torch.sigmoid(pred.coarse),
        "refined": torch.sigmoid(pred.refined),
    }
    return {k: v[0, 0].double().numpy() for k, v in maps.items()}


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x * 255.0), 0, 255).astype(np.uint8)


def write_bundle(maps: dict[str, np.ndarray], out_dir: str | Path) -> list[Path]:
    """Probability maps as grayscale; energy_delta colormapped after max-normalisation."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in BUNDLE:
        x = maps[name]
        if name == "energy_delta":
            peak = x.max()
            rgb = colormaps["magma"](x / peak if peak > 0 else np.zeros_like(x))[..., :3]
            img = Image.fromarray(_to_uint8(rgb), mode="RGB")
        else:
            img = Image.fromarray(_to_uint8(x), mode="L")
        path = out / f"{name}.png"
        img.save(path)
        paths.append(path)
    return paths


def inspect(model: PromptSegmenter, image, out_dir: str | Path) -> dict[str, np.ndarray]:
    """Write the six-map bundle for ``image`` (3×S×S array or tensor) and return the raw maps."""
    x = torch.as_tensor(np.asarray(image, dtype=np.float32))
    maps = internal_maps(model, x)
    write_bundle(maps, out_dir)
    return maps


def boundary_band_contrast(gate: np.ndarray, mask: np.ndarray, band: int = 4, far: int = 8) -> tuple[float, float]:
    """Mean gate inside a ring of width ``band`` on both sides of the target boundary vs. beyond ``far``.

    The gate is bilinearly resized to the mask resolution; distances are in mask pixels.
    """
    from scipy import ndimage

    m = np.asarray(mask) > 0.5
    if not m.any() or m.all():
        return float("nan"), float("nan")
    h, w = m.shape
    g = torch.as_tensor(np.asarray(gate, dtype=np.float64))[None, None]
    if g.shape[-2:] != (h, w):
        g = torch.nn.functional.interpolate(g, size=(h, w), mode="bilinear", align_corners=False)
    g = g[0, 0].numpy()
    outside = ndimage.distance_transform_edt(~m)
    inside = ndimage.distance_transform_edt(m)
    ring = ((outside > 0) & (outside <= band)) | ((inside > 0) & (inside <= band))
    away = outside > far
    if not away.any():
        return float("nan"), float("nan")
    return float(g[ring].mean()), float(g[away].mean())
