"""Segmentation metrics: MAE, weighted F-measure, S-measure, E-measure, Dice, IoU.

Predictions are continuous maps in [0, 1]; ground truth is binary. Parameters
follow the usual COD toolkit conventions: S-measure alpha = 0.5, weighted F
with beta^2 = 1 and a 7x7 Gaussian (sigma 5), E-measure averaged over 256
thresholds ``t = k/256, k = 1..256``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ContractError

EPS = np.finfo(np.float64).eps
COLUMNS = ("mae", "f_w", "s_m", "e_phi", "dice", "iou")
E_THRESHOLDS = np.arange(1, 257, dtype=np.float64) / 256.0


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.ndim != 2:
        pred, gt = pred.squeeze(), gt.squeeze()
        if pred.ndim != 2:
            raise ContractError(f"expected a 2-D map, got shape {pred.shape}")
    return pred, gt > 0.5


def mae(pred, gt) -> float:
    pred, gt = _prep(pred, gt)
    return float(np.abs(pred - gt).mean())


# ---------------------------------------------------------------- weighted F


def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r: r + 1, -r: r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return k / k.sum()


@lru_cache(maxsize=None)
def _lattice_offsets(n: int) -> tuple[tuple[int, int], ...]:
    """Integer offsets (dy, dx) with dy^2 + dx^2 == n in raster order."""
    r = math.isqrt(n)
    out = []
    for dy in range(-r, r + 1):
        rem = n - dy * dy
        dx = math.isqrt(rem)
        if dx * dx == rem:
            out.extend([(dy, -dx), (dy, dx)] if dx else [(dy, 0)])
    return tuple(out)


def nearest_foreground(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance to, and coordinates of, the nearest foreground pixel.

    Ties are broken towards the lowest raster index. Foreground pixels map to
    themselves. ``gt`` must contain at least one foreground pixel.
    """
    h, w = gt.shape
    dist = ndimage.distance_transform_edt(~gt)
    d2 = np.rint(dist * dist).astype(np.int64)
    ny, nx = np.indices((h, w))
    bg = ~gt
    for n in np.unique(d2[bg]):
        ys, xs = np.nonzero(bg & (d2 == n))
        todo = np.ones(ys.shape, dtype=bool)
        for dy, dx in _lattice_offsets(int(n)):
            ty, tx = ys + dy, xs + dx
            ok = todo & (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
            idx = np.nonzero(ok)[0]
            hit = idx[gt[ty[idx], tx[idx]]]
            ny[ys[hit], xs[hit]] = ty[hit]
            nx[ys[hit], xs[hit]] = tx[hit]
            todo[hit] = False
            if not todo.any():
                break
    return dist, ny, nx


def weighted_fmeasure(pred, gt, beta2: float = 1.0) -> float:
    pred, gt = _prep(pred, gt)
    if not gt.any():
        return 1.0 if not pred.any() else 0.0
    err = np.abs(pred - gt)
    dist, ny, nx = nearest_foreground(gt)
    err_t = err[ny, nx]  # background pixels take the error of their nearest foreground pixel
    err_a = ndimage.correlate(err_t, gaussian_kernel(), mode="constant", cval=0.0)
    min_e = np.where(gt & (err_a < err), err_a, err)
    weight = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    err_w = min_e * weight
    tp_w = gt.sum() - err_w[gt].sum()
    fp_w = err_w[~gt].sum()
    recall = 1.0 - err_w[gt].mean()
    precision = tp_w / (tp_w + fp_w + EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


# ---------------------------------------------------------------- S-measure


def _object_score(x: np.ndarray) -> float:
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    return 1.0 if beta == 0 else 0.0


def centroid(gt: np.ndarray) -> tuple[int, int]:
    """1-based rounded centroid ``(x, y)``; the image centre for an empty map."""
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)), int(np.round(h / 2))
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = _prep(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    fg = pred * gt
    bg = (1 - pred) * ~gt
    s_obj = y * _object_score(fg[gt]) + (1 - y) * _object_score(bg[~gt])

    h, w = gt.shape
    cx, cy = centroid(gt)
    g = gt.astype(np.float64)
    w1 = cx * cy / (h * w)
    w2 = (w - cx) * cy / (h * w)
    w3 = cx * (h - cy) / (h * w)
    w4 = 1 - w1 - w2 - w3
    quads = (
        (w1, np.s_[:cy, :cx]),
        (w2, np.s_[:cy, cx:]),
        (w3, np.s_[cy:, :cx]),
        (w4, np.s_[cy:, cx:]),
    )
    s_reg = sum(wq * _ssim(pred[sl], g[sl]) for wq, sl in quads if pred[sl].size)
    return float(max(0.0, alpha * s_obj + (1 - alpha) * s_reg))


# ---------------------------------------------------------------- E-measure


def _enhanced_sum(n_fg_pred, tp, n_fg_gt, size):
    """Sum of the enhanced-alignment matrix from the four confusion counts.

    Vectorised over thresholds: ``n_fg_pred`` and ``tp`` may be arrays.
    """
    n_fg_pred = np.asarray(n_fg_pred, dtype=np.float64)
    tp = np.asarray(tp, dtype=np.float64)
    if n_fg_gt == 0:
        return size - n_fg_pred
    if n_fg_gt == size:
        return n_fg_pred
    fp = n_fg_pred - tp
    fn = n_fg_gt - tp
    tn = size - tp - fp - fn
    mb = n_fg_pred / size
    mg = n_fg_gt / size
    total = np.zeros_like(n_fg_pred)
    for count, b, g in ((tp, 1.0, 1.0), (fp, 1.0, 0.0), (fn, 0.0, 1.0), (tn, 0.0, 0.0)):
        fm = b - mb
        gm = g - mg
        align = 2 * fm * gm / (fm * fm + gm * gm + EPS)
        total = total + count * (align + 1) ** 2 / 4
    return total


def e_measure(pred, gt, mode: str = "mean") -> float:
    """Enhanced-alignment measure; ``mode`` is "mean" (256 thresholds) or "adaptive"."""
    pred, gt = _prep(pred, gt)
    size = pred.size
    n_fg_gt = int(gt.sum())
    if mode == "adaptive":
        thresholds = np.array([min(2 * pred.mean(), 1.0)])
    elif mode == "mean":
        thresholds = E_THRESHOLDS
    else:
        raise ContractError(f"unknown E-measure mode {mode!r}")
    fg_sorted = np.sort(pred[gt])
    all_sorted = np.sort(pred.ravel())
    n_fg_pred = size - np.searchsorted(all_sorted, thresholds, side="left")
    tp = fg_sorted.size - np.searchsorted(fg_sorted, thresholds, side="left")
    scores = _enhanced_sum(n_fg_pred, tp, n_fg_gt, size) / size
    return float(scores.mean())


# ---------------------------------------------------------------- Dice / IoU


def dice_iou(pred, gt, threshold: float = 0.5) -> tuple[float, float]:
    pred, gt = _prep(pred, gt)
    p = pred >= threshold
    inter = np.logical_and(p, gt).sum()
    total = p.sum() + gt.sum()
    union = np.logical_or(p, gt).sum()
    if union == 0:
        return 1.0, 1.0
    return float(2 * inter / total), float(inter / union)


def evaluate_pair(pred, gt) -> dict[str, float]:
    dice, iou = dice_iou(pred, gt)
    return {
        "mae": mae(pred, gt),
        "f_w": weighted_fmeasure(pred, gt),
        "s_m": s_measure(pred, gt),
        "e_phi": e_measure(pred, gt),
        "dice": dice,
        "iou": iou,
    }


@dataclass
class MetricReport:
    mae: float
    f_w: float
    s_m: float
    e_phi: float
    dice: float
    iou: float
    n_samples: int
    rows: list[dict] = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "MetricReport":
        if not rows:
            raise ContractError("cannot aggregate an empty metric list")
        means = {c: float(np.mean([r[c] for r in rows])) for c in COLUMNS}
        return cls(**means, n_samples=len(rows), rows=list(rows))

    def summary(self) -> dict[str, float]:
        return {c: getattr(self, c) for c in COLUMNS}

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", *COLUMNS])
            for row in self.rows:
                writer.writerow([row.get("id", ""), *(repr(row[c]) for c in COLUMNS)])
            writer.writerow(["mean", *(repr(getattr(self, c)) for c in COLUMNS)])
