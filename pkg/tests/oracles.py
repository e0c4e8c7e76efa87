"""Literal, loop-based metric definitions used as independent oracles.

Deliberately slow: every quantity is written out pixel by pixel, straight
from the published definitions, with no shared code from ``promptseg.metrics``.
"""

import math

import numpy as np

EPS = 2.220446049250313e-16


def _shape(m):
    return len(m), len(m[0])


def _tolist(a):
    return [[float(v) for v in row] for row in a]


def mae(pred, gt):
    pred, gt = _tolist(pred), _tolist(gt)
    h, w = _shape(pred)
    return sum(abs(pred[i][j] - gt[i][j]) for i in range(h) for j in range(w)) / (h * w)


def weighted_fmeasure(pred, gt, beta2=1.0):
    pred, gt = _tolist(pred), _tolist(gt)
    h, w = _shape(pred)
    g = [[gt[i][j] > 0.5 for j in range(w)] for i in range(h)]
    fg = [(i, j) for i in range(h) for j in range(w) if g[i][j]]
    if not fg:
        return 1.0 if all(pred[i][j] == 0 for i in range(h) for j in range(w)) else 0.0
    E = [[abs(pred[i][j] - (1.0 if g[i][j] else 0.0)) for j in range(w)] for i in range(h)]
    dist = [[0.0] * w for _ in range(h)]
    Et = [[E[i][j] for j in range(w)] for i in range(h)]
    for i in range(h):
        for j in range(w):
            if g[i][j]:
                continue
            best, arg = None, None
            for (a, b) in fg:  # raster order: first minimum wins
                d2 = (a - i) ** 2 + (b - j) ** 2
                if best is None or d2 < best:
                    best, arg = d2, (a, b)
            dist[i][j] = math.sqrt(best)
            Et[i][j] = E[arg[0]][arg[1]]
    K = [[math.exp(-(x * x + y * y) / 50.0) for x in range(-3, 4)] for y in range(-3, 4)]
    ks = sum(sum(r) for r in K)
    K = [[v / ks for v in r] for r in K]
    EA = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            s = 0.0
            for di in range(-3, 4):
                for dj in range(-3, 4):
                    a, b = i + di, j + dj
                    if 0 <= a < h and 0 <= b < w:
                        s += K[di + 3][dj + 3] * Et[a][b]
            EA[i][j] = s
    Ew = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            m = EA[i][j] if (g[i][j] and EA[i][j] < E[i][j]) else E[i][j]
            B = 1.0 if g[i][j] else 2.0 - math.exp(math.log(0.5) / 5.0 * dist[i][j])
            Ew[i][j] = m * B
    n_fg = len(fg)
    sum_fg = sum(Ew[i][j] for (i, j) in fg)
    fp = sum(Ew[i][j] for i in range(h) for j in range(w) if not g[i][j])
    tp = n_fg - sum_fg
    R = 1.0 - sum_fg / n_fg
    P = tp / (tp + fp + EPS)
    return (1 + beta2) * R * P / (R + beta2 * P + EPS)


def _mean(v):
    return sum(v) / len(v)


def _std1(v):
    if len(v) < 2:
        return 0.0
    m = _mean(v)
    return math.sqrt(sum((x - m) ** 2 for x in v) / (len(v) - 1))


def _ssim(p, g):
    n = len(p)
    if n == 0:
        return 0.0
    x, y = _mean(p), _mean(g)
    sx = sum((a - x) ** 2 for a in p) / (n - 1 + EPS)
    sy = sum((b - y) ** 2 for b in g) / (n - 1 + EPS)
    sxy = sum((a - x) * (b - y) for a, b in zip(p, g)) / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def s_measure(pred, gt, alpha=0.5):
    pred, gt = _tolist(pred), _tolist(gt)
    h, w = _shape(pred)
    g = [[1.0 if gt[i][j] > 0.5 else 0.0 for j in range(w)] for i in range(h)]
    cells = [(i, j) for i in range(h) for j in range(w)]
    y = sum(g[i][j] for i, j in cells) / (h * w)
    if y == 0:
        return 1.0 - sum(pred[i][j] for i, j in cells) / (h * w)
    if y == 1:
        return sum(pred[i][j] for i, j in cells) / (h * w)

    def obj(vals):
        mu = _mean(vals)
        return 2 * mu / (mu * mu + 1 + _std1(vals) + EPS)

    fg_vals = [pred[i][j] for i, j in cells if g[i][j] == 1]
    bg_vals = [1 - pred[i][j] for i, j in cells if g[i][j] == 0]
    s_obj = y * obj(fg_vals) + (1 - y) * obj(bg_vals)

    ys = [i for i, j in cells if g[i][j] == 1]
    xs = [j for i, j in cells if g[i][j] == 1]
    cx = int(round(sum(xs) / len(xs))) + 1
    cy = int(round(sum(ys) / len(ys))) + 1
    area = h * w
    weights = [cx * cy / area, (w - cx) * cy / area, cx * (h - cy) / area]
    weights.append(1 - sum(weights))
    boxes = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)]
    s_reg = 0.0
    for wq, (r0, r1, c0, c1) in zip(weights, boxes):
        p = [pred[i][j] for i in range(r0, r1) for j in range(c0, c1)]
        q = [g[i][j] for i in range(r0, r1) for j in range(c0, c1)]
        if p:
            s_reg += wq * _ssim(p, q)
    return max(0.0, alpha * s_obj + (1 - alpha) * s_reg)


def _em_at(pred, g, t):
    h, w = _shape(pred)
    n = h * w
    b = [[1.0 if pred[i][j] >= t else 0.0 for j in range(w)] for i in range(h)]
    mg = sum(map(sum, g)) / n
    if mg == 0:
        enh = [[1 - b[i][j] for j in range(w)] for i in range(h)]
    elif mg == 1:
        enh = b
    else:
        mb = sum(map(sum, b)) / n
        enh = [[0.0] * w for _ in range(h)]
        for i in range(h):
            for j in range(w):
                fm = b[i][j] - mb
                gm = g[i][j] - mg
                align = 2 * fm * gm / (fm * fm + gm * gm + EPS)
                enh[i][j] = (align + 1) ** 2 / 4
    return sum(map(sum, enh)) / n


def e_measure(pred, gt, mode="mean"):
    pred, gt = _tolist(pred), _tolist(gt)
    h, w = _shape(pred)
    g = [[1.0 if gt[i][j] > 0.5 else 0.0 for j in range(w)] for i in range(h)]
    if mode == "adaptive":
        return _em_at(pred, g, min(2 * sum(map(sum, pred)) / (h * w), 1.0))
    scores = [_em_at(pred, g, k / 256.0) for k in range(1, 257)]
    return sum(scores) / len(scores)


def dice_iou(pred, gt):
    pred, gt = _tolist(pred), _tolist(gt)
    h, w = _shape(pred)
    P = {(i, j) for i in range(h) for j in range(w) if pred[i][j] >= 0.5}
    G = {(i, j) for i in range(h) for j in range(w) if gt[i][j] > 0.5}
    if not (P | G):
        return 1.0, 1.0
    return 2 * len(P & G) / (len(P) + len(G)), len(P & G) / len(P | G)


def random_pair(seed, n=8):
    """Seeded (prediction, ground truth) pair; cycles through uniform, quantised and near-correct maps."""
    rng = np.random.default_rng(seed)
    gt = rng.random((n, n)) > rng.uniform(0.2, 0.8)
    kind = seed % 3
    if kind == 0:
        pred = rng.random((n, n))
    elif kind == 1:  # quantised, exercises threshold ties
        pred = np.round(rng.random((n, n)) * 8) / 8
    else:  # near-correct
        pred = np.clip(gt + rng.normal(0, 0.3, (n, n)), 0, 1)
    return pred, gt.astype(float)
