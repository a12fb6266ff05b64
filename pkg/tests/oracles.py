"""Independent oracles the implementation is checked against.

Each oracle follows a different computational path from the production
code: the privacy-spend oracle evaluates the same moment bound in
60-digit arithmetic, the Frechet oracle takes the Schur-based matrix
square root of the covariance product, the curve oracles count pairs and
thresholds by explicit O(n^2) scans, and the patch oracle fills pixels one
by one from first-principles index arithmetic.
"""

from __future__ import annotations

import math
from functools import lru_cache

import mpmath as mp
import numpy as np
import scipy.linalg


# ---------------------------------------------------------------- privacy

@lru_cache(maxsize=None)
def rdp_per_step_oracle(q: float, sigma: float, alpha: float) -> float:
    """Per-step Renyi bound of the subsampled Gaussian, 60-digit arithmetic."""
    if q == 1.0:
        return alpha / (2 * sigma**2)
    if q == 0.0:
        return 0.0
    a = int(alpha) if float(alpha).is_integer() else math.ceil(alpha)
    with mp.workdps(60):
        qm, sm = mp.mpf(q), mp.mpf(sigma)
        total = mp.mpf(0)
        for k in range(a + 1):
            total += (
                mp.binomial(a, k)
                * qm**k
                * (1 - qm) ** (a - k)
                * mp.exp((k * k - k) / (2 * sm * sm))
            )
        return float(mp.log(total) / (a - 1))


def epsilon_oracle(
    q: float, sigma: float, steps: int, delta: float, orders
) -> tuple[float, float]:
    best_eps, best_order = math.inf, None
    for a in orders:
        eps = steps * rdp_per_step_oracle(q, sigma, a) + math.log(1 / delta) / (a - 1)
        if eps < best_eps:
            best_eps, best_order = eps, a
    return best_eps, best_order


# ---------------------------------------------------------------- frechet

def frechet_oracle(mu1, sigma1, mu2, sigma2) -> float:
    """Schur-decomposition square root of the covariance product."""
    covmean = scipy.linalg.sqrtm(np.asarray(sigma1) @ np.asarray(sigma2))
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = np.asarray(mu1) - np.asarray(mu2)
    return float(
        diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.trace(covmean)
    )


# ------------------------------------------------------------------ curves

def auroc_pairwise(scores, labels) -> float:
    """All positive-negative pairs, ties counted one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def pr_curve_scan(scores, labels):
    """Per-threshold counting by full scans (O(n^2))."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    thresholds = sorted(set(scores.tolist()), reverse=True)
    recall, precision = [], []
    for t in thresholds:
        tp = fp = 0
        for s, y in zip(scores, labels):
            if s >= t:
                if y == 1:
                    tp += 1
                else:
                    fp += 1
        recall.append(tp / n_pos)
        precision.append(tp / (tp + fp))
    return np.asarray(recall), np.asarray(precision)


def auprc_scan(scores, labels) -> float:
    recall, precision = pr_curve_scan(scores, labels)
    area = 0.0
    prev = 0.0
    for r, p in zip(recall, precision):
        area += (r - prev) * p
        prev = r
    return area


# ------------------------------------------------------------------ ingest

def bbox_scan(contour):
    xs = [p[0] for p in contour]
    ys = [p[1] for p in contour]
    lo_x, hi_x, lo_y, hi_y = xs[0], xs[0], ys[0], ys[0]
    for x in xs:
        lo_x, hi_x = min(lo_x, x), max(hi_x, x)
    for y in ys:
        lo_y, hi_y = min(lo_y, y), max(hi_y, y)
    return lo_x, lo_y, hi_x, hi_y


def patch_scan(image: np.ndarray, box, margin: int, min_side: int) -> np.ndarray:
    """Pixel-by-pixel crop with zero padding, from raw index arithmetic."""
    w = box.x_max - box.x_min
    h = box.y_max - box.y_min
    side = max(w + 2 * margin, h + 2 * margin, min_side)
    x0 = math.floor((box.x_min + box.x_max - side) / 2)
    y0 = math.floor((box.y_min + box.y_max - side) / 2)
    out = np.zeros((side, side), dtype=np.float32)
    for i in range(side):
        for j in range(side):
            yy, xx = y0 + i, x0 + j
            if 0 <= yy < image.shape[0] and 0 <= xx < image.shape[1]:
                out[i, j] = image[yy, xx]
    return out
