"""Handcrafted radiomics features: first-order statistics + GLCM texture.

Images are [0, 1] grayscale; intensities are quantized to 64 gray levels
before histogram entropy/energy and co-occurrence statistics. Texture
features are computed per 1-pixel offset in 4 directions on the symmetric
normalized co-occurrence matrix and averaged. Constant images get texture
correlation 0 by convention (removes the 0/0 singularity).
"""

from __future__ import annotations

import numpy as np

try:  # compiled kernel, optional
    from ._glcm import glcm_counts

    GLCM_BACKEND = "compiled"
except ImportError:  # pragma: no cover - build-env dependent
    from ._glcm_np import glcm_counts

    GLCM_BACKEND = "numpy"

N_GRAY_LEVELS = 64
OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))

FEATURE_NAMES = (
    "mean",
    "variance",
    "skewness",
    "kurtosis",
    "entropy",
    "energy",
    "p10",
    "p50",
    "p90",
    "glcm_contrast",
    "glcm_correlation",
    "glcm_homogeneity",
    "glcm_energy",
)


def quantize(image: np.ndarray, n_levels: int = N_GRAY_LEVELS) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return np.clip((img * n_levels).astype(np.int64), 0, n_levels - 1)


def glcm_matrix(levels: np.ndarray, dy: int, dx: int, n_levels: int = N_GRAY_LEVELS) -> np.ndarray:
    """Symmetric normalized co-occurrence matrix at one offset."""
    counts = np.asarray(glcm_counts(levels, dy, dx, n_levels), dtype=np.float64)
    sym = counts + counts.T
    total = sym.sum()
    if total == 0:
        raise ValueError("image too small for the requested offset")
    return sym / total


def _glcm_features(p: np.ndarray) -> tuple[float, float, float, float]:
    n = p.shape[0]
    idx = np.arange(n, dtype=np.float64)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    contrast = float((((ii - jj) ** 2) * p).sum())
    p_i = p.sum(axis=1)
    mu_i = float((idx * p_i).sum())
    var_i = float((((idx - mu_i) ** 2) * p_i).sum())
    # symmetric matrix: marginals coincide
    if var_i <= 0:
        correlation = 0.0
    else:
        correlation = float((((ii - mu_i) * (jj - mu_i)) * p).sum() / var_i)
    homogeneity = float((p / (1.0 + (ii - jj) ** 2)).sum())
    energy = float((p * p).sum())
    return contrast, correlation, homogeneity, energy


def radiomics_features(image: np.ndarray) -> np.ndarray:
    """Fixed-length feature vector (see FEATURE_NAMES) of one image."""
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    if img.min() < -1e-9 or img.max() > 1 + 1e-9:
        raise ValueError("intensities must lie in [0, 1]")

    flat = img.ravel()
    mean = float(flat.mean())
    var = float(flat.var())
    if var > 1e-24:  # below this is rounding fuzz from constant inputs
        std = np.sqrt(var)
        skew = float(((flat - mean) ** 3).mean() / std**3)
        kurt = float(((flat - mean) ** 4).mean() / std**4)
    else:
        var = 0.0
        skew = 0.0
        kurt = 0.0

    levels = quantize(img)
    hist = np.bincount(levels.ravel(), minlength=N_GRAY_LEVELS).astype(np.float64)
    prob = hist / hist.sum()
    nz = prob[prob > 0]
    entropy = float(-(nz * np.log2(nz)).sum())
    energy = float((prob**2).sum())
    p10, p50, p90 = (float(v) for v in np.percentile(flat, [10, 50, 90]))

    texture = np.zeros(4)
    for dy, dx in OFFSETS:
        texture += np.array(_glcm_features(glcm_matrix(levels, dy, dx)))
    texture /= len(OFFSETS)

    return np.array(
        [mean, var, skew, kurt, entropy, energy, p10, p50, p90, *texture]
    )


def feature_matrix(images) -> np.ndarray:
    """Stack per-image radiomics vectors into an n x d matrix."""
    return np.stack([radiomics_features(img) for img in images])
