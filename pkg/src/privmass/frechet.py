"""Frechet distance between Gaussian fits of feature distributions.

d^2 = ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))

The cross-term square root is taken via a symmetrized eigendecomposition of
S_a^(1/2) S_b S_a^(1/2) with eigenvalue clamping at zero, which avoids the
complex arithmetic a non-symmetric product would produce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-10
PSD_TOL = -1e-8
NOISE_FLOOR = -1e-6


class InsufficientSamplesError(ValueError):
    """Gaussian moment fitting needs at least two rows."""


@dataclass(frozen=True)
class GaussianSummary:
    """First two moments of a feature distribution."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"covariance shape {sigma.shape} does not match dim {mu.size}")
        if not np.allclose(sigma, sigma.T, atol=SYMMETRY_TOL):
            raise ValueError("covariance is not symmetric")
        eigvals = np.linalg.eigvalsh(sigma)
        if eigvals.min() < PSD_TOL:
            raise ValueError(f"covariance has eigenvalue {eigvals.min()}, not PSD")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return int(self.mu.size)


def fit_gaussian(features: np.ndarray) -> GaussianSummary:
    """Column means and unbiased sample covariance of an n x d matrix."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = feats.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need >= 2 feature rows, got {n}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2.0
    return GaussianSummary(mu=mu, sigma=sigma)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(mat)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    root_a = _sqrtm_psd(a.sigma)
    inner = root_a @ b.sigma @ root_a
    inner = (inner + inner.T) / 2.0
    cross_eigvals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    dist = (
        float(diff @ diff)
        + float(np.trace(a.sigma))
        + float(np.trace(b.sigma))
        - 2.0 * float(np.sum(np.sqrt(cross_eigvals)))
    )
    if dist < NOISE_FLOOR:
        raise ValueError(f"Frechet distance {dist} below numerical noise floor")
    return max(dist, 0.0)
