"""DP-SGD mechanics: per-sample clipping, noisy aggregation, the step rule.

These operate on flat numpy gradient vectors so that any training harness
(the classifier uses torch) can route its per-sample gradients through the
single authoritative clip/noise path. The accountant ledger is advanced by
exactly one event per step.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .accountant import AccountantLedger, DpSgdConfig, accumulate_rdp


class NonFiniteGradientError(RuntimeError):
    """A per-sample gradient contained NaN or Inf; the step was aborted."""


def clip_per_sample(
    per_sample_grads: Sequence[np.ndarray] | np.ndarray, clip_norm: float
) -> list[np.ndarray]:
    """Scale each gradient by min(1, C / ||g||_2); directions are preserved."""
    if not clip_norm > 0:
        raise ValueError(f"clip norm must be positive, got {clip_norm}")
    clipped = []
    for g in per_sample_grads:
        g = np.asarray(g, dtype=np.float64)
        norm = float(np.linalg.norm(g))
        if norm > clip_norm:
            g = g * (clip_norm / norm)
        clipped.append(g)
    return clipped


def noisy_aggregate(
    clipped_grads: Sequence[np.ndarray],
    sigma: float,
    clip_norm: float,
    expected_batch: float,
    rng: np.random.Generator,
    dim: int | None = None,
) -> np.ndarray:
    """(sum of clipped gradients + N(0, sigma^2 C^2 I)) / expected_batch.

    Poisson subsampling can hand us an empty batch; then the result is pure
    noise over ``dim`` coordinates.
    """
    if not expected_batch > 0:
        raise ValueError(f"expected_batch must be positive, got {expected_batch}")
    grads = [np.asarray(g, dtype=np.float64) for g in clipped_grads]
    if grads:
        dim = grads[0].size
        total = np.sum(grads, axis=0)
    else:
        if dim is None:
            raise ValueError("empty batch needs an explicit gradient dimension")
        total = np.zeros(dim)
    noise = rng.normal(0.0, sigma * clip_norm, size=dim)
    return (total + noise) / expected_batch


def poisson_sample(n: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of records independently included with probability q."""
    if q >= 1.0:
        return np.arange(n)
    return np.nonzero(rng.random(n) < q)[0]


def dp_sgd_step(
    params: np.ndarray,
    batch: Sequence,
    grad_fn: Callable[[np.ndarray, object], np.ndarray],
    config: DpSgdConfig,
    ledger: AccountantLedger,
    rng: np.random.Generator,
    lr: float = 0.1,
    expected_batch: float | None = None,
) -> tuple[np.ndarray, AccountantLedger]:
    """One private SGD step on a flat parameter vector.

    ``grad_fn(params, sample)`` yields the per-sample gradient; the batch is
    assumed to have been drawn by Poisson subsampling at the configured rate.
    ``expected_batch`` defaults to the realized batch size, which is exact
    only for sampling_rate 1; callers using q < 1 should pass q * N.
    """
    per_sample = [np.asarray(grad_fn(params, sample), dtype=np.float64) for sample in batch]
    for g in per_sample:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite per-sample gradient; step aborted")
    clipped = clip_per_sample(per_sample, config.clip_norm)
    if expected_batch is None:
        expected_batch = float(len(batch))
    noisy = noisy_aggregate(
        clipped, config.noise_multiplier, config.clip_norm, expected_batch, rng, dim=params.size
    )
    new_ledger = accumulate_rdp(ledger, config.sampling_rate, config.noise_multiplier, 1)
    return params - lr * noisy, new_ledger
