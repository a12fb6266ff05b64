"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

The per-step Renyi divergence bound at integer order ``alpha`` is the
binomial expansion

    RDP(alpha) = log( sum_{k=0..alpha} C(alpha,k) (1-q)^(alpha-k) q^k
                      * exp((k^2 - k) / (2 sigma^2)) ) / (alpha - 1)

evaluated in log space for stability. Fractional orders are bounded
conservatively by the integer bound at ceil(alpha); q = 1 reduces to the
plain Gaussian mechanism closed form alpha / (2 sigma^2). Composition is
additive per order; conversion to (epsilon, delta) takes the minimum of
RDP(alpha) + log(1/delta) / (alpha - 1) over the order grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

# Covers both the small-epsilon regime (low orders) and the many-steps /
# large-epsilon regime (high orders).
DEFAULT_ORDERS: tuple[float, ...] = (1.25, 1.5, 1.75) + tuple(
    float(a) for a in range(2, 65)
) + (128.0, 256.0)

SIGMA_BRACKET = (1e-2, 1e4)


class EmptyLedgerError(ValueError):
    """Conversion requested from a ledger with no composed events."""


class CalibrationError(ValueError):
    """No noise multiplier in the search bracket meets the target budget."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class DpSgdConfig:
    """Mechanism parameters: clip norm, noise multiplier, sampling rate, steps."""

    clip_norm: float
    noise_multiplier: float
    sampling_rate: float
    steps: int = 0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if not self.noise_multiplier > 0:
            raise ValueError(f"noise_multiplier must be positive, got {self.noise_multiplier}")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError(f"sampling_rate must be in (0, 1], got {self.sampling_rate}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")


@dataclass(frozen=True)
class GroupSpec:
    """Maximum number of protected records per group (images per patient)."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"group size must be >= 1, got {self.k}")


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    """log of the alpha-th subsampling moment, summed in log space."""
    ks = np.arange(alpha + 1, dtype=np.float64)
    log_binom = special.gammaln(alpha + 1) - special.gammaln(ks + 1) - special.gammaln(alpha - ks + 1)
    terms = (
        log_binom
        + ks * math.log(q)
        + (alpha - ks) * math.log1p(-q)
        + (ks * ks - ks) / (2.0 * sigma * sigma)
    )
    return float(special.logsumexp(terms))


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: float) -> float:
    """Per-step RDP of the Poisson-subsampled Gaussian mechanism at one order."""
    if not 0 <= q <= 1:
        raise ValueError(f"sampling rate must be in [0, 1], got {q}")
    if sigma <= 0:
        raise ValueError(f"noise multiplier must be positive, got {sigma}")
    if alpha <= 1:
        raise ValueError(f"Renyi order must exceed 1, got {alpha}")
    if q == 0:
        return 0.0
    if q == 1.0:
        return alpha / (2.0 * sigma * sigma)
    a = int(alpha) if float(alpha).is_integer() else math.ceil(alpha)
    return _log_a_int(q, sigma, a) / (a - 1)


@dataclass
class AccountantLedger:
    """Accumulated RDP per order plus the event log that produced it."""

    orders: tuple[float, ...] = DEFAULT_ORDERS
    rdp_values: np.ndarray = field(default=None)  # type: ignore[assignment]
    event_log: list[tuple[float, float, int]] = field(default_factory=list)

    def __post_init__(self):
        if any(a <= 1 for a in self.orders):
            raise ValueError("all Renyi orders must be > 1")
        if self.rdp_values is None:
            self.rdp_values = np.zeros(len(self.orders))
        else:
            self.rdp_values = np.asarray(self.rdp_values, dtype=np.float64)
            if self.rdp_values.shape != (len(self.orders),):
                raise ValueError("rdp_values shape does not match order grid")

    @property
    def total_steps(self) -> int:
        return sum(steps for _, _, steps in self.event_log)

    def to_dict(self) -> dict:
        return {
            "orders": list(self.orders),
            "rdp_values": self.rdp_values.tolist(),
            "event_log": [list(e) for e in self.event_log],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AccountantLedger":
        return cls(
            orders=tuple(data["orders"]),
            rdp_values=np.asarray(data["rdp_values"]),
            event_log=[(float(q), float(s), int(t)) for q, s, t in data["event_log"]],
        )


def accumulate_rdp(
    ledger: AccountantLedger, q: float, sigma: float, steps: int
) -> AccountantLedger:
    """Compose ``steps`` subsampled-Gaussian applications onto the ledger.

    Returns a new ledger; the input is left untouched (single-writer value).
    """
    if sigma <= 0:
        raise ValueError(f"noise multiplier must be positive, got {sigma}")
    if steps < 0:
        raise ValueError(f"steps must be nonnegative, got {steps}")
    if steps == 0:
        return AccountantLedger(
            orders=ledger.orders,
            rdp_values=ledger.rdp_values.copy(),
            event_log=list(ledger.event_log),
        )
    per_step = np.array([rdp_subsampled_gaussian(q, sigma, a) for a in ledger.orders])
    return AccountantLedger(
        orders=ledger.orders,
        rdp_values=ledger.rdp_values + steps * per_step,
        event_log=list(ledger.event_log) + [(q, sigma, steps)],
    )


def epsilon_at_delta(ledger: AccountantLedger, delta: float) -> tuple[float, float]:
    """Convert accumulated RDP to (epsilon, minimizing order) at a delta."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if not ledger.event_log:
        raise EmptyLedgerError("no events composed; nothing to convert")
    orders = np.asarray(ledger.orders)
    eps = ledger.rdp_values + math.log(1.0 / delta) / (orders - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), float(orders[best])


def spent_epsilon(q: float, sigma: float, steps: int, delta: float,
                  orders: tuple[float, ...] = DEFAULT_ORDERS) -> tuple[float, float]:
    """One-shot helper: epsilon after ``steps`` at fixed (q, sigma)."""
    ledger = accumulate_rdp(AccountantLedger(orders=orders), q, sigma, steps)
    return epsilon_at_delta(ledger, delta)


def calibrate_sigma(
    target: PrivacyBudget,
    q: float,
    steps: int,
    orders: tuple[float, ...] = DEFAULT_ORDERS,
    rel_slack: float = 0.02,
    max_iter: int = 200,
) -> float:
    """Binary-search the noise multiplier hitting the target budget.

    Returns sigma with spent epsilon in [(1 - rel_slack) * target, target].
    Epsilon is strictly decreasing in sigma, so plain bisection applies.
    """
    if steps <= 0:
        raise CalibrationError("cannot calibrate a zero-step mechanism")
    lo, hi = SIGMA_BRACKET

    def eps_of(sigma: float) -> float:
        return spent_epsilon(q, sigma, steps, target.delta, orders)[0]

    eps_lo, eps_hi = eps_of(lo), eps_of(hi)
    band_lo = (1.0 - rel_slack) * target.epsilon
    if eps_lo < band_lo:
        raise CalibrationError(
            f"target epsilon {target.epsilon} unreachable: even sigma={lo} "
            f"spends only {eps_lo:.4g}"
        )
    if eps_hi > target.epsilon:
        raise CalibrationError(
            f"target epsilon {target.epsilon} unreachable: even sigma={hi} "
            f"spends {eps_hi:.4g}"
        )
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        eps_mid = eps_of(mid)
        if band_lo <= eps_mid <= target.epsilon:
            return mid
        if eps_mid > target.epsilon:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"bisection failed to land inside [{band_lo:.4g}, {target.epsilon}]"
    )


def group_privacy(budget: PrivacyBudget, k: int) -> PrivacyBudget:
    """Classical k-group degradation: (eps, delta) -> (k eps, k e^((k-1) eps) delta).

    Converts an image-level guarantee to one protecting all k images of a
    patient jointly.
    """
    GroupSpec(k)
    if k == 1:
        return budget
    return PrivacyBudget(
        epsilon=k * budget.epsilon,
        delta=k * math.exp((k - 1) * budget.epsilon) * budget.delta,
    )
