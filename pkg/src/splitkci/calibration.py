"""p-values for the residual-covariance statistics.

Two routes: the wild bootstrap (Rademacher sign flips of the statistic's
terms) and a moment-matched Gamma approximation of the null distribution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import stats
from .errors import ConfigError, DegenerateError, InputError
from .rng import stream

BOOTSTRAP_STREAM = "wild_bootstrap"
_ZERO_TOL = 1e-10


@dataclass(frozen=True)
class BootstrapConfig:
    num_resamples: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.num_resamples) != self.num_resamples or self.num_resamples < 1:
            raise ConfigError(f"num_resamples must be a positive integer, got {self.num_resamples!r}")


def rademacher(n: int, config: BootstrapConfig) -> np.ndarray:
    """``(num_resamples, n)`` matrix of independent +-1 signs from the
    dedicated bootstrap stream of ``config.rng_seed``."""
    rng = stream(config.rng_seed, BOOTSTRAP_STREAM)
    return rng.choice(np.array([-1.0, 1.0]), size=(config.num_resamples, n))


def bootstrap_distribution(Ka, Kc, Kb, config: BootstrapConfig = BootstrapConfig(), *,
                           estimator: str = "v_biased", center_with_H: bool = True,
                           draws=None) -> np.ndarray:
    """Wild-bootstrap replicates of the statistic.

    ``Ka`` is the raw A-side residual Gram; the same ``H`` centering as the
    observed statistic is applied here. ``draws`` overrides the Rademacher
    matrix (one sign vector per row).
    """
    if estimator == "v_biased":
        M = stats.product_matrix(Ka, Kc, Kb, center_with_H)
        scale = 1.0 / M.shape[0] ** 2
    elif estimator == "u_unbiased":
        Ka = stats._square(Ka, "Ka")
        K = stats.center(Ka) if center_with_H else Ka
        M = stats.u_statistic_matrix(K, stats._square(Kc, "Kc", len(K)) * stats._square(Kb, "Kb", len(K)))
        scale = 1.0
    else:
        raise ConfigError(f"unknown estimator {estimator!r}")
    n = M.shape[0]
    Q = rademacher(n, config) if draws is None else np.asarray(draws, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != n:
        raise InputError(f"draws must have shape (K, {n}), got {Q.shape}")
    return np.array([stats.qform(M, q) * scale for q in Q])


def bootstrap_pvalue(observed: float, replicates, estimator: str = "v_biased") -> float:
    """``(1 + #{observed <= V*_k}) / (K + 1)``.

    For the biased statistic, values within 1e-10 of zero (observed or
    replicate) are compared as exact zeros, so round-off in a vanishing
    residual Gram cannot fake a rejection.
    """
    replicates = np.asarray(replicates)
    if estimator == "v_biased":
        if abs(observed) <= _ZERO_TOL:
            observed = 0.0
        replicates = np.where(np.abs(replicates) <= _ZERO_TOL, 0.0, replicates)
    return (1.0 + float(np.count_nonzero(observed <= replicates))) / (replicates.size + 1.0)


def wild_bootstrap_pvalue(Ka, Kc, Kb, observed: float, config: BootstrapConfig = BootstrapConfig(), *,
                          estimator: str = "v_biased", center_with_H: bool = True, draws=None) -> float:
    """Wild-bootstrap p-value of ``observed``; never zero."""
    reps = bootstrap_distribution(Ka, Kc, Kb, config, estimator=estimator,
                                  center_with_H=center_with_H, draws=draws)
    return bootstrap_pvalue(observed, reps, estimator)


# --- Gamma approximation ----------------------------------------------------


@dataclass(frozen=True)
class GammaParams:
    shape: float
    scale: float
    mean: float
    variance: float
    n: int

    @classmethod
    def from_moments(cls, mean: float, variance: float, n: int) -> "GammaParams":
        """Moment match ``(1/n^2) tr(KL)``: Gamma mean ``mean/n``, variance ``variance/n^2``."""
        if not mean > 0:
            raise DegenerateError(f"Gamma approximation needs a positive mean, got {mean}")
        if not variance > 0:
            raise DegenerateError(f"Gamma approximation needs a positive variance, got {variance}")
        return cls(shape=mean**2 / variance, scale=variance / (n * mean),
                   mean=mean, variance=variance, n=n)


def gamma_params(K, L) -> GammaParams:
    """Null moments from the two (already centred) factor matrices."""
    K = stats._square(K, "K")
    n = K.shape[0]
    L = stats._square(L, "L", n)
    mean = float(np.dot(np.diag(K), np.diag(L))) / n
    variance = 2.0 * float(np.sum(np.square(K) * np.square(L))) / n**2
    return GammaParams.from_moments(mean, variance, n)


def gamma_pvalue(K, L, observed: float) -> float:
    """Upper tail ``1 - F(observed)`` of the moment-matched Gamma law."""
    p = gamma_params(K, L)
    if observed <= 0:
        return 1.0
    return gammaincc(p.shape, observed / p.scale)


def _gamma_series(a, x):
    # P(a, x) for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(a * math.log(x) - x - math.lgamma(a))


def _gamma_cf(a, x):
    # Q(a, x) for x >= a + 1, modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(a * math.log(x) - x - math.lgamma(a))


def gammainc(a: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(a, x)``."""
    if not a > 0:
        raise ConfigError(f"shape must be positive, got {a}")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return min(_gamma_series(a, x), 1.0)
    return max(1.0 - _gamma_cf(a, x), 0.0)


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x) = 1 - P(a, x)``."""
    if not a > 0:
        raise ConfigError(f"shape must be positive, got {a}")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return max(1.0 - _gamma_series(a, x), 0.0)
    return min(_gamma_cf(a, x), 1.0)


def gamma_cdf(x: float, shape: float, scale: float) -> float:
    if not scale > 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    return gammainc(shape, x / scale)
