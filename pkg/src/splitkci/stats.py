"""Conditional-independence statistics built from residual Gram matrices.

All statistics are HSIC-style contractions of three ``n x n`` matrices: the
A-side residual Gram, the Gram of the conditioning variable and the B-side
residual Gram.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

METHODS = ("kci", "circe", "splitkci", "splitkci_a_only")
ESTIMATORS = ("v_biased", "u_unbiased")


@dataclass(frozen=True)
class StatisticConfig:
    method: str = "splitkci"
    estimator: str = "v_biased"
    center_with_H: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")

    @property
    def splits_a(self) -> bool:
        return self.method in ("splitkci", "splitkci_a_only")

    @property
    def splits_b(self) -> bool:
        return self.method == "splitkci"


def _square(M, name, n=None):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"{name} must be square, got shape {M.shape}")
    if n is not None and M.shape[0] != n:
        raise InputError(f"{name} is {M.shape[0]}x{M.shape[0]}, expected {n}x{n}")
    return M


def center(K) -> np.ndarray:
    """``H K H`` with ``H = I - 11^T / n``."""
    K = np.asarray(K, dtype=np.float64)
    return K - K.mean(axis=1, keepdims=True) - K.mean(axis=0, keepdims=True) + K.mean()


def qform(M, q) -> float:
    """``q^T M q``. Every V-statistic goes through here, which keeps the
    observed value and its ``q = 1`` bootstrap replicate bitwise identical."""
    return float(np.dot(q, M @ q))


def product_matrix(Ka, Kc, Kb, center_with_H: bool = True) -> np.ndarray:
    """``(H Ka H) * Kc * Kb`` (elementwise), validated to a common size."""
    Ka = _square(Ka, "Ka")
    n = Ka.shape[0]
    Kc = _square(Kc, "Kc", n)
    Kb = _square(Kb, "Kb", n)
    A = center(Ka) if center_with_H else Ka
    return A * Kc * Kb


def v_statistic(Ka, Kc, Kb, q=None) -> float:
    """``(1/n^2) sum_ij q_i q_j Ka_ij Kc_ij Kb_ij``; ``q`` defaults to ones."""
    M = product_matrix(Ka, Kc, Kb, center_with_H=False)
    n = M.shape[0]
    q = np.ones(n) if q is None else np.asarray(q, dtype=np.float64)
    if q.shape != (n,):
        raise InputError(f"q must have length {n}, got shape {q.shape}")
    return qform(M, q) / n**2


def _zero_diag(K):
    K = np.array(K, dtype=np.float64, copy=True)
    np.fill_diagonal(K, 0.0)
    return K


def u_statistic(K, L) -> float:
    """Unbiased HSIC estimator with zero-diagonal Grams::

        1/(n(n-3)) [tr(KL) + 1'K1 1'L1 / ((n-1)(n-2)) - 2/(n-2) 1'KL1]
    """
    K = _square(K, "K")
    n = K.shape[0]
    L = _square(L, "L", n)
    if n < 4:
        raise InputError(f"the unbiased estimator needs n >= 4, got {n}")
    K = _zero_diag(K)
    L = _zero_diag(L)
    trace = float(np.sum(K * L.T))
    sums = float(K.sum()) * float(L.sum()) / ((n - 1) * (n - 2))
    cross = float(K.sum(axis=0) @ L.sum(axis=1))
    return (trace + sums - 2.0 * cross / (n - 2)) / (n * (n - 3))


def u_statistic_matrix(K, L) -> np.ndarray:
    """Matrix ``G`` with ``q^T G q`` equal to :func:`u_statistic` applied to
    ``(q q^T) * K`` and ``L``; at ``q = 1`` this is the statistic itself."""
    K = _zero_diag(_square(K, "K"))
    n = K.shape[0]
    L = _zero_diag(_square(L, "L", n))
    if n < 4:
        raise InputError(f"the unbiased estimator needs n >= 4, got {n}")
    G = K * L.T
    G += K * (float(L.sum()) / ((n - 1) * (n - 2)))
    G -= (2.0 / (n - 2)) * (K * L.sum(axis=1)[None, :])
    G /= n * (n - 3)
    return G


def compute_statistic(centered_A, Kc, centered_B, config: StatisticConfig = StatisticConfig()) -> float:
    """Test statistic from the A-side residual Gram, the C Gram and the B-side
    residual Gram.

    ``v_biased``: ``(1/n^2) 1'((H Ka H) * Kc * Kb) 1`` (``H`` optional).
    ``u_unbiased``: :func:`u_statistic` with ``K = H Ka H`` and ``L = Kc * Kb``,
    evaluated as ``1' G 1`` with ``G`` from :func:`u_statistic_matrix`.
    """
    if config.estimator == "v_biased":
        M = product_matrix(centered_A, Kc, centered_B, config.center_with_H)
        n = M.shape[0]
        return qform(M, np.ones(n)) / n**2
    Ka = _square(centered_A, "centered_A")
    n = Ka.shape[0]
    Kc = _square(Kc, "Kc", n)
    Kb = _square(centered_B, "centered_B", n)
    K = center(Ka) if config.center_with_H else Ka
    # through the bootstrap's quadratic-form matrix, so q = 1 reproduces it exactly
    return qform(u_statistic_matrix(K, Kc * Kb), np.ones(n))


def half_split(m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two disjoint halves of ``range(m)``: shuffle, then even/odd positions."""
    if m < 2:
        raise ConfigError(f"cannot split {m} training points into halves")
    perm = rng.permutation(m)
    return np.sort(perm[0::2]), np.sort(perm[1::2])
