"""Regression-based conditional independence tests: GCM and RBPT2.

Both consume point predictions from regressors fitted on a training set.
Any callable mapping an input matrix to predictions works as a regressor;
:class:`~splitkci.cme.CmeModel` with a linear target kernel is the default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import cme
from . import kernels as kern
from .datagen import Dataset
from .errors import ConfigError, DegenerateError, InputError
from .rng import stream

MC_DRAWS = 10_000


@dataclass(frozen=True)
class GcmResult:
    T: np.ndarray
    S: float
    p_value: float
    Sigma: np.ndarray | None = None

    @property
    def statistic(self) -> float:
        return self.S


@dataclass(frozen=True)
class RbptResult:
    T_i: np.ndarray
    S: float
    p_value: float
    corrected: bool

    @property
    def statistic(self) -> float:
        return self.S


def _predict(model, X, d_out, name):
    P = np.asarray(model(X), dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape != (X.shape[0], d_out):
        raise InputError(f"{name} returned shape {P.shape}, expected {(X.shape[0], d_out)}")
    return P


def gcm_from_residuals(res_a, res_b, mc_draws: int = MC_DRAWS, rng_seed: int = 0) -> GcmResult:
    """GCM from residual matrices ``(n, d_a)`` and ``(n, d_b)``.

    ``R_ikl = res_a[i, k] res_b[i, l]`` and ``T_kl = sqrt(n) mean_i R / sd_i R``
    (population sd). With ``d_a d_b = 1`` the p-value is two-sided normal;
    otherwise ``S = max |T_kl|`` is calibrated by Monte Carlo from
    ``N(0, Sigma)`` with ``Sigma`` the correlation matrix of the products.
    """
    res_a = kern.as_matrix(res_a, "res_a")
    res_b = kern.as_matrix(res_b, "res_b")
    n = res_a.shape[0]
    if res_b.shape[0] != n:
        raise InputError(f"residuals have {n} and {res_b.shape[0]} rows")
    if n < 2:
        raise InputError("GCM needs at least 2 samples")
    R = (res_a[:, :, None] * res_b[:, None, :]).reshape(n, -1)
    mean = R.mean(axis=0)
    var = np.mean(np.square(R), axis=0) - np.square(mean)
    if np.any(var <= 0):
        raise DegenerateError("residual products have zero variance")
    T = np.sqrt(n) * mean / np.sqrt(var)
    shape = (res_a.shape[1], res_b.shape[1])
    if T.size == 1:
        t = float(T[0])
        return GcmResult(T.reshape(shape), abs(t), float(2.0 * norm.sf(abs(t))))

    S = float(np.max(np.abs(T)))
    Rc = R - mean
    cov = Rc.T @ Rc / n
    sd = np.sqrt(np.diag(cov))
    Sigma = cov / np.outer(sd, sd)
    np.fill_diagonal(Sigma, 1.0)
    if int(mc_draws) != mc_draws or mc_draws < 1:
        raise ConfigError(f"mc_draws must be a positive integer, got {mc_draws!r}")
    rng = stream(rng_seed, "gcm_null")
    Z = rng.multivariate_normal(np.zeros(T.size), Sigma, size=int(mc_draws), method="eigh")
    exceed = np.count_nonzero(np.max(np.abs(Z), axis=1) >= S)
    return GcmResult(T.reshape(shape), S, (1.0 + exceed) / (mc_draws + 1.0), Sigma)


def gcm_test(dataset: Dataset, f_hat, g_hat, alpha: float = 0.05, mc_draws: int = MC_DRAWS,
             rng_seed: int = 0) -> GcmResult:
    """GCM on ``dataset`` with regressors ``f_hat: C -> A`` and ``g_hat: C -> B``.

    ``alpha`` is accepted for interface symmetry; the decision is left to the
    caller.
    """
    res_a = dataset.A - _predict(f_hat, dataset.C, dataset.A.shape[1], "f_hat")
    res_b = dataset.B - _predict(g_hat, dataset.C, dataset.B.shape[1], "g_hat")
    return gcm_from_residuals(res_a, res_b, mc_draws, rng_seed)


def rbpt2_from_predictions(A, g_pred, h_pred, corrected: bool = True) -> RbptResult:
    """RBPT2 with squared loss from predictions of ``g(B, C)`` and ``h(C)``.

    ``T_i = |h_i - a_i|^2 - |g_i - a_i|^2`` plus ``|g_i - h_i|^2`` when
    ``corrected``; ``S = sqrt(n) mean(T) / sd(T)``, ``p = 1 - Phi(S)``.
    """
    A = kern.as_matrix(A, "A")
    g_pred = kern.as_matrix(g_pred, "g_pred")
    h_pred = kern.as_matrix(h_pred, "h_pred")
    if not (A.shape == g_pred.shape == h_pred.shape):
        raise InputError(f"shapes differ: A {A.shape}, g {g_pred.shape}, h {h_pred.shape}")
    T = np.sum(np.square(h_pred - A), axis=1) - np.sum(np.square(g_pred - A), axis=1)
    if corrected:
        T = T + np.sum(np.square(g_pred - h_pred), axis=1)
    n = T.size
    sd = float(np.std(T))
    if not sd > 0:
        raise DegenerateError("loss differences have zero variance")
    S = float(np.sqrt(n) * T.mean() / sd)
    return RbptResult(T, S, float(norm.sf(S)), bool(corrected))


def rbpt2_test(dataset: Dataset, g_model, h_model, corrected: bool = True) -> RbptResult:
    """RBPT2 on held-out ``dataset``; ``g_model`` takes ``[B | C]``, ``h_model`` takes ``C``."""
    d = dataset.A.shape[1]
    g_pred = _predict(g_model, np.hstack([dataset.B, dataset.C]), d, "g_model")
    h_pred = _predict(h_model, dataset.C, d, "h_model")
    return rbpt2_from_predictions(dataset.A, g_pred, h_pred, corrected)


# --- default regressors ---------------------------------------------------------


def fit_gcm_regressors(train: Dataset, c_grid=None, lambda_grid=None):
    """KRR fits ``C -> A`` and ``C -> B`` with linear (vector-valued) targets."""
    c_grid = c_grid or [kern.gaussian(s) for s in cme.SIGMA2_GRID]
    f = cme.fit_krr(train.C, train.A, kern.linear(), c_grid, lambda_grid)
    g = cme.fit_krr(train.C, train.B, kern.linear(), c_grid, lambda_grid)
    return f, g


def fit_rbpt2_models(train: Dataset, c_grid=None, lambda_grid=None):
    """``g``: linear-kernel KRR of ``A`` on ``[B | C]``; ``h``: Gaussian-kernel
    KRR of the in-sample ``g`` predictions on ``C``."""
    c_grid = c_grid or [kern.gaussian(s) for s in cme.SIGMA2_GRID]
    BC = np.hstack([train.B, train.C])
    g = cme.fit_krr(BC, train.A, kern.linear(), [kern.linear()], lambda_grid)
    h = cme.fit_krr(train.C, g(BC), kern.linear(), c_grid, lambda_grid)
    return g, h
