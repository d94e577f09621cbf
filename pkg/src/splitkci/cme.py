"""Conditional mean embeddings by kernel ridge regression.

A fitted :class:`CmeModel` estimates ``mu(c) = E[phi(A) | C = c]`` as
``K_cC (K_C + lam m I)^{-1} Phi_A``. Everything downstream only needs inner
products of such embeddings with feature maps or with each other, which are
all expressible through Gram matrices.

The zero predictor (``mu = 0``) is represented by ``None`` wherever a model
is accepted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels as kern
from .errors import ConfigError, DegenerateError, FitError, InputError
from .kernels import KernelSpec

#: Default Gaussian bandwidths searched for kernels over the conditioning variable.
SIGMA2_GRID = (0.1, 0.2, 0.5, 1.0, 1.5, 2.0)

#: Machine epsilon anchoring the default ridge grid (double precision).
MACHINE_EPS = float(np.finfo(np.float64).eps)
FLOAT32_EPS = float(np.finfo(np.float32).eps)

_HAT_TOL = 1e-12
_TIE_RTOL = 1e-12


def lambda_grid(K_C, eps: float = MACHINE_EPS, decades=range(1, 8)) -> list[float]:
    """Ridge grid ``[10 delta, ..., 1e7 delta]`` with ``delta = ||K_C||_2 * eps``."""
    K_C = np.asarray(K_C)
    top = float(np.linalg.eigvalsh(K_C)[-1]) if K_C.shape[0] <= 4000 else float(
        scipy.linalg.norm(K_C, 2))
    return _grid_from_norm(top, eps, decades)


def _grid_from_norm(norm2, eps, decades=range(1, 8)):
    delta = max(norm2, np.finfo(float).tiny) * eps
    return [delta * 10.0 ** k for k in decades]


@dataclass(frozen=True, eq=False)
class CmeModel:
    """A fitted KRR conditional mean embedding. Immutable after fitting."""

    C_train: np.ndarray
    A_train: np.ndarray
    c_kernel: KernelSpec
    a_kernel: KernelSpec
    lam: float
    factor: tuple = field(repr=False)
    loo: float | None = None

    @property
    def m(self) -> int:
        return self.C_train.shape[0]

    def solve(self, rhs) -> np.ndarray:
        """Apply ``(K_C + lam m I)^{-1}``."""
        return scipy.linalg.cho_solve(self.factor, rhs, check_finite=False)

    def dual(self, C_query) -> np.ndarray:
        """``W K_{C_train, C_query}``, shape ``(m, n_query)``."""
        C_query = _check_cols(C_query, self.C_train.shape[1], "C_query")
        return self.solve(kern.gram(self.c_kernel, self.C_train, C_query))

    def predict_mean(self, C_query) -> np.ndarray:
        """Finite-dimensional prediction ``K_qC W A_train``.

        This is the embedding itself when the target kernel is linear, i.e.
        plain (multi-output) kernel ridge regression of ``A`` on ``C``.
        """
        return self.dual(C_query).T @ self.A_train

    def __call__(self, C_query) -> np.ndarray:
        return self.predict_mean(C_query)

    def describe(self) -> dict:
        return {"c_kernel": self.c_kernel.describe(), "lambda": self.lam, "m": self.m}


def _check_cols(X, d, name):
    X = kern.as_matrix(X, name)
    if X.shape[1] != d:
        raise InputError(f"{name} has {X.shape[1]} columns, expected {d}")
    return X


def _check_train(C_train, A_train):
    C_train = kern.as_matrix(C_train, "C_train")
    A_train = kern.as_matrix(A_train, "A_train")
    if C_train.shape[0] != A_train.shape[0]:
        raise InputError(f"C_train has {C_train.shape[0]} rows, A_train has {A_train.shape[0]}")
    if C_train.shape[0] < 2:
        raise InputError("kernel ridge regression needs at least 2 training points")
    return C_train, A_train


def _loo_path(K_C, K_A, lambdas):
    """LOO scores for every ridge value, sharing one eigendecomposition.

    With ``K_C = U diag(s) U^T`` the residual operator ``I - H`` is
    ``U diag(lam m / (s + lam m)) U^T``; the RKHS residual norms are the
    diagonal of ``(I - H) K_A (I - H)``. Returns a list of score-or-exception.
    """
    m = K_C.shape[0]
    s, U = np.linalg.eigh(K_C)
    KA_rot = U.T @ K_A @ U
    U2 = np.square(U)
    out = []
    for lam in lambdas:
        ridge = lam * m
        denom = s + ridge
        if not ridge > 0 or np.any(denom <= 0):
            out.append(DegenerateError(f"lambda={lam:.3g}: K_C + lambda m I is not positive definite"))
            continue
        r = ridge / denom
        one_minus_h = U2 @ r
        if one_minus_h.min() <= _HAT_TOL:
            out.append(DegenerateError(
                f"lambda={lam:.3g}: hat-matrix diagonal reaches 1 (regularization too weak)"))
            continue
        V = U * r
        resid = np.einsum("ij,ij->i", V @ KA_rot, V)
        out.append(float(np.sum(np.maximum(resid, 0.0) / np.square(one_minus_h))))
    return out, float(s[-1])


def loo_score(c_kernel: KernelSpec, lam: float, C_train, A_train, a_kernel: KernelSpec) -> float:
    """Closed-form leave-one-out error of KRR with RKHS-valued targets.

    ``sum_i ||phi(a_i) - mu_hat(c_i)||^2 / (1 - H_ii)^2`` where
    ``H = K_C (K_C + lam m I)^{-1}``. Raises :class:`DegenerateError` if some
    ``H_ii`` is within 1e-12 of one.
    """
    C_train, A_train = _check_train(C_train, A_train)
    if not lam > 0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    K_C = kern.gram(c_kernel, C_train)
    K_A = kern.gram(a_kernel, A_train)
    (score,), _ = _loo_path(K_C, K_A, [lam])
    if isinstance(score, Exception):
        raise score
    return score


def _factor(C_train, c_kernel, lam):
    m = C_train.shape[0]
    idx = np.diag_indices(m)
    for attempt in range(2):
        M = kern.gram(c_kernel, C_train)
        jitter = 0.0 if attempt == 0 else 1e-10 * np.trace(M) / m
        M[idx] += lam * m + jitter
        try:
            return scipy.linalg.cho_factor(M, lower=True, overwrite_a=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    raise DegenerateError(f"Cholesky failed for lambda={lam:.3g} even with jitter")


def fit_krr(C_train, A_train, a_kernel: KernelSpec, c_kernel_grid, lambda_grid=None,
            eps: float = MACHINE_EPS) -> CmeModel:
    """Fit a CME, choosing the C-kernel and ridge by leave-one-out.

    ``c_kernel_grid`` is a KernelSpec or a sequence of them. ``lambda_grid``
    is a fixed sequence of ridge values, or ``None`` for the default
    ``[10 delta .. 1e7 delta]`` recomputed per candidate kernel from
    ``delta = ||K_C||_2 * eps``.

    Ties in the LOO score (relative 1e-12) go to the larger ridge, then to
    the earlier grid position. With a single kernel and a single ridge value
    no LOO is computed.
    """
    C_train, A_train = _check_train(C_train, A_train)
    if isinstance(c_kernel_grid, KernelSpec):
        c_kernel_grid = [c_kernel_grid]
    c_kernel_grid = list(c_kernel_grid)
    if not c_kernel_grid:
        raise ConfigError("empty kernel grid")
    if lambda_grid is not None:
        lambda_grid = [float(v) for v in lambda_grid]
        if not lambda_grid:
            raise ConfigError("empty lambda grid")
        if any(not v > 0 for v in lambda_grid):
            raise ConfigError(f"lambda values must be positive: {lambda_grid}")

    if len(c_kernel_grid) == 1 and lambda_grid is not None and len(lambda_grid) == 1:
        spec, lam = c_kernel_grid[0], lambda_grid[0]
        return CmeModel(_freeze(C_train), _freeze(A_train), spec, a_kernel, lam,
                        _factor(C_train, spec, lam))

    K_A = kern.gram(a_kernel, A_train)
    candidates = []  # (score, lam, order, spec)
    failures = []
    order = 0
    for spec in c_kernel_grid:
        K_C = kern.gram(spec, C_train)
        if lambda_grid is None:
            top = float(np.linalg.eigvalsh(K_C)[-1])
            lams = _grid_from_norm(top, eps)
        else:
            lams = lambda_grid
        scores, _ = _loo_path(K_C, K_A, lams)
        for lam, score in zip(lams, scores):
            if isinstance(score, Exception):
                failures.append((spec.describe(), lam, str(score)))
            elif not np.isfinite(score):
                failures.append((spec.describe(), lam, "non-finite LOO score"))
            else:
                candidates.append((score, lam, order, spec))
            order += 1
    if not candidates:
        raise FitError(f"all {order} hyperparameter candidates failed", failures)

    best = min(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] <= best + _TIE_RTOL * abs(best)]
    tied.sort(key=lambda c: (-c[1], c[2]))
    score, lam, _, spec = tied[0]
    return CmeModel(_freeze(C_train), _freeze(A_train), spec, a_kernel, lam,
                    _factor(C_train, spec, lam), loo=score)


def _freeze(X):
    X = np.array(X, dtype=np.float64, copy=True)
    X.setflags(write=False)
    return X


def predict_cross_kernel(model: CmeModel, C_query, A_other) -> np.ndarray:
    """``<mu_hat(c_i), phi(a_j)>`` for query rows ``c_i`` and targets ``a_j``."""
    A_other = _check_cols(A_other, model.A_train.shape[1], "A_other")
    Z = model.dual(C_query)
    return kern.gram_matmul(model.a_kernel, A_other, model.A_train, Z).T


def centered_gram(model1: CmeModel | None, model2: CmeModel | None, A_test, C_test,
                  a_kernel: KernelSpec | None = None) -> np.ndarray:
    """Residual inner products on test points, symmetrized over the pair.

    ``K12[i, j] = <phi(a_i) - mu1(c_i), phi(a_j) - mu2(c_j)>`` and the
    result is ``(K12 + K12^T) / 2`` (swapping the models transposes ``K12``).
    ``None`` stands for the zero predictor; with two of them the result is
    the plain Gram of ``A_test``, and ``a_kernel`` must be given.
    """
    A_test = kern.as_matrix(A_test, "A_test")
    C_test = kern.as_matrix(C_test, "C_test")
    if A_test.shape[0] != C_test.shape[0]:
        raise InputError(f"A_test has {A_test.shape[0]} rows, C_test has {C_test.shape[0]}")
    kernels_seen = {m.a_kernel for m in (model1, model2) if m is not None}
    if a_kernel is not None:
        kernels_seen.add(a_kernel)
    if not kernels_seen:
        raise ConfigError("two zero predictors need an explicit a_kernel")
    if len(kernels_seen) > 1:
        raise ConfigError("models use different target kernels")
    return _centered(model1, model2, A_test, C_test, kernels_seen.pop())


def _centered(model1, model2, A_test, C_test, a_kernel):
    K = kern.gram(a_kernel, A_test)
    Z1 = model1.dual(C_test) if model1 is not None else None
    Z2 = Z1 if model2 is model1 else (model2.dual(C_test) if model2 is not None else None)
    if Z1 is not None:
        # <mu1(c_i), phi(a_j)>
        K -= kern.gram_matmul(a_kernel, A_test, model1.A_train, Z1).T
    if Z2 is not None:
        # <phi(a_i), mu2(c_j)>
        K -= kern.gram_matmul(a_kernel, A_test, model2.A_train, Z2)
    if Z1 is not None and Z2 is not None:
        K += Z1.T @ kern.gram_matmul(a_kernel, model1.A_train, model2.A_train, Z2)
    return 0.5 * (K + K.T)
