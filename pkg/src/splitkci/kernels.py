"""Kernel functions and Gram matrices.

The Gaussian kernel is parametrised WITHOUT the usual factor of two::

    k(x, y) = exp(-||x - y||^2 / sigma2)

so ``sigma2=1`` here corresponds to a bandwidth of ``1/sqrt(2)`` in the
``exp(-d^2 / (2 s^2))`` convention.

All Gram matrices are accumulated coordinate by coordinate from exact
differences/products, which makes ``gram(k, X, Y)`` the bitwise transpose of
``gram(k, Y, X)`` and puts exact ones on the Gaussian diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

FAMILIES = ("gaussian", "ard_gaussian", "linear", "delta", "constant", "polynomial")
BOUNDED_FAMILIES = ("gaussian", "ard_gaussian", "delta", "constant")


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus its parameters.

    Use the constructor helpers (:func:`gaussian`, :func:`ard_gaussian`, ...)
    rather than filling fields by hand.
    """

    family: str
    sigma2: float | None = None
    gammas: tuple[float, ...] | None = None
    degree: int | None = None
    offset: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if self.family == "gaussian":
            if self.sigma2 is None or not np.isfinite(self.sigma2) or self.sigma2 <= 0:
                raise ConfigError(f"gaussian kernel needs sigma2 > 0, got {self.sigma2!r}")
        elif self.family == "ard_gaussian":
            if not self.gammas:
                raise ConfigError("ard_gaussian kernel needs at least one weight")
            g = np.asarray(self.gammas, dtype=float)
            if np.any(~np.isfinite(g)) or np.any(g < 0):
                raise ConfigError(f"ard_gaussian weights must be finite and >= 0, got {self.gammas}")
        elif self.family == "polynomial":
            if self.degree is None or int(self.degree) != self.degree or self.degree < 1:
                raise ConfigError(f"polynomial kernel needs integer degree >= 1, got {self.degree!r}")

    @property
    def input_dim(self) -> int | None:
        """Required input dimension, or ``None`` if any dimension works."""
        return len(self.gammas) if self.family == "ard_gaussian" else None

    @property
    def bounded(self) -> bool:
        return self.family in BOUNDED_FAMILIES

    def describe(self) -> dict:
        out = {"family": self.family}
        if self.sigma2 is not None:
            out["sigma2"] = float(self.sigma2)
        if self.gammas is not None:
            out["gammas"] = [float(g) for g in self.gammas]
        if self.family == "polynomial":
            out["degree"] = int(self.degree)
            out["offset"] = float(self.offset)
        return out


def gaussian(sigma2: float = 1.0) -> KernelSpec:
    return KernelSpec("gaussian", sigma2=float(sigma2))


def ard_gaussian(gammas) -> KernelSpec:
    """``exp(-sum_i (x_i - y_i)^2 gamma_i^2 / d)``.

    ``d`` counts the non-zero weights, so zeroing a coordinate's weight drops
    it from the kernel entirely (a feature-selection option).
    """
    return KernelSpec("ard_gaussian", gammas=tuple(float(g) for g in gammas))


def linear() -> KernelSpec:
    return KernelSpec("linear")


def delta() -> KernelSpec:
    return KernelSpec("delta")


def constant() -> KernelSpec:
    return KernelSpec("constant")


def polynomial(degree: int = 2, offset: float = 1.0) -> KernelSpec:
    return KernelSpec("polynomial", degree=int(degree), offset=float(offset))


def as_matrix(X, name="input") -> np.ndarray:
    """Coerce to a 2-D float64 array; 1-D input becomes a single column."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"{name} must be 1-D or 2-D, got shape {X.shape}")
    return X


def _sq_dists(X, Y, weights=None):
    D = np.zeros((X.shape[0], Y.shape[0]))
    tmp = np.empty_like(D)
    for k in range(X.shape[1]):
        if weights is not None and weights[k] == 0.0:
            continue
        np.subtract(X[:, k, None], Y[None, :, k], out=tmp)
        np.square(tmp, out=tmp)
        if weights is not None:
            tmp *= weights[k]
        D += tmp
    return D


def _dots(X, Y):
    D = np.zeros((X.shape[0], Y.shape[0]))
    tmp = np.empty_like(D)
    for k in range(X.shape[1]):
        np.multiply(X[:, k, None], Y[None, :, k], out=tmp)
        D += tmp
    return D


def gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Gram matrix ``G[i, j] = k(X[i], Y[j])``; ``Y`` defaults to ``X``."""
    X = as_matrix(X, "X")
    Y = X if Y is None else as_matrix(Y, "Y")
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise InputError("gram of an empty point set")
    if X.shape[1] != Y.shape[1]:
        raise InputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = spec.input_dim
    if d is not None and X.shape[1] != d:
        raise InputError(f"{spec.family} kernel expects dimension {d}, got {X.shape[1]}")

    fam = spec.family
    if fam == "gaussian":
        G = _sq_dists(X, Y)
        G *= -1.0 / spec.sigma2
        return np.exp(G, out=G)
    if fam == "ard_gaussian":
        w = np.square(np.asarray(spec.gammas))
        active = max(int(np.count_nonzero(w)), 1)
        G = _sq_dists(X, Y, w)
        G *= -1.0 / active
        return np.exp(G, out=G)
    if fam == "linear":
        return _dots(X, Y)
    if fam == "polynomial":
        G = _dots(X, Y)
        G += spec.offset
        return np.power(G, int(spec.degree), out=G)
    if fam == "delta":
        eq = np.ones((X.shape[0], Y.shape[0]), dtype=bool)
        for k in range(X.shape[1]):
            eq &= X[:, k, None] == Y[None, :, k]
        return eq.astype(np.float64)
    # constant
    return np.ones((X.shape[0], Y.shape[0]))


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Single kernel evaluation ``k(x, y)`` for two vectors."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    return float(gram(spec, x, y)[0, 0])


def gram_matmul(spec: KernelSpec, X, Y, Z, chunk: int = 2048) -> np.ndarray:
    """``gram(spec, X, Y) @ Z`` without holding the full Gram when ``X`` is tall."""
    X = as_matrix(X, "X")
    if X.shape[0] <= chunk:
        return gram(spec, X, Y) @ Z
    out = np.empty((X.shape[0], Z.shape[1]))
    for start in range(0, X.shape[0], chunk):
        stop = start + chunk
        out[start:stop] = gram(spec, X[start:stop], Y) @ Z
    return out
