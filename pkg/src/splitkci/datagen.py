"""Synthetic datasets, the cluster-shuffle simulated null, and CSV I/O."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError, InputError
from .kernels import as_matrix
from .rng import stream

HYPOTHESES = ("null", "alternative")
_HYP_ALIASES = {"h0": "null", "null": "null", "h1": "alternative", "alternative": "alternative"}


def hypothesis(value: str) -> str:
    """Normalise ``h0``/``h1``/``null``/``alternative`` to a canonical name."""
    try:
        return _HYP_ALIASES[str(value).lower()]
    except KeyError:
        raise ConfigError(f"unknown hypothesis {value!r}; use h0 or h1") from None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aligned samples ``(A, B, C)``, one row per observation."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        mats = {}
        for name in ("A", "B", "C"):
            X = as_matrix(getattr(self, name), name)
            if X.shape[1] < 1:
                raise InputError(f"{name} has no columns")
            if not np.all(np.isfinite(X)):
                raise InputError(f"{name} contains NaN or Inf")
            mats[name] = X
            object.__setattr__(self, name, X)
        rows = {X.shape[0] for X in mats.values()}
        if len(rows) != 1:
            raise InputError(f"A, B, C have different row counts: "
                             f"{[X.shape[0] for X in mats.values()]}")

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.A[idx], self.B[idx], self.C[idx], dict(self.provenance))

    def standardized(self, reference: "Dataset | None" = None) -> "Dataset":
        """Per-column zero mean / unit variance, with statistics taken from
        ``reference`` (default: this dataset). Constant columns are only centred."""
        ref = self if reference is None else reference
        out = []
        for name in ("A", "B", "C"):
            X, R = getattr(self, name), getattr(ref, name)
            mu = R.mean(axis=0)
            sd = R.std(axis=0)
            sd = np.where(sd > 0, sd, 1.0)
            out.append((X - mu) / sd)
        return Dataset(*out, dict(self.provenance))


# --- post-nonlinear model -----------------------------------------------------

_BASIS = (lambda x: x, np.tanh, lambda x: np.tanh(x**3))


class ConvexCombination:
    """``x -> sum_k w_k f_k(x)`` over ``{x, tanh(x), tanh(x^3)}``."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return sum(w * f(x) for w, f in zip(self.weights, _BASIS))

    def __repr__(self):
        return f"ConvexCombination({np.round(self.weights, 4).tolist()})"


def _random_function(rng):
    # uniform on the simplex
    return ConvexCombination(rng.dirichlet(np.ones(len(_BASIS))))


def gen_postnonlinear(d: int, N: int, hyp: str = "h0", rng_seed: int = 0, *,
                      return_details: bool = False):
    """Post-nonlinear model with conditional dependence hidden in ``C[:, 0]``.

    ``C ~ N(0, I/d)``; ``A = G_a((E_a + sum_i F_ai(C_i + xi_ai)) / (d + 1))``
    and likewise for ``B``. Only the first coordinate carries noise; it is
    independent between ``A`` and ``B`` under the null and shared under the
    alternative. ``G``, ``F`` are random convex combinations of
    ``x, tanh(x), tanh(x^3)``, drawn once per dataset.
    """
    hyp = hypothesis(hyp)
    d, N = int(d), int(N)
    if d < 1:
        raise ConfigError(f"d must be >= 1, got {d}")
    if N < 2:
        raise ConfigError(f"N must be >= 2, got {N}")
    rng = stream(rng_seed, "postnonlinear")
    G_a, G_b = _random_function(rng), _random_function(rng)
    F_a = [_random_function(rng) for _ in range(d)]
    F_b = [_random_function(rng) for _ in range(d)]

    C = rng.normal(0.0, 1.0 / math.sqrt(d), size=(N, d))
    E_a = rng.normal(size=N)
    E_b = rng.normal(size=N)
    xi_a = rng.normal(size=N)
    xi_b = xi_a.copy() if hyp == "alternative" else rng.normal(size=N)

    def side(E, F, G, xi):
        total = E + F[0](C[:, 0] + xi)
        for i in range(1, d):
            total = total + F[i](C[:, i])
        return G(total / (d + 1))[:, None]

    A = side(E_a, F_a, G_a, xi_a)
    B = side(E_b, F_b, G_b, xi_b)
    ds = Dataset(A, B, C, {"generator": "postnonlinear", "hypothesis": hyp, "N": N,
                            "d": d, "seed": int(rng_seed)})
    if return_details:
        details = {"G_a": G_a, "G_b": G_b, "F_a": F_a, "F_b": F_b,
                   "xi_a": xi_a, "xi_b": xi_b, "E_a": E_a, "E_b": E_b}
        return ds, details
    return ds


# --- circular toy task --------------------------------------------------------


def gen_circular(N: int, gamma: float = 0.05, hyp: str = "h0", rng_seed: int = 0, *,
                 return_details: bool = False):
    """``C`` uniform on the unit circle; ``A``, ``B`` are ``C`` plus noise.

    Null: ``A = C + g xi_2 + g xi_a``, ``B = C + g xi_3 + g xi_b``.
    Alternative: the first coordinate of the second noise term is shared,
    ``[xi_ab, xi_aa]`` for ``A`` and ``[xi_ab, xi_bb]`` for ``B``.
    """
    hyp = hypothesis(hyp)
    N = int(N)
    if N < 2:
        raise ConfigError(f"N must be >= 2, got {N}")
    if not gamma >= 0:
        raise ConfigError(f"gamma must be non-negative, got {gamma}")
    rng = stream(rng_seed, "circular")
    xi1 = rng.normal(size=(N, 2))
    C = xi1 / np.linalg.norm(xi1, axis=1, keepdims=True)
    xi2 = rng.normal(size=(N, 2))
    xi3 = rng.normal(size=(N, 2))
    if hyp == "null":
        noise_a = rng.normal(size=(N, 2))
        noise_b = rng.normal(size=(N, 2))
    else:
        shared = rng.normal(size=N)
        noise_a = np.column_stack([shared, rng.normal(size=N)])
        noise_b = np.column_stack([shared, rng.normal(size=N)])
    A = C + gamma * xi2 + gamma * noise_a
    B = C + gamma * xi3 + gamma * noise_b
    ds = Dataset(A, B, C, {"generator": "circular", "hypothesis": hyp, "N": N,
                            "gamma": float(gamma), "d": 2, "seed": int(rng_seed)})
    if return_details:
        return ds, {"xi2": xi2, "xi3": xi3, "noise_a": noise_a, "noise_b": noise_b}
    return ds


# --- simulated null -----------------------------------------------------------


def quantile_bins(c, n_clusters: int) -> list[np.ndarray]:
    """Equal-frequency bins of a 1-D variable, as index arrays."""
    order = np.argsort(np.asarray(c), kind="stable")
    return np.array_split(order, n_clusters)


def simulate_null_shuffle(dataset: Dataset, n_clusters: int = 20, rng_seed: int = 0) -> Dataset:
    """Permute ``A`` within equal-frequency bins of ``C[:, 0]``.

    The result keeps the ``(A, C)`` and ``(B, C)`` relations up to bin
    resolution while making ``A`` and ``B`` independent given the bin.
    """
    n_clusters = int(n_clusters)
    if n_clusters < 1:
        raise ConfigError(f"n_clusters must be >= 1, got {n_clusters}")
    if n_clusters > dataset.N:
        raise ConfigError(f"n_clusters={n_clusters} exceeds the {dataset.N} samples")
    rng = stream(rng_seed, "null_shuffle")
    A = dataset.A.copy()
    for idx in quantile_bins(dataset.C[:, 0], n_clusters):
        A[idx] = dataset.A[idx[rng.permutation(idx.size)]]
    prov = dict(dataset.provenance)
    prov["null_shuffle"] = {"clusters": n_clusters, "seed": int(rng_seed)}
    return Dataset(A, dataset.B, dataset.C, prov)


# --- CSV ----------------------------------------------------------------------


def default_columns(dataset: Dataset) -> tuple[list[str], list[str], list[str]]:
    return tuple([f"{p}{j}" for j in range(getattr(dataset, p.upper()).shape[1])]
                 for p in ("a", "b", "c"))


def write_csv(dataset: Dataset, path, columns=None) -> None:
    """Write ``A | B | C`` side by side with 17 significant digits."""
    a_cols, b_cols, c_cols = columns or default_columns(dataset)
    header = list(a_cols) + list(b_cols) + list(c_cols)
    data = np.hstack([dataset.A, dataset.B, dataset.C])
    if data.shape[1] != len(header):
        raise InputError(f"{len(header)} column names for {data.shape[1]} columns")
    with open(path, "w", newline="", encoding="utf8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([format(float(v), ".17g") for v in row])


def infer_columns(header, prefix: str) -> list[str]:
    """Columns named ``prefix`` or ``prefix`` followed by digits, in file order."""
    pat = re.compile(rf"^{prefix}\d*$", re.IGNORECASE)
    return [h for h in header if pat.match(h)]


def load_csv(path, a_cols=None, b_cols=None, c_cols=None, standardize: bool = False) -> Dataset:
    """Read a dataset from a headed CSV file.

    Column lists default to the ``a*``/``b*``/``c*`` naming used by
    :func:`write_csv`.
    """
    try:
        with open(path, newline="", encoding="utf8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise IngestionError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise IngestionError(f"{path} has a header but no data rows")
    pos = {h: i for i, h in enumerate(header)}

    mats = []
    for label, cols in (("a", a_cols), ("b", b_cols), ("c", c_cols)):
        cols = infer_columns(header, label) if cols is None else list(cols)
        if not cols:
            raise IngestionError(f"no columns selected for {label.upper()}")
        missing = [c for c in cols if c not in pos]
        if missing:
            raise IngestionError(f"missing column(s) {missing} in {path}")
        X = np.empty((len(body), len(cols)))
        for r, row in enumerate(body):
            for j, col in enumerate(cols):
                i = pos[col]
                cell = row[i].strip() if i < len(row) else ""
                try:
                    X[r, j] = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"non-numeric value {cell!r} at row {r + 2}, column {col!r}") from None
                if not math.isfinite(X[r, j]):
                    raise IngestionError(f"non-finite value {cell!r} at row {r + 2}, column {col!r}")
        mats.append(X)
    ds = Dataset(*mats, {"generator": "csv", "path": str(path)})
    return ds.standardized() if standardize else ds
