"""The kernel CI test pipeline: split, fit CMEs, build residual Grams, calibrate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import calibration as cal
from . import cme
from . import kernels as kern
from .datagen import Dataset
from .errors import ConfigError
from .kernels import KernelSpec
from .rng import stream
from .stats import StatisticConfig, compute_statistic, half_split

CALIBRATIONS = ("wild", "gamma")


@dataclass(frozen=True)
class KernelSettings:
    """Kernels for the targets, the LOO search grid over ``C`` and the kernel
    over ``C`` that enters the statistic."""

    a_kernel: KernelSpec = field(default_factory=lambda: kern.gaussian(1.0))
    b_kernel: KernelSpec = field(default_factory=lambda: kern.gaussian(1.0))
    c_grid: tuple = field(default_factory=lambda: tuple(kern.gaussian(s) for s in cme.SIGMA2_GRID))
    stat_c_kernel: KernelSpec = field(default_factory=lambda: kern.gaussian(1.0))
    lambda_grid: tuple | None = None
    lambda_eps: float = cme.MACHINE_EPS

    def fit(self, C_train, T_train, target_kernel) -> cme.CmeModel:
        return cme.fit_krr(C_train, T_train, target_kernel, self.c_grid,
                           self.lambda_grid, eps=self.lambda_eps)

    def describe(self) -> dict:
        return {"a_kernel": self.a_kernel.describe(), "b_kernel": self.b_kernel.describe(),
                "stat_c_kernel": self.stat_c_kernel.describe(),
                "c_grid": [k.describe() for k in self.c_grid], "lambda_eps": self.lambda_eps}


@dataclass(frozen=True)
class SplitPlan:
    """A permutation of ``range(N)`` whose first ``n`` entries form the test set.

    ``n + m == N`` always; with ``reuse=True`` (no splitting) both sets are
    the whole dataset and ``m`` reports ``N`` as well.
    """

    test_ratio: float
    n: int
    m: int
    assignment: np.ndarray
    reuse: bool = False

    @classmethod
    def random(cls, N: int, beta: float, seed: int, name: str = "train_test_split") -> "SplitPlan":
        if not 0 < beta < 1:
            raise ConfigError(f"test ratio must be in (0, 1), got {beta}")
        n = int(round(beta * N))
        if n < 1 or n >= N:
            raise ConfigError(f"test ratio {beta} leaves an empty side for N={N}")
        perm = stream(seed, name).permutation(N)
        return cls(float(beta), n, N - n, perm)

    @classmethod
    def no_split(cls, N: int) -> "SplitPlan":
        return cls(1.0, N, N, np.arange(N), reuse=True)

    @property
    def test_idx(self) -> np.ndarray:
        return self.assignment if self.reuse else self.assignment[: self.n]

    @property
    def train_idx(self) -> np.ndarray:
        return self.assignment if self.reuse else self.assignment[self.n:]


def split_dataset(dataset: Dataset, plan: SplitPlan) -> tuple[Dataset, Dataset]:
    """Train and test sets, both standardized with training-set statistics."""
    if plan.assignment.size != dataset.N:
        raise ConfigError(f"split plan covers {plan.assignment.size} points, dataset has {dataset.N}")
    train = dataset.subset(plan.train_idx)
    test = dataset.subset(plan.test_idx)
    return train.standardized(), test.standardized(reference=train)


@dataclass
class ResidualGrams:
    """Test-set matrices feeding the statistic, plus the fitted models."""

    Ka: np.ndarray
    Kc: np.ndarray
    Kb: np.ndarray
    models: dict = field(default_factory=dict)

    def statistic(self, config: StatisticConfig) -> float:
        return compute_statistic(self.Ka, self.Kc, self.Kb, config)

    def pvalue(self, config: StatisticConfig, calibration: str = "wild",
               boot: cal.BootstrapConfig = cal.BootstrapConfig()) -> tuple[float, float]:
        """``(statistic, p_value)``. The Gamma route always uses the biased statistic."""
        if calibration == "wild":
            stat = self.statistic(config)
            p = cal.wild_bootstrap_pvalue(self.Ka, self.Kc, self.Kb, stat, boot,
                                          estimator=config.estimator,
                                          center_with_H=config.center_with_H)
            return stat, p
        if calibration == "gamma":
            v_config = StatisticConfig(config.method, "v_biased", config.center_with_H)
            stat = self.statistic(v_config)
            from .stats import center

            K = center(self.Ka) if config.center_with_H else self.Ka
            return stat, cal.gamma_pvalue(K, self.Kc * self.Kb, stat)
        raise ConfigError(f"unknown calibration {calibration!r}; expected one of {CALIBRATIONS}")


def _fit_pair(C_train, T_train, kernel, settings, halves):
    if halves is None:
        model = settings.fit(C_train, T_train, kernel)
        return model, model
    return tuple(settings.fit(C_train[h], T_train[h], kernel) for h in halves)


def _halves(m, seed, min_size):
    if m < 2 * min_size:
        raise ConfigError(f"{m} training points are too few to split into halves "
                          f"of at least {min_size}")
    return half_split(m, stream(seed, "train_halves"))


def residual_grams(train: Dataset, test: Dataset, method: str, seed: int,
                   settings: KernelSettings = KernelSettings(), *, zero_a: bool = False) -> ResidualGrams:
    """Fit the CMEs ``method`` needs on ``train`` and evaluate on ``test``.

    * ``kci``: one C->A and one C->B regression on the full training set.
    * ``circe``: no C->A regression; C->B on the full training set.
    * ``splitkci``: both regressions fitted twice, on disjoint halves.
    * ``splitkci_a_only``: C->A on halves, C->B on the full set.

    ``zero_a`` replaces the A-side models by the zero predictor.
    """
    config = StatisticConfig(method)
    m = train.N
    halves = _halves(m, seed, 2) if (config.splits_a or config.splits_b) else None

    if method == "circe" or zero_a:
        a_models = (None, None)
    else:
        a_models = _fit_pair(train.C, train.A, settings.a_kernel, settings,
                             halves if config.splits_a else None)
    b_models = _fit_pair(train.C, train.B, settings.b_kernel, settings,
                         halves if config.splits_b else None)

    Ka = cme.centered_gram(*a_models, test.A, test.C, a_kernel=settings.a_kernel)
    Kb = cme.centered_gram(*b_models, test.B, test.C, a_kernel=settings.b_kernel)
    Kc = kern.gram(settings.stat_c_kernel, test.C)
    return ResidualGrams(Ka, Kc, Kb, {"a": a_models, "b": b_models})


def marginal_grams(train: Dataset, test: Dataset, side: str, method: str, seed: int,
                   settings: KernelSettings = KernelSettings()) -> ResidualGrams:
    """Residual-vs-C dependence matrices for one side (``"a"`` or ``"b"``).

    The other side's residual Gram is replaced by the all-ones matrix (the
    neutral element of the elementwise product), which turns the statistic
    into an HSIC between the residual and ``C``.
    """
    config = StatisticConfig(method)
    if side == "a":
        targets, kernel, split_it = train.A, settings.a_kernel, config.splits_a
        test_t = test.A
    elif side == "b":
        targets, kernel, split_it = train.B, settings.b_kernel, config.splits_b
        test_t = test.B
    else:
        raise ConfigError(f"side must be 'a' or 'b', got {side!r}")
    if method == "circe" and side == "a":
        models = (None, None)
    else:
        halves = _halves(train.N, seed, 2) if split_it else None
        models = _fit_pair(train.C, targets, kernel, settings, halves)
    K = cme.centered_gram(*models, test_t, test.C, a_kernel=kernel)
    Kc = kern.gram(settings.stat_c_kernel, test.C)
    return ResidualGrams(K, Kc, np.ones_like(K), {side: models})
