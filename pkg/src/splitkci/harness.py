"""Single tests and Monte-Carlo error-rate experiments.

A test runs split -> fit -> statistic -> p-value for one method on one
dataset. An experiment repeats that over generated datasets with derived
seeds and reports the rejection rate with its binomial standard error.
"""
from __future__ import annotations

import csv
import json
import math
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace

from . import baselines
from . import calibration as cal
from . import datagen
from . import kernels as kern
from .cme import MACHINE_EPS, SIGMA2_GRID
from .datagen import Dataset
from .errors import CITestError, ConfigError, ExperimentError
from .pipeline import CALIBRATIONS, KernelSettings, SplitPlan, residual_grams, split_dataset
from .rng import derive_seed
from .split import DEFAULT_RESAMPLES, parse_grid, select_split_ratio
from .stats import ESTIMATORS, METHODS, StatisticConfig

KERNEL_METHODS = METHODS
ALL_METHODS = KERNEL_METHODS + ("gcm", "rbpt2", "rbpt2_corrected")
GENERATORS = ("circular", "postnonlinear", "csv")

#: Split used when a config says ``"default"``.
DEFAULT_SPLITS = {"splitkci": "auto", "kci": "n:100", "circe": "n:100", "splitkci_a_only": "n:100",
                  "rbpt2": "n:100", "rbpt2_corrected": "n:100", "gcm": "none"}

TABLE_COLUMNS = ("method", "generator", "hypothesis", "N", "d", "beta", "rejection_rate",
                 "standard_error", "trials", "base_seed")


def parse_split(text: str) -> tuple[str, float | int | None]:
    """``auto | none | ratio:X | n:K`` -> ``(kind, value)``."""
    text = str(text).strip().lower()
    if text in ("auto", "none"):
        return text, None
    kind, _, value = text.partition(":")
    try:
        if kind == "ratio":
            x = float(value)
            if not 0 < x < 1:
                raise ConfigError(f"split ratio must be in (0, 1), got {x}")
            return kind, x
        if kind == "n":
            k = int(value)
            if k < 1:
                raise ConfigError(f"test size must be positive, got {k}")
            return kind, k
    except ValueError:
        pass
    raise ConfigError(f"cannot parse split {text!r}; use auto, none, ratio:X or n:K")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a test or an experiment.

    JSON keys mirror the field names. ``split`` is ``"default"`` (per-method
    choice in :data:`DEFAULT_SPLITS`), ``"auto"``, ``"none"``, ``"ratio:X"``
    or ``"n:K"``. ``c_sigma2_grid`` lists Gaussian bandwidths searched for
    the CMEs; ``a_sigma2``, ``b_sigma2`` and ``stat_c_sigma2`` fix the other
    kernels. ``ratio_grid = None`` uses the default split-ratio grid.
    """

    method: str = "splitkci"
    generator: str = "circular"
    hypothesis: str = "h0"
    N: int = 400
    d: int = 1
    gamma: float = 0.05
    data: str | None = None
    a_cols: list | None = None
    b_cols: list | None = None
    c_cols: list | None = None
    null_shuffle_clusters: int | None = None
    split: str = "default"
    alpha: float = 0.05
    trials: int = 100
    num_resamples: int = 1000
    calibration: str = "wild"
    estimator: str = "v_biased"
    center_with_H: bool = True
    c_sigma2_grid: list = field(default_factory=lambda: list(SIGMA2_GRID))
    a_sigma2: float = 1.0
    b_sigma2: float = 1.0
    stat_c_sigma2: float = 1.0
    lambda_grid: list | None = None
    lambda_eps: float = MACHINE_EPS
    ratio_grid: list | None = None
    split_resamples: int = DEFAULT_RESAMPLES
    split_alpha: float | None = None
    mc_draws: int = baselines.MC_DRAWS
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {ALL_METHODS}")
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.generator == "csv" and not self.data:
            raise ConfigError("generator 'csv' needs a data path")
        datagen.hypothesis(self.hypothesis)
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials must be a positive integer, got {self.trials!r}")
        if self.calibration not in CALIBRATIONS:
            raise ConfigError(f"unknown calibration {self.calibration!r}; expected one of {CALIBRATIONS}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; expected one of {ESTIMATORS}")
        if self.split != "default":
            parse_split(self.split)
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError(f"workers must be a positive integer, got {self.workers!r}")
        cal.BootstrapConfig(self.num_resamples)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> list["ExperimentConfig"]:
        """One config per method: ``method`` may be a string or a list, and the
        file may hold a single object or a list of objects."""
        try:
            with open(path, encoding="utf8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        items = data if isinstance(data, list) else [data]
        out = []
        for item in items:
            if not isinstance(item, dict):
                raise ConfigError(f"config entries must be objects, got {type(item).__name__}")
            methods = item.get("method", cls.method)
            for m in ([methods] if isinstance(methods, str) else list(methods)):
                out.append(cls.from_dict({**item, "method": m}))
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def resolved_split(self) -> tuple[str, float | int | None]:
        return parse_split(DEFAULT_SPLITS[self.method] if self.split == "default" else self.split)

    @property
    def kernel_settings(self) -> KernelSettings:
        grid = tuple(self.lambda_grid) if self.lambda_grid is not None else None
        return KernelSettings(a_kernel=kern.gaussian(self.a_sigma2), b_kernel=kern.gaussian(self.b_sigma2),
                              c_grid=tuple(kern.gaussian(s) for s in self.c_sigma2_grid),
                              stat_c_kernel=kern.gaussian(self.stat_c_sigma2),
                              lambda_grid=grid, lambda_eps=self.lambda_eps)

    @property
    def statistic_config(self) -> StatisticConfig:
        return StatisticConfig(self.method, self.estimator, self.center_with_H)

    def make_dataset(self, seed: int) -> Dataset:
        if self.generator == "circular":
            ds = datagen.gen_circular(self.N, self.gamma, self.hypothesis, seed)
        elif self.generator == "postnonlinear":
            ds = datagen.gen_postnonlinear(self.d, self.N, self.hypothesis, seed)
        else:
            ds = datagen.load_csv(self.data, self.a_cols, self.b_cols, self.c_cols)
        if self.null_shuffle_clusters:
            ds = datagen.simulate_null_shuffle(ds, self.null_shuffle_clusters, seed)
        return ds


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test. ``beta`` is the test ratio actually used."""

    __test__ = False  # not a pytest class

    method: str
    statistic: float
    p_value: float
    reject: bool
    n: int
    m: int
    beta: float
    seed: int
    alpha: float
    calibration: str
    kernels: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=float)


@contextmanager
def _stage(name):
    try:
        yield
    except CITestError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


def _models_summary(models: dict) -> dict:
    out = {}
    for side, pair in models.items():
        descs = [m.describe() if m is not None else None for m in pair]
        out[side] = descs[0] if pair[0] is pair[1] else descs
    return out


def _plan(config: ExperimentConfig, dataset: Dataset, seed: int, beta: float | None):
    kind, value = config.resolved_split
    N = dataset.N
    if kind == "none":
        return SplitPlan.no_split(N)
    if kind == "n":
        if N <= value:
            raise ConfigError(f"{N} points cannot hold a test set of {value} plus training data")
        return SplitPlan.random(N, value / N, seed)
    if kind == "ratio":
        return SplitPlan.random(N, value, seed)
    if beta is None:
        beta = choose_ratio(config, dataset, seed)
    return SplitPlan.random(N, beta, seed)


def choose_ratio(config: ExperimentConfig, dataset: Dataset, seed: int, return_trace: bool = False):
    """Run the split-selection heuristic with the config's settings."""
    grid = config.ratio_grid
    if isinstance(grid, str):
        grid = parse_grid(grid)
    alpha = config.split_alpha if config.split_alpha is not None else config.alpha
    with _stage("split"):
        return select_split_ratio(dataset, grid, alpha, config.split_resamples, seed,
                                  method_config=config.statistic_config,
                                  num_resamples=config.num_resamples,
                                  settings=config.kernel_settings, return_trace=return_trace)


def run_single_test(config: ExperimentConfig, dataset: Dataset, seed: int,
                    beta: float | None = None) -> TestResult:
    """One test of ``config.method`` on ``dataset``.

    ``beta`` fixes the test ratio when the split is ``auto`` (the frozen
    ratio of an experiment); otherwise the heuristic runs on this dataset.
    Errors carry a ``stage`` attribute naming the step that failed.
    """
    with _stage("split"):
        plan = _plan(config, dataset, seed, beta)
        train, test = split_dataset(dataset, plan)
    boot = cal.BootstrapConfig(config.num_resamples, seed)
    method = config.method
    kernels: dict = {}

    if method in KERNEL_METHODS:
        with _stage("fit"):
            grams = residual_grams(train, test, method, seed, config.kernel_settings)
        kernels = _models_summary(grams.models)
        with _stage("calibration"):
            stat, p = grams.pvalue(config.statistic_config, config.calibration, boot)
    elif method == "gcm":
        settings = config.kernel_settings
        with _stage("fit"):
            f, g = baselines.fit_gcm_regressors(train, list(settings.c_grid), settings.lambda_grid)
        kernels = {"a": f.describe(), "b": g.describe()}
        with _stage("statistic"):
            res = baselines.gcm_test(test, f, g, config.alpha, config.mc_draws, seed)
        stat, p = res.S, res.p_value
    else:
        settings = config.kernel_settings
        with _stage("fit"):
            g, h = baselines.fit_rbpt2_models(train, list(settings.c_grid), settings.lambda_grid)
        kernels = {"g": g.describe(), "h": h.describe()}
        with _stage("statistic"):
            res = baselines.rbpt2_test(test, g, h, corrected=(method == "rbpt2_corrected"))
        stat, p = res.S, res.p_value

    return TestResult(method=method, statistic=float(stat), p_value=float(p),
                      reject=bool(p <= config.alpha), n=plan.n, m=plan.m,
                      beta=float(plan.test_ratio), seed=int(seed), alpha=config.alpha,
                      calibration=config.calibration if method in KERNEL_METHODS else "asymptotic",
                      kernels=kernels)


@dataclass
class ErrorRateTable:
    """Rejection rates per experiment, one row each; CSV columns :data:`TABLE_COLUMNS`."""

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    results: list = field(default_factory=list)

    @staticmethod
    def make_row(config: ExperimentConfig, beta: float, rejections: int, trials: int) -> dict:
        rate = rejections / trials
        return {"method": config.method, "generator": config.generator,
                "hypothesis": datagen.hypothesis(config.hypothesis), "N": config.N, "d": config.d,
                "beta": beta, "rejection_rate": rate,
                "standard_error": math.sqrt(rate * (1.0 - rate) / trials),
                "trials": trials, "base_seed": config.base_seed}

    def extend(self, other: "ErrorRateTable") -> None:
        self.rows += other.rows
        self.failures += other.failures
        self.results += other.results

    def write_csv(self, path, append: bool = True) -> None:
        """Write rows; with ``append`` an existing file with the same header is
        extended instead of overwritten."""
        exists = append and os.path.exists(path) and os.path.getsize(path) > 0
        if exists:
            with open(path, newline="", encoding="utf8") as fh:
                header = next(csv.reader(fh), None)
            if tuple(header or ()) != TABLE_COLUMNS:
                raise ConfigError(f"{path} exists with a different header: {header}")
        with open(path, "a" if exists else "w", newline="", encoding="utf8") as fh:
            w = csv.DictWriter(fh, TABLE_COLUMNS, lineterminator="\n")
            if not exists:
                w.writeheader()
            for row in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _trial(args):
    config, t, beta = args
    seed = derive_seed(config.base_seed, t)
    try:
        ds = config.make_dataset(seed)
        return t, run_single_test(config, ds, seed, beta), None
    except CITestError as exc:
        return t, None, f"{getattr(exc, 'stage', None) or 'data'}: {type(exc).__name__}: {exc}"


def run_experiment(config: ExperimentConfig, out=None, progress=None) -> ErrorRateTable:
    """Rejection rate of ``config.method`` over ``config.trials`` trials.

    Trial ``t`` draws its dataset and all randomness from
    ``derive_seed(base_seed, t)``. With an ``auto`` split the ratio is chosen
    once on the dataset of ``base_seed`` and then frozen for every trial.
    Failed trials are recorded and skipped; if half or more fail the
    experiment raises :class:`ExperimentError`. ``out`` appends the row to a
    CSV file; ``progress(t, result_or_None)`` is called after each trial.
    """
    kind, value = config.resolved_split
    if kind == "auto":
        beta = choose_ratio(config, config.make_dataset(config.base_seed), config.base_seed)
    else:
        beta = None

    jobs = [(config, t, beta) for t in range(config.trials)]
    if config.workers > 1:
        import multiprocessing

        with multiprocessing.Pool(config.workers) as pool:
            outcomes = pool.map(_trial, jobs)
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_trial(job))
            if progress is not None:
                progress(job[1], outcomes[-1][1])
    outcomes.sort(key=lambda o: o[0])

    table = ErrorRateTable()
    results = [r for _, r, _ in outcomes if r is not None]
    table.failures = [(t, msg) for t, r, msg in outcomes if r is None]
    table.results = results
    if len(table.failures) * 2 >= config.trials:
        raise ExperimentError(f"{len(table.failures)} of {config.trials} trials failed; "
                              f"first: {table.failures[0][1]}")
    used_beta = beta if beta is not None else results[0].beta
    table.rows.append(table.make_row(config, float(used_beta), sum(r.reject for r in results),
                                     len(results)))
    if out is not None:
        table.write_csv(out)
    return table


def rejection_rate(config: ExperimentConfig, **overrides) -> float:
    """Shorthand: the rejection rate of ``config`` with field overrides."""
    cfg = replace(config, **overrides) if overrides else config
    return run_experiment(cfg).rows[0]["rejection_rate"]
