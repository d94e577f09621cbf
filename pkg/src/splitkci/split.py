"""Choosing the train/test split ratio from marginal residual-vs-C dependence.

For a candidate test ratio, the data are split ``r`` times at random. On each
split the A-side and B-side residuals are tested for dependence on ``C``; if
the CMEs were perfect neither test would reject. The split rejection rate
``omega`` is the fraction of splits where both reject. The largest ratio
with ``omega <= alpha`` is chosen.
"""
from __future__ import annotations

import math
from typing import Callable

from . import calibration as cal
from .datagen import Dataset
from .errors import ConfigError
from .pipeline import KernelSettings, SplitPlan, marginal_grams, split_dataset
from .rng import derive_seed
from .stats import StatisticConfig

__all__ = ["SplitPlan", "default_ratio_grid", "marginal_dependence_pvalues",
           "select_split_ratio", "split_rejection_rate"]

DEFAULT_RESAMPLES = 20


def default_ratio_grid(N: int, lo: float = 0.1, hi: float = 0.5, step: int = 50,
                       min_test: int = 100) -> list[float]:
    """Test ratios ``n / N`` for ``n = n0, n0 + step, ...`` with
    ``n0 = max(min_test, ceil(lo N))`` and ``n <= hi N``, in ascending order."""
    N = int(N)
    n0 = max(int(min_test), math.ceil(lo * N - 1e-9))
    grid = [n / N for n in range(n0, int(math.floor(hi * N + 1e-9)) + 1, int(step))]
    if not grid:
        raise ConfigError(f"no test size in [max({min_test}, {lo}N), {hi}N] for N={N}")
    return grid


def parse_grid(text: str) -> list[float]:
    """``"start:stop:step"`` (inclusive stop) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if not step > 0:
                raise ConfigError(f"grid step must be positive, got {step}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(max(count, 0))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse ratio grid {text!r}") from None


def marginal_dependence_pvalues(dataset: Dataset, plan: SplitPlan,
                                method_config: StatisticConfig = StatisticConfig(),
                                boot: cal.BootstrapConfig = cal.BootstrapConfig(),
                                settings: KernelSettings = KernelSettings(),
                                seed: int = 0) -> tuple[float, float]:
    """Wild-bootstrap p-values ``(p_A, p_B)`` for residual dependence on ``C``.

    ``p_A`` tests the A-side residual against ``C`` with the B-side factor
    replaced by ones, so ``B`` never enters; ``p_B`` is symmetric.
    """
    train, test = split_dataset(dataset, plan)
    out = []
    for side in ("a", "b"):
        g = marginal_grams(train, test, side, method_config.method, seed, settings)
        _, p = g.pvalue(method_config, "wild", boot)
        out.append(p)
    return tuple(out)


PValueFn = Callable[[Dataset, SplitPlan, int], "tuple[float, float]"]


def split_rejection_rate(dataset: Dataset, beta: float, alpha: float, r: int, rng_seed: int,
                         pvalue_fn: PValueFn) -> float:
    """``omega``: fraction of ``r`` random splits where both p-values are ``<= alpha``.

    Replicate ``i`` uses the split seed ``derive_seed(rng_seed, i)`` for every
    ratio, so neighbouring ratios see comparable shuffles.
    """
    hits = 0
    for i in range(r):
        s = derive_seed(rng_seed, i)
        plan = SplitPlan.random(dataset.N, beta, s)
        p_a, p_b = pvalue_fn(dataset, plan, s)
        hits += (p_a <= alpha) and (p_b <= alpha)
    return hits / r


def select_split_ratio(dataset: Dataset, ratio_grid=None, alpha: float = 0.05,
                       r: int = DEFAULT_RESAMPLES, rng_seed: int = 0, *,
                       method_config: StatisticConfig = StatisticConfig(),
                       num_resamples: int = 1000,
                       settings: KernelSettings = KernelSettings(),
                       pvalue_fn: PValueFn | None = None, return_trace: bool = False):
    """Largest test ratio whose split rejection rate is at most ``alpha``.

    Ratios are tried from largest to smallest and the first acceptable one is
    returned; if none is, the smallest ratio is. ``pvalue_fn(dataset, plan,
    seed) -> (p_A, p_B)`` replaces the kernel tests (for stubs and
    alternative tests); otherwise each replicate's bootstrap uses
    ``num_resamples`` draws seeded by the replicate. With ``return_trace`` the result is
    ``(beta, [(beta, omega), ...])``.
    """
    grid = default_ratio_grid(dataset.N) if ratio_grid is None else [float(b) for b in ratio_grid]
    if not grid:
        raise ConfigError("empty ratio grid")
    bad = [b for b in grid if not 0 < b < 1]
    if bad:
        raise ConfigError(f"ratios must lie in (0, 1): {bad}")
    if int(r) != r or r < 1:
        raise ConfigError(f"r must be a positive integer, got {r!r}")
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")

    if pvalue_fn is None:
        def pvalue_fn(ds, plan, s):
            b = cal.BootstrapConfig(num_resamples, s)
            return marginal_dependence_pvalues(ds, plan, method_config, b, settings, s)

    trace = []
    chosen = None
    for beta in sorted(set(grid), reverse=True):
        omega = split_rejection_rate(dataset, beta, alpha, int(r), rng_seed, pvalue_fn)
        trace.append((beta, omega))
        if omega <= alpha:
            chosen = beta
            break
    if chosen is None:
        chosen = min(grid)
    return (chosen, trace) if return_trace else chosen
