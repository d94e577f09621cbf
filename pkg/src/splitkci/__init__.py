"""Kernel conditional independence tests with split conditional mean embeddings.

The main entry points are :func:`splitkci.harness.run_single_test` for one
test and :func:`splitkci.harness.run_experiment` for Monte-Carlo error rates;
the modules below expose the building blocks.
"""
from . import baselines, calibration, cme, datagen, harness, kernels, pipeline, split, stats
from .datagen import Dataset, gen_circular, gen_postnonlinear, load_csv
from .errors import (CITestError, ConfigError, DegenerateError, ExperimentError, FitError,
                     IngestionError, InputError, NumericalError)
from .harness import ExperimentConfig, TestResult, run_experiment, run_single_test

__version__ = "0.1.0"
