"""Command-line interface.

Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import datagen, harness
from .errors import CITestError, ExperimentError, InputError, NumericalError
from .split import parse_grid

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _cols(text):
    return [c.strip() for c in text.split(",") if c.strip()] if text else None


def _add_columns(p):
    p.add_argument("--a-cols", type=_cols, help="comma-separated A columns (default a*)")
    p.add_argument("--b-cols", type=_cols, help="comma-separated B columns (default b*)")
    p.add_argument("--c-cols", type=_cols, help="comma-separated C columns (default c*)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splitkci", description="Kernel conditional independence tests.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic dataset as CSV")
    p.add_argument("--generator", choices=("postnonlinear", "circular"), required=True)
    p.add_argument("--hyp", default="h0", choices=("h0", "h1"))
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--d", type=int, default=1, help="dimension of C (postnonlinear)")
    p.add_argument("--gamma", type=float, default=0.05, help="noise level (circular)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("test", help="run one test, print JSON")
    p.add_argument("--method", default="splitkci", choices=harness.ALL_METHODS)
    p.add_argument("--data", required=True)
    _add_columns(p)
    p.add_argument("--split", default="default", help="default | auto | none | ratio:X | n:K")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--boot", type=int, default=1000, help="wild-bootstrap resamples")
    p.add_argument("--calibration", default="wild", choices=("wild", "gamma"))
    p.add_argument("--estimator", default="v_biased", choices=("v_biased", "u_unbiased"))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("experiment", help="Monte-Carlo rejection rates from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="CSV file (appended to if present)")
    p.add_argument("--workers", type=int, default=None, help="override the config's worker count")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("split-select", help="choose the test ratio by split rejection rate")
    p.add_argument("--data", required=True)
    _add_columns(p)
    p.add_argument("--method", default="splitkci", choices=harness.KERNEL_METHODS)
    p.add_argument("--grid", default="auto", help="start:stop:step, comma list, or auto")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--resamples", type=int, default=20, help="random splits per ratio")
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="also print the rejection rate per ratio")

    p = sub.add_parser("shuffle-null", help="permute A within C-quantile clusters")
    p.add_argument("--data", required=True)
    _add_columns(p)
    p.add_argument("--clusters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _load(args):
    return datagen.load_csv(args.data, args.a_cols, args.b_cols, args.c_cols)


def cmd_gen(args):
    if args.generator == "circular":
        ds = datagen.gen_circular(args.n, args.gamma, args.hyp, args.seed)
    else:
        ds = datagen.gen_postnonlinear(args.d, args.n, args.hyp, args.seed)
    datagen.write_csv(ds, args.out)


def cmd_test(args):
    ds = _load(args)
    config = harness.ExperimentConfig(method=args.method, generator="csv", data=args.data,
                                      N=ds.N, split=args.split, alpha=args.alpha,
                                      num_resamples=args.boot, calibration=args.calibration,
                                      estimator=args.estimator, base_seed=args.seed)
    result = harness.run_single_test(config, ds, args.seed)
    print(result.to_json())


def cmd_experiment(args):
    configs = harness.ExperimentConfig.from_json(args.config)
    for config in configs:
        if args.workers is not None:
            config = harness.ExperimentConfig.from_dict({**config.to_dict(), "workers": args.workers})
        table = harness.run_experiment(config, out=args.out)
        for t, msg in table.failures:
            print(f"trial {t} failed: {msg}", file=sys.stderr)
        if not args.quiet:
            row = table.rows[0]
            print(f"{row['method']} {row['generator']} {row['hypothesis']} N={row['N']} "
                  f"beta={row['beta']:.3g} rate={row['rejection_rate']:.3f} "
                  f"se={row['standard_error']:.3f} trials={row['trials']}")


def cmd_split_select(args):
    ds = _load(args)
    grid = None if args.grid.strip().lower() == "auto" else parse_grid(args.grid)
    config = harness.ExperimentConfig(method=args.method, generator="csv", data=args.data, N=ds.N,
                                      split="auto", alpha=args.alpha, num_resamples=args.boot,
                                      ratio_grid=grid, split_resamples=args.resamples)
    beta, trace = harness.choose_ratio(config, ds, args.seed, return_trace=True)
    print(beta)
    if args.trace:
        print(json.dumps([{"beta": b, "omega": w} for b, w in trace]))


def cmd_shuffle_null(args):
    ds = datagen.simulate_null_shuffle(_load(args), args.clusters, args.seed)
    datagen.write_csv(ds, args.out)


COMMANDS = {"gen": cmd_gen, "test": cmd_test, "experiment": cmd_experiment,
            "split-select": cmd_split_select, "shuffle-null": cmd_shuffle_null}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (NumericalError, ExperimentError)):
        return EXIT_NUMERICAL
    return EXIT_INPUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except CITestError as exc:
        stage = getattr(exc, "stage", None)
        where = f" during {stage}" if stage else ""
        print(f"error{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
