"""Small Monte-Carlo comparison of rejection rates, written to a CSV file."""
import sys

from splitkci import harness

out = sys.argv[1] if len(sys.argv) > 1 else "error_rates.csv"
for hyp in ("h0", "h1"):
    for method in ("kci", "splitkci", "gcm", "rbpt2_corrected"):
        config = harness.ExperimentConfig(method=method, generator="postnonlinear", d=1,
                                          hypothesis=hyp, N=400, trials=20, num_resamples=500)
        row = harness.run_experiment(config, out=out).rows[0]
        print(f"{hyp} {method:16s} rate={row['rejection_rate']:.2f} +- {row['standard_error']:.2f}")
print(f"rows appended to {out}")
