"""Show the split rejection rate per test ratio on one circular dataset."""
from splitkci import harness

config = harness.ExperimentConfig(method="splitkci", N=1000, gamma=0.05)
dataset = config.make_dataset(seed=0)
beta, trace = harness.choose_ratio(config, dataset, seed=0, return_trace=True)
for b, omega in trace:
    print(f"beta={b:.3f}  split rejection rate={omega:.2f}")
print(f"selected test ratio: {beta}")
