"""Time the compiled and pure-Python Gibbs kernels on the same chains.

Usage: python benchmarks/bench_gibbs.py [--repeats 5] [--samples 2000]
"""

import argparse
import time

import numpy as np

from assure_crt.mcmc import BACKENDS, McmcSettings, run_chain
from assure_crt.priors import TABLE1_FAMILIES, AnalysisPrior
from assure_crt.trial_model import ClusterLayout, ClusterProbabilities, ModelParams, allocate_clusters, simulate_trial

CASES = [
    # (clusters, mean cluster size, variance family)
    (10, 5, 2),
    (10, 5, 5),
    (50, 4, 2),
    (50, 10, 3),
]


def make_data(J, n_bar, seed):
    rng = np.random.default_rng(seed)
    layout = ClusterLayout.balanced(allocate_clusters(J * n_bar, ClusterProbabilities.uniform(J), rng))
    return simulate_trial(ModelParams(10, 1, 2, 1), layout, rng)


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--samples", type=int, default=2000)
    parser.add_argument("--burn-in", type=int, default=1000)
    args = parser.parse_args(argv)
    if "cython" not in BACKENDS:
        raise SystemExit("compiled kernel is not built; run `pip install --no-build-isolation -e .` first")

    settings = McmcSettings(args.burn_in, args.samples)
    print(f"{'J':>4} {'n_bar':>6} {'family':>6} {'python_s':>10} {'cython_s':>10} {'speedup':>8} {'max_abs_diff':>13}")
    for J, n_bar, family in CASES:
        data = make_data(J, n_bar, seed=J * 100 + family)
        prior = AnalysisPrior(variance=TABLE1_FAMILIES[family])

        def chain(backend):
            return run_chain(data, prior, settings, np.random.default_rng(1), backend=backend)

        py = best_time(lambda: chain("python"), args.repeats)
        cy = best_time(lambda: chain("cython"), args.repeats)
        diff = float(np.max(np.abs(chain("python").delta - chain("cython").delta)))
        print(f"{J:>4} {n_bar:>6} {family:>6} {py:>10.4f} {cy:>10.4f} {py / cy:>8.1f} {diff:>13.2e}")


if __name__ == "__main__":
    main()
