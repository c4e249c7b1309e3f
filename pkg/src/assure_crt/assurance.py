"""Two-loop Monte Carlo assurance and sample-size search.

Outer loop: draw design parameters and simulate a trial. Inner loop: run
the analysis-prior MCMC on the simulated data and check the success
rule. The assurance estimate is the fraction of simulated trials that
succeed.

Random streams are keyed so results are reproducible and independent of
the worker count. Outer draw ``l`` takes its design parameters from
stream ``(seed, DESIGN, l)``. Its cluster sizes, outcomes and chain come
from stream ``(seed, TRIAL, n_T, l)``. Every candidate sample size
therefore sees the same design draws (common random numbers), and the
trial-level noise stays fresh.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as streams
from .errors import InvalidDesignError, InvalidParameterError, InvalidPriorError, NotAchievableError, NumericalError
from .mcmc import McmcSettings, SuccessRule, posterior_prob_exceeds, run_chain
from .priors import AnalysisPrior, CvSizes, DesignPrior, sample_design
from .trial_model import ClusterLayout, allocate_clusters, assign_arms, simulate_trial

MAX_FAILURE_FRACTION = 0.01


@dataclass(frozen=True)
class AssuranceSpec:
    J: int
    design_prior: DesignPrior
    analysis_prior: AnalysisPrior = field(default_factory=AnalysisPrior)
    rule: SuccessRule = field(default_factory=SuccessRule)
    outer_samples: int = 1000
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    base_seed: int = 0

    def __post_init__(self):
        if self.J < 2:
            raise InvalidDesignError(f"need at least 2 clusters, got {self.J}")
        if self.outer_samples < 1:
            raise InvalidParameterError("outer_samples must be >= 1")
        if isinstance(self.design_prior.sizes, CvSizes):
            raise InvalidPriorError(
                "the Bayesian assurance simulates cluster sizes; use a Dirichlet or equal-size prior"
            )


@dataclass
class AssuranceResult:
    """Estimate of the assurance at one total sample size.

    ``L`` counts the outer draws that contributed; draws whose chain failed
    numerically are excluded and counted in ``failures``.
    """

    n_T: int
    estimate: float
    mc_standard_error: float
    successes: int
    L: int
    K: int
    failures: int
    seed: int
    wall_time: float
    probabilities: np.ndarray = field(repr=False)

    @property
    def indicators(self) -> np.ndarray:
        return self.probabilities > self._confidence

    _confidence: float = field(default=0.95, repr=False)


@dataclass
class SampleSizeResult:
    per_run_sizes: list[int]
    modal_size: int
    modal_proportion: float
    assurance_at_mode: float


def outer_draw(spec: AssuranceSpec, n_T: int, ell: int) -> float:
    """Posterior ``Pr(delta > threshold)`` for outer draw ``ell`` (nan if the chain fails)."""
    draw = sample_design(spec.design_prior, spec.J, streams.stream(spec.base_seed, streams.DESIGN, ell))
    gen = streams.stream(spec.base_seed, streams.TRIAL, n_T, ell)
    layout = ClusterLayout(allocate_clusters(n_T, draw.p, gen), assign_arms(spec.J))
    data = simulate_trial(draw.theta, layout, gen)
    try:
        samples = run_chain(data, spec.analysis_prior, spec.mcmc, gen, allow_empty_arms=True)
    except NumericalError:
        return math.nan
    return posterior_prob_exceeds(samples, spec.rule.threshold)


def _outer_block(spec, n_T, start, stop):
    return [outer_draw(spec, n_T, ell) for ell in range(start, stop)]


class OuterLoopPool:
    """Distributes outer draws over worker processes; ``workers=1`` runs inline."""

    def __init__(self, workers: int = 1):
        if workers < 1:
            raise InvalidParameterError("workers must be >= 1")
        self.workers = workers
        self._executor = ProcessPoolExecutor(workers) if workers > 1 else None

    def probabilities(self, spec: AssuranceSpec, n_T: int) -> np.ndarray:
        L = spec.outer_samples
        if self._executor is None:
            return np.array(_outer_block(spec, n_T, 0, L))
        n_chunks = min(L, 4 * self.workers)
        edges = np.linspace(0, L, n_chunks + 1).astype(int)
        futures = [self._executor.submit(_outer_block, spec, n_T, a, b) for a, b in zip(edges[:-1], edges[1:])]
        # reduce in outer-draw order regardless of completion order
        return np.array([p for f in futures for p in f.result()])

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def estimate_assurance(spec: AssuranceSpec, n_T: int, *, workers: int = 1, pool: OuterLoopPool | None = None) -> AssuranceResult:
    """Two-loop Monte Carlo estimate of the assurance at total sample size ``n_T``."""
    if n_T < 0:
        raise InvalidDesignError(f"n_T must be >= 0, got {n_T}")
    start = time.perf_counter()
    if pool is None:
        with OuterLoopPool(workers) as own:
            probs = own.probabilities(spec, n_T)
    else:
        probs = pool.probabilities(spec, n_T)
    failed = np.isnan(probs)
    failures = int(failed.sum())
    if failures > MAX_FAILURE_FRACTION * spec.outer_samples:
        raise NumericalError(
            f"{failures} of {spec.outer_samples} inner chains failed at n_T={n_T}",
            {"n_T": n_T, "failures": failures, "failed_draws": np.flatnonzero(failed)[:20].tolist()},
        )
    ok = probs[~failed]
    successes = int(np.count_nonzero(ok > spec.rule.confidence))
    L = ok.size
    est = successes / L if L else math.nan
    return AssuranceResult(
        n_T=n_T,
        estimate=est,
        mc_standard_error=math.sqrt(est * (1 - est) / L) if L else math.nan,
        successes=successes,
        L=L,
        K=spec.mcmc.samples,
        failures=failures,
        seed=spec.base_seed,
        wall_time=time.perf_counter() - start,
        probabilities=probs,
        _confidence=spec.rule.confidence,
    )


def _search(spec, target, grid, pool, method="linear"):
    grid = [int(g) for g in grid]
    if not grid:
        raise InvalidDesignError("sample-size grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidDesignError("sample-size grid must be strictly ascending")
    if not 0 < target < 1:
        raise InvalidParameterError(f"target must lie in (0, 1), got {target}")
    results = {}

    def evaluate(i):
        if i not in results:
            results[i] = estimate_assurance(spec, spec.J * grid[i], pool=pool)
        return results[i]

    if method == "linear":
        for i in range(len(grid)):
            if evaluate(i).estimate >= target:
                return results[i]
    elif method == "bisect":
        lo, hi = 0, len(grid) - 1
        if evaluate(hi).estimate >= target:
            while lo < hi:
                mid = (lo + hi) // 2
                if evaluate(mid).estimate >= target:
                    hi = mid
                else:
                    lo = mid + 1
            return evaluate(lo)
    else:
        raise InvalidParameterError(f"unknown search method {method!r}")
    best = max(r.estimate for r in results.values())
    raise NotAchievableError(
        f"assurance target {target} not reached on the grid (best {best:.4f})", best=best
    )


def find_sample_size(
    spec: AssuranceSpec,
    target: float,
    per_cluster_grid,
    *,
    workers: int = 1,
    pool: OuterLoopPool | None = None,
    method: str = "linear",
) -> int:
    """Smallest ``n_T = J * n_bar`` over the ascending ``n_bar`` grid with assurance >= target."""
    if pool is None:
        with OuterLoopPool(workers) as own:
            return _search(spec, target, per_cluster_grid, own, method).n_T
    return _search(spec, target, per_cluster_grid, pool, method).n_T


def modal_sample_size(
    spec: AssuranceSpec,
    target: float,
    per_cluster_grid,
    repetitions: int,
    *,
    workers: int = 1,
    method: str = "linear",
    progress=None,
) -> SampleSizeResult:
    """Repeat the search with derived seeds and report the modal sample size.

    Ties between equally frequent sizes go to the smaller size.
    """
    if repetitions < 1:
        raise InvalidParameterError("repetitions must be >= 1")
    sizes, assurances = [], []
    with OuterLoopPool(workers) as pool:
        for r in range(repetitions):
            rep_spec = replace(spec, base_seed=streams.derive_seed(spec.base_seed, streams.REPEAT, r))
            found = _search(rep_spec, target, per_cluster_grid, pool, method)
            sizes.append(found.n_T)
            assurances.append(found.estimate)
            if progress is not None:
                progress(r, found)
    counts = Counter(sizes)
    top = max(counts.values())
    mode = min(s for s, c in counts.items() if c == top)
    at_mode = [a for s, a in zip(sizes, assurances) if s == mode]
    return SampleSizeResult(sizes, mode, top / repetitions, float(np.mean(at_mode)))


ERROR_MODEL = "per run: correct size with prob p, else one grid step high or low with equal probability"


def repetitions_needed(
    per_run_correct_prob: float,
    confidence: float = 0.9,
    *,
    n_sims: int = 100_000,
    seed: int = 0,
    max_repetitions: int = 10_000,
) -> int:
    """Smallest odd number of repeated searches for which the correct size is
    the strict plurality with probability >= ``confidence``.

    Uses the error model in ``ERROR_MODEL``. The plurality probability is
    estimated by simulating ``n_sims`` sets of searches.
    """
    p = per_run_correct_prob
    if not 0 < p <= 1:
        raise InvalidParameterError(f"per-run probability must lie in (0, 1], got {p}")
    if not 0 < confidence < 1:
        raise InvalidParameterError(f"confidence must lie in (0, 1), got {confidence}")
    if p == 1:
        return 1
    q = (1.0 - p) / 2.0
    if p <= q:
        raise NotAchievableError(
            f"correct size is never the plurality when p={p} <= (1-p)/2", best=p
        )
    gen = np.random.default_rng(seed)
    best = 0.0
    for R in range(1, max_repetitions + 1, 2):
        counts = gen.multinomial(R, [p, q, q], size=n_sims)
        prob = float(np.mean((counts[:, 0] > counts[:, 1]) & (counts[:, 0] > counts[:, 2])))
        best = max(best, prob)
        if prob >= confidence:
            return R
    raise NotAchievableError(f"confidence {confidence} not reached within {max_repetitions} repetitions", best=best)
