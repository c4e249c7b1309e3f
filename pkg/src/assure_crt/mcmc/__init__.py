"""Posterior inference for the random-intercept model.

Each sweep updates ``lambda``, then ``delta``, then the cluster effects,
then the variance block. Gamma-precision priors give exact conjugate
draws for the variances. The other four families use component-wise
random-walk Metropolis on unconstrained coordinates: ``(log var_between,
log var_within)``, or ``(logit rho, log var_within)`` for the ICC
families. Step sizes adapt during burn-in only.

The sweep runs in a compiled kernel when the extension is built and in
a numpy fallback otherwise; both consume the random stream identically.
Set ``ASSURE_CRT_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidDataError, InvalidParameterError, NumericalError
from ..priors import AnalysisPrior, GammaPrecision, UniformBLogUniformW, LogUniformBoth
from ..trial_model import TrialData
from . import _gibbs_py

try:
    from . import _gibbs as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _gibbs_py.run}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.run

DEFAULT_BACKEND = os.environ.get("ASSURE_CRT_BACKEND") or ("cython" if _compiled is not None else "python")
if DEFAULT_BACKEND not in BACKENDS:
    raise ImportError(f"ASSURE_CRT_BACKEND={DEFAULT_BACKEND!r} is not available; have {sorted(BACKENDS)}")


@dataclass(frozen=True)
class McmcSettings:
    burn_in: int = 1000
    samples: int = 1000
    thin: int = 1
    target_acceptance: float = 0.44
    adapt: bool = True

    def __post_init__(self):
        if self.burn_in < 0 or self.samples < 1 or self.thin < 1:
            raise InvalidParameterError("need burn_in >= 0, samples >= 1, thin >= 1")
        if not 0 < self.target_acceptance < 1:
            raise InvalidParameterError("target acceptance must lie in (0, 1)")


@dataclass(frozen=True)
class SuccessRule:
    """Declare success when ``Pr(delta > threshold | y) > confidence``."""

    confidence: float = 0.95
    threshold: float = 0.0

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise InvalidParameterError(f"confidence must lie in (0, 1), got {self.confidence}")


@dataclass
class PosteriorSamples:
    delta: np.ndarray
    lam: np.ndarray
    var_between: np.ndarray
    var_within: np.ndarray
    acceptance_rates: np.ndarray
    step_sizes: np.ndarray

    def __len__(self):
        return self.delta.size


def posterior_prob_exceeds(samples, threshold: float = 0.0) -> float:
    """Fraction of ``delta`` draws strictly above ``threshold``."""
    delta = samples.delta if isinstance(samples, PosteriorSamples) else np.asarray(samples)
    if delta.size < 1:
        raise InvalidParameterError("need at least one posterior draw")
    return float(np.count_nonzero(delta > threshold)) / delta.size


def success_indicator(prob: float, rule: SuccessRule) -> bool:
    """Strict rule: success iff ``prob > rule.confidence``."""
    if not 0 <= prob <= 1:
        raise InvalidParameterError(f"probability must lie in [0, 1], got {prob}")
    return prob > rule.confidence


def _clip_to_support(family, vb, vw):
    if isinstance(family, GammaPrecision):
        return vb, vw
    lo_w, hi_w = family.l_w, family.u_w
    lw = min(max(math.log(vw), lo_w + 1e-3 * (hi_w - lo_w)), hi_w - 1e-3 * (hi_w - lo_w))
    vw = math.exp(lw)
    if isinstance(family, LogUniformBoth):
        span = family.u_b - family.l_b
        vb = math.exp(min(max(math.log(vb), family.l_b + 1e-3 * span), family.u_b - 1e-3 * span))
    elif isinstance(family, UniformBLogUniformW):
        span = family.u_b - family.l_b
        vb = min(max(vb, family.l_b + 1e-3 * span), family.u_b - 1e-3 * span)
    else:
        lo, hi = getattr(family, "l_rho", 0.0), getattr(family, "u_rho", 1.0)
        rho = vb / (vb + vw)
        rho = min(max(rho, lo + 1e-3 * (hi - lo)), hi - 1e-3 * (hi - lo))
        vb = rho * vw / (1 - rho)
    return vb, vw


def initial_state(data: TrialData, prior: AnalysisPrior):
    """Moment-based starting values ``(lam, delta, var_between, var_within)``."""
    sizes, arms = data.layout.sizes, data.layout.arms
    sums, means, within = data.cluster_stats()
    n_c, n_t = data.arm_counts()
    lam = sums[arms == 0].sum() / n_c if n_c else prior.lambda_mean
    delta = sums[arms == 1].sum() / n_t - lam if (n_t and n_c) else prior.delta_mean
    nonempty = sizes > 0
    dof = sizes.sum() - nonempty.sum()
    vw = within / dof if dof > 0 and within > 0 else 1.0
    vb = 1.0
    if nonempty.sum() > 2:
        resid = means[nonempty] - lam - delta * arms[nonempty]
        vb = max(float(np.var(resid, ddof=2)) - vw / sizes[nonempty].mean(), 0.05 * vw)
    vb, vw = _clip_to_support(prior.variance, vb, vw)
    return float(lam), float(delta), vb, vw


def run_chain(
    data: TrialData,
    prior: AnalysisPrior,
    settings: McmcSettings,
    rng: np.random.Generator,
    *,
    fixed_variances: tuple[float, float] | None = None,
    allow_empty_arms: bool = False,
    backend: str | None = None,
) -> PosteriorSamples:
    """Run one chain and return the kept draws.

    Args:
        fixed_variances: hold ``(var_between, var_within)`` at these values
            and sample only the mean parameters (validation mode).
        allow_empty_arms: permit trials with no observations in an arm; the
            posterior for ``delta`` is then driven by its prior.
        backend: ``"cython"`` or ``"python"``; defaults to ``DEFAULT_BACKEND``.
    """
    n_c, n_t = data.arm_counts()
    if not allow_empty_arms and (n_c == 0 or n_t == 0):
        raise InvalidDataError(f"each arm needs observations (control={n_c}, treatment={n_t})")
    kernel = BACKENDS[backend or DEFAULT_BACKEND]
    sizes, arms = data.layout.sizes, data.layout.arms
    sums, means, within = data.cluster_stats()
    if not (np.all(np.isfinite(sums)) and math.isfinite(within)):
        raise NumericalError("cluster sums or within-cluster sum of squares overflow",
                             {"iteration": -1, "within": within})
    lam, delta, vb, vw = initial_state(data, prior)
    if fixed_variances is not None:
        vb, vw = map(float, fixed_variances)
        if not (vb > 0 and vw > 0):
            raise InvalidParameterError("fixed variances must be > 0")
    family = prior.variance
    J, N = sizes.size, max(int(sizes.sum()), 1)
    step = np.array([min(2.4 * math.sqrt(2.0 / J), 3.0), min(2.4 * math.sqrt(2.0 / N), 3.0)])
    lam_s, del_s, vb_s, vw_s, acc, step, status, fail_iter, last = kernel(
        sizes, sums, means, float(within), arms,
        float(prior.lambda_mean), float(prior.lambda_var), float(prior.delta_mean), float(prior.delta_var),
        int(family.code), np.asarray(family.params, dtype=float),
        float(lam), float(delta), float(vb), float(vw), np.zeros(J),
        fixed_variances is not None,
        int(settings.burn_in), int(settings.samples), int(settings.thin),
        float(settings.target_acceptance), bool(settings.adapt),
        step, rng,
    )
    if status:
        raise NumericalError(
            f"non-finite chain state at iteration {fail_iter}",
            {"iteration": int(fail_iter), "state": dict(zip(("lam", "delta", "var_between", "var_within"), last))},
        )
    if family.conjugate or fixed_variances is not None:
        acc = np.empty(0)
    return PosteriorSamples(del_s, lam_s, vb_s, vw_s, acc, np.asarray(step))


def write_trace(samples: PosteriorSamples, path) -> None:
    """Dump kept draws as CSV: iteration, lambda, delta, var_between, var_within."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lambda", "delta", "var_between", "var_within"])
        for i in range(len(samples)):
            w.writerow([i + 1, repr(float(samples.lam[i])), repr(float(samples.delta[i])),
                        repr(float(samples.var_between[i])), repr(float(samples.var_within[i]))])


def batch_means_se(x, n_batches: int = 50) -> float:
    """Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    if b < 1:
        raise InvalidParameterError("series too short for batch means")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
