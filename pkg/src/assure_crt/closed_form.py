"""Closed-form power of the cluster-trial Wald test and hybrid assurance.

Power for ``J`` clusters of mean size ``n_bar``:

    Phi( sqrt(J n_bar / (4 [1 + ((nu^2 + 1) n_bar - 1) rho] sigma^2)) * delta - z_{1-alpha} )

with ``sigma`` the overall outcome standard deviation, ``rho`` the ICC and
``nu`` the coefficient of variation of cluster sizes. Hybrid assurance
averages this power over design-prior draws of ``(sigma, rho, nu)``; in
``full`` mode it also draws ``delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvalidParameterError, InvalidPriorError, NotAchievableError
from .priors import DesignPrior, PointMass, sample_design_arrays

MCID = "mcid"
FULL = "full"


@dataclass(frozen=True)
class PowerInputs:
    J: int
    n_bar: float
    delta_M: float
    sigma: float
    rho: float
    nu: float
    alpha: float = 0.05

    def __post_init__(self):
        if self.J < 2:
            raise InvalidParameterError(f"need at least 2 clusters, got {self.J}")
        if not self.n_bar > 0:
            raise InvalidParameterError(f"mean cluster size must be > 0, got {self.n_bar}")
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if not 0 <= self.rho < 1:
            raise InvalidParameterError(f"ICC must lie in [0, 1), got {self.rho}")
        if not self.nu >= 0:
            raise InvalidParameterError(f"cv of cluster sizes must be >= 0, got {self.nu}")
        if not 0 < self.alpha < 1:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not design_effect(self.n_bar, self.rho, self.nu) > 0:
            raise InvalidParameterError("design effect must be positive")


def design_effect(n_bar, rho, nu):
    return 1.0 + ((nu * nu + 1.0) * n_bar - 1.0) * rho


def power_array(J, n_bar, delta, sigma, rho, nu, alpha=0.05):
    """Vectorised power; arguments broadcast."""
    z = special.ndtri(1.0 - alpha)
    scale = np.sqrt(J * n_bar / (4.0 * design_effect(n_bar, rho, nu) * sigma**2))
    return special.ndtr(scale * delta - z)


def power(inputs: PowerInputs) -> float:
    i = inputs
    return float(power_array(i.J, i.n_bar, i.delta_M, i.sigma, i.rho, i.nu, i.alpha))


def power_sample_size(
    J: int,
    target: float,
    delta_M: float,
    sigma: float,
    rho: float,
    nu: float,
    alpha: float = 0.05,
) -> int:
    """Smallest ``n_T = J * n_bar`` (integer ``n_bar >= 1``) with power >= target."""
    if not 0 < target < 1:
        raise InvalidParameterError(f"target must lie in (0, 1), got {target}")

    def pw(n_bar):
        return power(PowerInputs(J, n_bar, delta_M, sigma, rho, nu, alpha))

    if pw(1) >= target:
        return J
    if delta_M <= 0:
        raise NotAchievableError(f"power never reaches {target} for delta_M={delta_M}", best=pw(1))
    if rho > 0:
        limit = float(special.ndtr(math.sqrt(J / (4.0 * (nu * nu + 1.0) * rho * sigma**2)) * delta_M - special.ndtri(1 - alpha)))
        if limit < target:
            raise NotAchievableError(f"power is bounded by {limit:.4f} < {target} as n_bar grows", best=limit)
    # the inequality is linear in n_bar; solve it, then fix rounding locally
    a2 = (special.ndtri(1 - alpha) + special.ndtri(target)) ** 2
    slope = J * delta_M**2 - 4.0 * sigma**2 * a2 * (nu * nu + 1.0) * rho
    n_bar = max(1, math.ceil(4.0 * sigma**2 * a2 * (1.0 - rho) / slope)) if slope > 0 else 1
    while n_bar > 1 and pw(n_bar - 1) >= target:
        n_bar -= 1
    while pw(n_bar) < target:
        n_bar += 1
    return J * n_bar


def _draws(design_prior: DesignPrior, mode: str, M: int, rng, delta_M):
    if mode not in (MCID, FULL):
        raise InvalidParameterError(f"hybrid mode must be 'mcid' or 'full', got {mode!r}")
    d = sample_design_arrays(design_prior, M, rng)
    if mode == MCID:
        if delta_M is None:
            if not isinstance(design_prior.delta, PointMass):
                raise InvalidPriorError("hybrid MCID needs a fixed delta_M")
            delta_M = design_prior.delta.value
        d["delta"] = np.full(M, float(delta_M))
    return d


def hybrid_assurance(
    design_prior: DesignPrior,
    J: int,
    n_T: float,
    alpha: float,
    mode: str,
    M: int,
    rng: np.random.Generator,
    delta_M: float | None = None,
) -> float:
    """Closed-form power averaged over ``M`` design-prior draws."""
    d = _draws(design_prior, mode, M, rng, delta_M)
    return float(np.mean(power_array(J, n_T / J, d["delta"], d["sigma"], d["rho"], d["nu"], alpha)))


def hybrid_sample_size(
    design_prior: DesignPrior,
    J: int,
    target: float,
    alpha: float,
    mode: str,
    M: int,
    rng: np.random.Generator,
    delta_M: float | None = None,
    max_n_bar: int = 5000,
) -> int:
    """Smallest ``n_T = J * n_bar`` with hybrid assurance >= target.

    One set of design draws is shared by every candidate ``n_bar``.
    """
    return hybrid_search(design_prior, J, target, alpha, mode, M, rng, delta_M, max_n_bar)[0]


def hybrid_search(design_prior, J, target, alpha, mode, M, rng, delta_M=None, max_n_bar=5000):
    """Like ``hybrid_sample_size`` but returns ``(n_T, assurance at n_T)``."""
    if not 0 < target < 1:
        raise InvalidParameterError(f"target must lie in (0, 1), got {target}")
    d = _draws(design_prior, mode, M, rng, delta_M)
    best = 0.0
    for n_bar in range(1, max_n_bar + 1):
        a = float(np.mean(power_array(J, n_bar, d["delta"], d["sigma"], d["rho"], d["nu"], alpha)))
        best = max(best, a)
        if a >= target:
            return J * n_bar, a
    raise NotAchievableError(f"hybrid assurance below {target} up to n_bar={max_n_bar} (best {best:.4f})", best=best)
