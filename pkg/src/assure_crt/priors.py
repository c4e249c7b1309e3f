"""Analysis and design priors.

Analysis priors are what the trial statistician uses at the end of the
trial: Normal priors on ``lambda`` and ``delta`` plus one of five families
of priors on the variance components. Design priors describe current
beliefs about the parameters when planning, and are sampled in the outer
loop of the assurance calculation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Union

import numpy as np
from scipy import special

from .errors import InvalidParameterError, InvalidPriorError, MissingDataError
from .trial_model import (
    ClusterProbabilities,
    ModelParams,
    sample_cluster_probabilities,
    variances_from_icc,
)

# ---------------------------------------------------------------------------
# analysis priors on (var_between, var_within)


def _check_interval(lo, hi, name):
    if not lo < hi:
        raise InvalidPriorError(f"{name}: lower bound {lo} must be below upper bound {hi}")


def _check_positive(name, *values):
    for v in values:
        if not v > 0:
            raise InvalidPriorError(f"{name}: shape/rate parameters must be > 0, got {v}")


@dataclass(frozen=True)
class GammaPrecision:
    """``1/var_between ~ Gamma(r_b, s_b)`` and ``1/var_within ~ Gamma(r_w, s_w)`` (rate form)."""

    r_b: float
    s_b: float
    r_w: float
    s_w: float
    code: ClassVar[int] = 0
    conjugate: ClassVar[bool] = True

    def __post_init__(self):
        _check_positive("GammaPrecision", self.r_b, self.s_b, self.r_w, self.s_w)

    @property
    def params(self):
        return (self.r_b, self.s_b, self.r_w, self.s_w)

    def log_density(self, var_between, var_within):
        if not (var_between > 0 and var_within > 0):
            return -math.inf
        # inverse-gamma densities
        return (
            -(self.r_b + 1) * math.log(var_between) - self.s_b / var_between
            - (self.r_w + 1) * math.log(var_within) - self.s_w / var_within
        )


@dataclass(frozen=True)
class LogUniformBoth:
    """``log var_between ~ U(l_b, u_b)`` and ``log var_within ~ U(l_w, u_w)``."""

    l_b: float
    u_b: float
    l_w: float
    u_w: float
    code: ClassVar[int] = 1
    conjugate: ClassVar[bool] = False

    def __post_init__(self):
        _check_interval(self.l_b, self.u_b, "log var_between")
        _check_interval(self.l_w, self.u_w, "log var_within")

    @property
    def params(self):
        return (self.l_b, self.u_b, self.l_w, self.u_w)

    def log_density(self, var_between, var_within):
        if not (var_between > 0 and var_within > 0):
            return -math.inf
        lb, lw = math.log(var_between), math.log(var_within)
        if not (self.l_b <= lb <= self.u_b and self.l_w <= lw <= self.u_w):
            return -math.inf
        return -lb - lw


@dataclass(frozen=True)
class UniformBLogUniformW:
    """``var_between ~ U(l_b, u_b)`` and ``log var_within ~ U(l_w, u_w)``."""

    l_b: float
    u_b: float
    l_w: float
    u_w: float
    code: ClassVar[int] = 2
    conjugate: ClassVar[bool] = False

    def __post_init__(self):
        _check_interval(self.l_b, self.u_b, "var_between")
        if self.l_b < 0:
            raise InvalidPriorError("var_between lower bound must be >= 0")
        _check_interval(self.l_w, self.u_w, "log var_within")

    @property
    def params(self):
        return (self.l_b, self.u_b, self.l_w, self.u_w)

    def log_density(self, var_between, var_within):
        if not (var_between > 0 and var_within > 0):
            return -math.inf
        lw = math.log(var_within)
        if not (self.l_b <= var_between <= self.u_b and self.l_w <= lw <= self.u_w):
            return -math.inf
        return -lw


@dataclass(frozen=True)
class UniformICC:
    """``rho ~ U(l_rho, u_rho)`` and ``log var_within ~ U(l_w, u_w)``."""

    l_rho: float
    u_rho: float
    l_w: float
    u_w: float
    code: ClassVar[int] = 3
    conjugate: ClassVar[bool] = False

    def __post_init__(self):
        _check_interval(self.l_rho, self.u_rho, "ICC")
        if self.l_rho < 0 or self.u_rho > 1:
            raise InvalidPriorError("ICC bounds must lie within [0, 1]")
        _check_interval(self.l_w, self.u_w, "log var_within")

    @property
    def params(self):
        return (self.l_rho, self.u_rho, self.l_w, self.u_w)

    def log_density(self, var_between, var_within):
        if not (var_between > 0 and var_within > 0):
            return -math.inf
        total = var_between + var_within
        rho = var_between / total
        lw = math.log(var_within)
        if not (self.l_rho <= rho <= self.u_rho and self.l_w <= lw <= self.u_w):
            return -math.inf
        # 1/var_within from the log-uniform cancels against d rho / d var_between
        return -2.0 * math.log(total) - math.log(self.u_rho - self.l_rho)


@dataclass(frozen=True)
class BetaICC:
    """``rho ~ Beta(r_rho, s_rho)`` and ``log var_within ~ U(l_w, u_w)``."""

    r_rho: float
    s_rho: float
    l_w: float
    u_w: float
    code: ClassVar[int] = 4
    conjugate: ClassVar[bool] = False

    def __post_init__(self):
        _check_positive("BetaICC", self.r_rho, self.s_rho)
        _check_interval(self.l_w, self.u_w, "log var_within")

    @property
    def params(self):
        return (self.r_rho, self.s_rho, self.l_w, self.u_w)

    def log_density(self, var_between, var_within):
        if not (var_between > 0 and var_within > 0):
            return -math.inf
        lw = math.log(var_within)
        if not self.l_w <= lw <= self.u_w:
            return -math.inf
        log_total = math.log(var_between + var_within)
        # log rho and log(1 - rho) without forming rho, which rounds to 0 or 1
        return (
            (self.r_rho - 1) * (math.log(var_between) - log_total)
            + (self.s_rho - 1) * (lw - log_total)
            - special.betaln(self.r_rho, self.s_rho)
            - 2.0 * log_total
        )


VarianceFamily = Union[GammaPrecision, LogUniformBoth, UniformBLogUniformW, UniformICC, BetaICC]

#: The six variance-prior settings compared in the analysis-prior study.
TABLE1_FAMILIES: dict[int, VarianceFamily] = {
    1: GammaPrecision(0.001, 0.001, 0.001, 0.001),
    2: GammaPrecision(0.1, 0.1, 0.1, 0.1),
    3: LogUniformBoth(-10.0, 10.0, -10.0, 10.0),
    4: UniformBLogUniformW(0.0, 100.0, -10.0, 10.0),
    5: UniformICC(0.0, 1.0, -10.0, 10.0),
    6: BetaICC(1.0, 1.0, -10.0, 10.0),
}


def log_density_variance_family(family: VarianceFamily, var_between: float, var_within: float) -> float:
    """Log prior density of ``(var_between, var_within)`` up to a constant; -inf off support."""
    return family.log_density(var_between, var_within)


@dataclass(frozen=True)
class AnalysisPrior:
    """Normal priors on ``lambda`` and ``delta`` plus a variance family."""

    lambda_mean: float = 1.0
    lambda_var: float = 1000.0
    delta_mean: float = 0.0
    delta_var: float = 1000.0
    variance: VarianceFamily = TABLE1_FAMILIES[2]

    def __post_init__(self):
        if not (self.lambda_var > 0 and self.delta_var > 0):
            raise InvalidPriorError("prior variances of lambda and delta must be > 0")


# ---------------------------------------------------------------------------
# design-prior marginals


@dataclass(frozen=True)
class PointMass:
    value: float

    def sample(self, rng, size=None):
        return self.value if size is None else np.full(size, float(self.value))

    def ppf(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value)[()]

    @property
    def mean(self):
        return self.value

    @property
    def var(self):
        return 0.0


@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise InvalidPriorError(f"Normal variance must be > 0, got {self.var}")

    @property
    def sd(self):
        return math.sqrt(self.var)

    def sample(self, rng, size=None):
        return self.mean + self.sd * rng.standard_normal(size)

    def ppf(self, u):
        return self.mean + self.sd * special.ndtri(u)


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal restricted to ``(lower, inf)``, sampled by resampling."""

    loc: float
    scale2: float
    lower: float = 0.0

    def __post_init__(self):
        if not self.scale2 > 0:
            raise InvalidPriorError(f"Normal variance must be > 0, got {self.scale2}")
        if special.ndtr((self.loc - self.lower) / math.sqrt(self.scale2)) < 1e-6:
            raise InvalidPriorError("truncated Normal keeps less than 1e-6 of its mass")

    def sample(self, rng, size=None):
        sd = math.sqrt(self.scale2)
        if size is None:
            while True:
                x = self.loc + sd * rng.standard_normal()
                if x > self.lower:
                    return x
        out = self.loc + sd * rng.standard_normal(size)
        bad = out <= self.lower
        while bad.any():
            out[bad] = self.loc + sd * rng.standard_normal(int(bad.sum()))
            bad = out <= self.lower
        return out

    def ppf(self, u):
        sd = math.sqrt(self.scale2)
        lo = special.ndtr((self.lower - self.loc) / sd)
        return self.loc + sd * special.ndtri(lo + np.asarray(u) * (1.0 - lo))

    @property
    def mean(self):
        return self.loc


@dataclass(frozen=True)
class Gamma:
    """Gamma with shape and rate."""

    shape: float
    rate: float

    def __post_init__(self):
        _check_positive("Gamma", self.shape, self.rate)

    @classmethod
    def from_moments(cls, mean: float, variance: float) -> "Gamma":
        return cls(*gamma_from_moments(mean, variance))

    def sample(self, rng, size=None):
        return rng.standard_gamma(self.shape, size) / self.rate

    def ppf(self, u):
        return special.gammaincinv(self.shape, u) / self.rate

    def cdf(self, x):
        return special.gammainc(self.shape, np.asarray(x) * self.rate)

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def var(self):
        return self.shape / self.rate**2


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        _check_positive("Beta", self.a, self.b)

    @classmethod
    def from_moments(cls, mean: float, variance: float) -> "Beta":
        if not 0 < mean < 1:
            raise InvalidPriorError(f"Beta mean must lie in (0, 1), got {mean}")
        if not 0 < variance < mean * (1 - mean):
            raise InvalidPriorError(f"Beta variance must lie in (0, mean*(1-mean)), got {variance}")
        k = mean * (1 - mean) / variance - 1
        return cls(mean * k, (1 - mean) * k)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size)

    def ppf(self, u):
        return special.betaincinv(self.a, self.b, u)

    def cdf(self, x):
        return special.betainc(self.a, self.b, x)

    @property
    def mean(self):
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class EmpiricalMarginal:
    """A marginal known only through samples (e.g. MCMC output for the ICC)."""

    samples: np.ndarray
    min_samples: ClassVar[int] = 100

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float))
        if s.size == 0:
            raise MissingDataError("empirical marginal has no samples")
        if s.size < self.min_samples:
            raise InvalidPriorError(f"empirical marginal needs >= {self.min_samples} samples, got {s.size}")
        if not np.all(np.isfinite(s)):
            raise InvalidPriorError("empirical samples must be finite")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    def ppf(self, u):
        return empirical_quantile(self, u)

    def sample(self, rng, size=None):
        return self.ppf(rng.random(size))

    def cdf(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.samples.size

    @property
    def mean(self):
        return float(self.samples.mean())


Marginal = Union[PointMass, Normal, TruncatedNormal, Gamma, Beta, EmpiricalMarginal]


def gamma_from_moments(mean: float, variance: float) -> tuple[float, float]:
    """Shape and rate of the gamma distribution with the given mean and variance."""
    if not (mean > 0 and variance > 0):
        raise InvalidPriorError(f"gamma moments must be positive, got mean={mean}, variance={variance}")
    return mean * mean / variance, mean / variance


def empirical_quantile(marginal, u):
    """Inverse empirical CDF, linear between order statistics at ``u * (N - 1)``.

    ``marginal`` is an ``EmpiricalMarginal`` or any array of samples.
    """
    if isinstance(marginal, EmpiricalMarginal):
        s = marginal.samples
    else:
        s = np.sort(np.asarray(marginal, dtype=float).ravel())
    if s.size == 0:
        raise MissingDataError("empirical marginal has no samples")
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise InvalidParameterError("quantile level must lie in [0, 1]")
    return np.interp(u * (s.size - 1), np.arange(s.size), s)[()]


def load_icc_samples(path) -> EmpiricalMarginal:
    """Read ICC samples: one number per line; a non-numeric first line is a header."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MissingDataError(f"{path}: no ICC samples")
    try:
        float(lines[0].split(",")[0])
    except ValueError:
        lines = lines[1:]
    try:
        values = np.array([float(ln.split(",")[0]) for ln in lines])
    except ValueError as exc:
        raise InvalidPriorError(f"{path}: {exc}") from None
    return EmpiricalMarginal(values)


def copula_sample(sigma_marginal, icc_marginal, corr: float, rng: np.random.Generator, size=None):
    """Draw ``(sigma, rho)`` joined by a Gaussian copula with correlation ``corr``."""
    if not -1 <= corr <= 1:
        raise InvalidParameterError(f"copula correlation must lie in [-1, 1], got {corr}")
    z = rng.standard_normal((2,) if size is None else (size, 2))
    z1, z2 = z[..., 0], z[..., 1]
    x2 = corr * z1 + math.sqrt(1.0 - corr * corr) * z2
    u1, u2 = special.ndtr(z1), special.ndtr(x2)
    return sigma_marginal.ppf(u1)[()], icc_marginal.ppf(u2)[()]


# ---------------------------------------------------------------------------
# design priors


@dataclass(frozen=True)
class VarianceComponents:
    """Independent marginals on ``var_between`` and ``var_within``."""

    between: Marginal
    within: Marginal


@dataclass(frozen=True)
class SdIcc:
    """Marginals on the overall sd and the ICC, optionally Gaussian-copula coupled."""

    sigma: Marginal
    icc: Marginal
    copula: float | None = None

    def __post_init__(self):
        if self.copula is not None:
            if not -1 <= self.copula <= 1:
                raise InvalidPriorError("copula correlation must lie in [-1, 1]")
            for m in (self.sigma, self.icc):
                if isinstance(m, PointMass):
                    raise InvalidPriorError("copula needs distributional sigma and ICC marginals")


@dataclass(frozen=True)
class DirichletSizes:
    """Cluster probabilities ``p ~ Dirichlet(a, ..., a)`` (full Bayesian design)."""

    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidPriorError(f"Dirichlet concentration must be > 0, got {self.a}")


@dataclass(frozen=True)
class EqualSizes:
    """Equal cluster probabilities ``p_j = 1/J``; sizes still multinomial."""


@dataclass(frozen=True)
class CvSizes:
    """Coefficient of variation of cluster sizes (hybrid approaches)."""

    nu: Marginal


SizeSpec = Union[DirichletSizes, EqualSizes, CvSizes]


@dataclass(frozen=True)
class DesignPrior:
    lam: Marginal
    delta: Marginal
    variance: Union[VarianceComponents, SdIcc]
    sizes: SizeSpec


@dataclass(frozen=True)
class DesignDraw:
    """One joint draw from a design prior."""

    theta: ModelParams
    sigma: float
    rho: float
    p: ClusterProbabilities | None = None
    nu: float | None = None


def _draw_variance(spec, rng, size=None):
    """Return ``(sigma, rho)`` arrays (or scalars)."""
    if isinstance(spec, VarianceComponents):
        b = spec.between.sample(rng, size)
        w = spec.within.sample(rng, size)
        if np.any(np.asarray(b) < 0) or np.any(np.asarray(w) <= 0):
            raise InvalidPriorError("variance draws must be positive; use a truncated Normal")
        total = b + w
        return np.sqrt(total)[()], (b / total)[()]
    if spec.copula is not None:
        return copula_sample(spec.sigma, spec.icc, spec.copula, rng, size)
    return spec.sigma.sample(rng, size), spec.icc.sample(rng, size)


def sample_design(prior: DesignPrior, J: int, rng: np.random.Generator) -> DesignDraw:
    """One joint draw of the design parameters, plus cluster probabilities.

    Draw order (fixed, for reproducibility): lambda, delta, variance block,
    cluster-size block.
    """
    lam = float(prior.lam.sample(rng))
    delta = float(prior.delta.sample(rng))
    if isinstance(prior.variance, VarianceComponents):
        b = float(prior.variance.between.sample(rng))
        w = float(prior.variance.within.sample(rng))
        theta = ModelParams(lam, delta, b, w)
        sigma, rho = math.sqrt(b + w), b / (b + w)
    else:
        sigma, rho = _draw_variance(prior.variance, rng)
        sigma, rho = float(sigma), float(rho)
        if not sigma > 0:
            raise InvalidPriorError(f"sigma draw must be > 0, got {sigma}")
        theta = ModelParams(lam, delta, *variances_from_icc(rho, sigma * sigma))
    sizes = prior.sizes
    if isinstance(sizes, DirichletSizes):
        return DesignDraw(theta, sigma, rho, p=sample_cluster_probabilities(J, sizes.a, rng))
    if isinstance(sizes, EqualSizes):
        return DesignDraw(theta, sigma, rho, p=ClusterProbabilities.uniform(J), nu=0.0)
    return DesignDraw(theta, sigma, rho, nu=float(sizes.nu.sample(rng)))


def sample_design_arrays(prior: DesignPrior, M: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """``M`` vectorised draws of ``(delta, sigma, rho, nu)`` for closed-form averaging."""
    prior.lam.sample(rng, M)
    delta = np.asarray(prior.delta.sample(rng, M), dtype=float)
    sigma, rho = _draw_variance(prior.variance, rng, M)
    sizes = prior.sizes
    if isinstance(sizes, CvSizes):
        nu = np.asarray(sizes.nu.sample(rng, M), dtype=float)
    elif isinstance(sizes, EqualSizes):
        nu = np.zeros(M)
    else:
        raise InvalidPriorError("closed-form averaging needs a coefficient-of-variation size prior")
    return {
        "delta": delta,
        "sigma": np.asarray(sigma, dtype=float),
        "rho": np.asarray(rho, dtype=float),
        "nu": nu,
    }


def exceedance_probability(marginal: Marginal, threshold: float) -> float:
    """``Pr(X > threshold)`` under a design marginal."""
    if isinstance(marginal, PointMass):
        return float(marginal.value > threshold)
    if isinstance(marginal, Normal):
        return float(special.ndtr((marginal.mean - threshold) / marginal.sd))
    if isinstance(marginal, TruncatedNormal):
        sd = math.sqrt(marginal.scale2)
        keep = special.ndtr((marginal.loc - marginal.lower) / sd)
        t = max(threshold, marginal.lower)
        return float(special.ndtr((marginal.loc - t) / sd) / keep)
    return float(1.0 - marginal.cdf(threshold))
