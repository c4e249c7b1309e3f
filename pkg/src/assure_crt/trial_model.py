"""Generative model for a two-arm cluster randomised trial.

Outcomes follow a random-intercept model: cluster ``j`` has effect
``c_j ~ N(0, var_between)`` and individual outcomes are
``y_ij ~ N(lambda + X_j * delta + c_j, var_within)`` with ``X_j = 1`` for
treated clusters. Cluster sizes are a multinomial split of the total
sample size with cluster probabilities ``p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDesignError, InvalidParameterError, InvalidPriorError

CONTROL = 0
TREATMENT = 1


@dataclass(frozen=True)
class ModelParams:
    """Model parameters ``(lambda, delta, var_between, var_within)``."""

    lam: float
    delta: float
    var_between: float
    var_within: float

    def __post_init__(self):
        if not self.var_within > 0:
            raise InvalidParameterError(f"var_within must be > 0, got {self.var_within}")
        if not self.var_between >= 0:
            raise InvalidParameterError(f"var_between must be >= 0, got {self.var_between}")
        if not (math.isfinite(self.lam) and math.isfinite(self.delta)):
            raise InvalidParameterError("lambda and delta must be finite")

    @classmethod
    def from_icc(cls, lam: float, delta: float, total_var: float, rho: float) -> "ModelParams":
        var_between, var_within = variances_from_icc(rho, total_var)
        return cls(lam, delta, var_between, var_within)

    @property
    def icc(self) -> float:
        return icc(self.var_between, self.var_within)

    @property
    def total_var(self) -> float:
        return self.var_between + self.var_within


@dataclass(frozen=True)
class ClusterProbabilities:
    """Probability that a randomly chosen individual belongs to each cluster."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise InvalidPriorError("cluster probabilities must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidPriorError("cluster probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise InvalidPriorError(f"cluster probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)

    @classmethod
    def uniform(cls, J: int) -> "ClusterProbabilities":
        return cls(np.full(J, 1.0 / J))

    def __len__(self):
        return self.p.size


@dataclass(frozen=True)
class ClusterLayout:
    """Cluster sizes and arm labels (0 = control, 1 = treatment)."""

    sizes: np.ndarray
    arms: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        arms = np.asarray(self.arms, dtype=np.int64)
        if sizes.shape != arms.shape or sizes.ndim != 1:
            raise InvalidDesignError("sizes and arms must be vectors of equal length")
        if np.any(sizes < 0):
            raise InvalidDesignError("cluster sizes must be non-negative")
        J = sizes.size
        n_treat = int(arms.sum())
        if not np.all((arms == CONTROL) | (arms == TREATMENT)):
            raise InvalidDesignError("arm labels must be 0 (control) or 1 (treatment)")
        if n_treat not in (J // 2, J - J // 2):
            raise InvalidDesignError(f"unbalanced arms: {n_treat} of {J} clusters treated")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "arms", arms)

    @property
    def J(self) -> int:
        return self.sizes.size

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    @classmethod
    def balanced(cls, sizes) -> "ClusterLayout":
        sizes = np.asarray(sizes, dtype=np.int64)
        return cls(sizes, assign_arms(sizes.size))


@dataclass(frozen=True)
class TrialData:
    """Outcomes of one trial stored flat, cluster by cluster.

    ``values[offsets[j]:offsets[j + 1]]`` are the outcomes of cluster ``j``.
    """

    layout: ClusterLayout
    values: np.ndarray
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size != self.layout.total:
            raise InvalidDesignError(
                f"expected {self.layout.total} outcomes, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidDesignError("outcomes must be finite")
        offsets = np.concatenate(([0], np.cumsum(self.layout.sizes)))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_ragged(cls, layout: ClusterLayout, outcomes) -> "TrialData":
        for j, (ys, n) in enumerate(zip(outcomes, layout.sizes)):
            if len(ys) != n:
                raise InvalidDesignError(f"cluster {j}: {len(ys)} outcomes for size {n}")
        flat = np.concatenate([np.asarray(ys, dtype=float) for ys in outcomes]) if len(outcomes) else np.empty(0)
        return cls(layout, flat)

    @property
    def outcomes(self) -> list[np.ndarray]:
        return [self.values[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def cluster_stats(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Per-cluster sums, per-cluster means (0 for empty clusters), and the
        pooled within-cluster sum of squares."""
        sizes = self.layout.sizes
        idx = np.repeat(np.arange(self.layout.J), sizes)
        sums = np.bincount(idx, weights=self.values, minlength=self.layout.J).astype(float)
        means = np.divide(sums, sizes, out=np.zeros_like(sums), where=sizes > 0)
        within = float(np.sum((self.values - means[idx]) ** 2))
        return sums, means, within

    def arm_counts(self) -> tuple[int, int]:
        sizes, arms = self.layout.sizes, self.layout.arms
        return int(sizes[arms == CONTROL].sum()), int(sizes[arms == TREATMENT].sum())


def assign_arms(J: int) -> np.ndarray:
    """Balanced arm labels: first ``ceil(J/2)`` clusters control, rest treatment."""
    if J < 2:
        raise InvalidDesignError(f"need at least 2 clusters, got {J}")
    n_control = J - J // 2
    arms = np.zeros(J, dtype=np.int64)
    arms[n_control:] = TREATMENT
    return arms


def allocate_clusters(total: int, p: ClusterProbabilities, rng: np.random.Generator) -> np.ndarray:
    """One ``Multinomial(total, p)`` draw of cluster sizes."""
    if total < 0:
        raise InvalidDesignError(f"total sample size must be >= 0, got {total}")
    return rng.multinomial(int(total), p.p).astype(np.int64)


def sample_cluster_probabilities(J: int, a: float, rng: np.random.Generator) -> ClusterProbabilities:
    """One draw from the symmetric ``Dirichlet(a, ..., a)`` over ``J`` clusters."""
    if J < 2:
        raise InvalidDesignError(f"need at least 2 clusters, got {J}")
    if not a > 0:
        raise InvalidPriorError(f"Dirichlet concentration must be > 0, got {a}")
    p = rng.dirichlet(np.full(J, float(a)))
    # renormalise so the sum-to-one check holds to 1e-12
    return ClusterProbabilities(p / p.sum())


def simulate_trial(theta: ModelParams, layout: ClusterLayout, rng: np.random.Generator) -> TrialData:
    """Draw cluster effects for every cluster, then individual outcomes.

    Empty clusters still consume their cluster-effect draw.
    """
    c = math.sqrt(theta.var_between) * rng.standard_normal(layout.J)
    cluster_mean = theta.lam + theta.delta * layout.arms + c
    mu = np.repeat(cluster_mean, layout.sizes)
    y = mu + math.sqrt(theta.var_within) * rng.standard_normal(mu.size)
    return TrialData(layout, y)


def icc(var_between: float, var_within: float) -> float:
    """Intra-cluster correlation ``var_between / (var_between + var_within)``."""
    if not var_within > 0:
        raise InvalidParameterError(f"var_within must be > 0, got {var_within}")
    if not var_between >= 0:
        raise InvalidParameterError(f"var_between must be >= 0, got {var_between}")
    return var_between / (var_between + var_within)


def variances_from_icc(rho: float, total_var: float) -> tuple[float, float]:
    """Split a total variance into ``(var_between, var_within)`` at ICC ``rho``."""
    if not 0 <= rho < 1:
        raise InvalidParameterError(f"ICC must lie in [0, 1), got {rho}")
    if not total_var > 0:
        raise InvalidParameterError(f"total variance must be > 0, got {total_var}")
    return rho * total_var, (1.0 - rho) * total_var


def cv_of_sizes(sizes) -> float:
    """Sample coefficient of variation (sd with ddof=1 over the mean)."""
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size < 2:
        raise InvalidDesignError("coefficient of variation needs at least 2 clusters")
    mean = sizes.mean()
    if not mean > 0:
        raise InvalidDesignError("coefficient of variation undefined for all-zero sizes")
    return float(sizes.std(ddof=1) / mean)
