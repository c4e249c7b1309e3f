"""YAML run configuration with line-numbered validation errors.

A config file is a nested mapping; each subcommand reads the sections it
needs. Marginal distributions are written as a bare number (point mass)
or a mapping with a ``dist`` key::

    delta: {dist: normal, mean: 3.5, sd: 0.9}
    sigma: {dist: gamma, mean: 8.32, var: 1.0}
    icc:   {dist: empirical, file: icc_samples.txt}
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import AssureError, ConfigError
from .mcmc import McmcSettings, SuccessRule
from .priors import (
    TABLE1_FAMILIES,
    AnalysisPrior,
    Beta,
    BetaICC,
    CvSizes,
    DesignPrior,
    DirichletSizes,
    EqualSizes,
    Gamma,
    GammaPrecision,
    LogUniformBoth,
    Normal,
    PointMass,
    SdIcc,
    TruncatedNormal,
    UniformBLogUniformW,
    UniformICC,
    VarianceComponents,
    load_icc_samples,
)
from .trial_model import ModelParams

_MISSING = object()
_constructor = yaml.constructor.SafeConstructor()


class Section:
    """A mapping node that remembers where each key sits in the file."""

    def __init__(self, node, source: str, path: str = "", base_dir: Path = Path(".")):
        self.node = node
        self.source = source
        self.path = path
        self.base_dir = base_dir
        self._items = {}
        if node is not None:
            if not isinstance(node, yaml.MappingNode):
                raise self.error(f"expected a mapping at {path or 'top level'}")
            for k, v in node.value:
                self._items[_constructor.construct_object(k, deep=True)] = (k, v)

    def line(self, key=None) -> int:
        if key is not None and key in self._items:
            return self._items[key][0].start_mark.line + 1
        return self.node.start_mark.line + 1 if self.node is not None else 0

    def error(self, message, key=None) -> ConfigError:
        where = f"{self.path}.{key}" if self.path and key else (key or self.path or "config")
        return ConfigError(f"{self.source}:{self.line(key)}: {where}: {message}")

    def __contains__(self, key):
        return key in self._items

    def keys(self):
        return list(self._items)

    def raw(self, key, default=_MISSING):
        if key not in self._items:
            if default is _MISSING:
                raise self.error("missing required key", key)
            return default
        return _constructor.construct_object(self._items[key][1], deep=True)

    def number(self, key, default=_MISSING, *, integer=False, check=None, why=""):
        value = self.raw(key, default)
        if value is default and default is not _MISSING:
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", key)
        if integer:
            if float(value) != int(value):
                raise self.error(f"expected an integer, got {value!r}", key)
            value = int(value)
        else:
            value = float(value)
        if check is not None and not check(value):
            raise self.error(f"invalid value {value!r}{': ' + why if why else ''}", key)
        return value

    def section(self, key, required=True) -> "Section":
        if key not in self._items:
            if required:
                raise self.error("missing required section", key)
            return Section(None, self.source, self._sub(key), self.base_dir)
        return Section(self._items[key][1], self.source, self._sub(key), self.base_dir)

    def node_of(self, key):
        return self._items[key][1]

    def _sub(self, key):
        return f"{self.path}.{key}" if self.path else key


def _guard(section: Section, key, build):
    """Run ``build`` and re-raise model validation errors with a line number."""
    try:
        return build()
    except ConfigError:
        raise
    except (AssureError, ValueError, TypeError, OSError) as exc:
        raise section.error(str(exc), key) from None


def parse_marginal(parent: Section, key):
    node = parent.node_of(key) if key in parent else None
    if node is None:
        raise parent.error("missing required distribution", key)
    if isinstance(node, yaml.ScalarNode):
        return PointMass(parent.number(key))
    sec = parent.section(key)
    dist = sec.raw("dist")

    def var_of():
        if "sd" in sec:
            return sec.number("sd", check=lambda v: v > 0) ** 2
        return sec.number("var", check=lambda v: v > 0)

    def build():
        if dist == "point":
            return PointMass(sec.number("value"))
        if dist == "normal":
            return Normal(sec.number("mean"), var_of())
        if dist in ("truncnormal", "normal+"):
            return TruncatedNormal(sec.number("mean"), var_of(), sec.number("lower", 0.0))
        if dist == "gamma":
            if "shape" in sec:
                return Gamma(sec.number("shape"), sec.number("rate"))
            return Gamma.from_moments(sec.number("mean"), var_of())
        if dist == "beta":
            if "a" in sec:
                return Beta(sec.number("a"), sec.number("b"))
            return Beta.from_moments(sec.number("mean"), var_of())
        if dist == "empirical":
            path = Path(sec.raw("file"))
            return load_icc_samples(path if path.is_absolute() else sec.base_dir / path)
        raise sec.error(f"unknown distribution {dist!r}", "dist")

    return _guard(parent, key, build)


def parse_design_prior(sec: Section) -> DesignPrior:
    lam = parse_marginal(sec, "lambda") if "lambda" in sec else PointMass(0.0)
    delta = parse_marginal(sec, "delta")
    var = sec.section("variance")
    if "between" in var:
        variance = VarianceComponents(parse_marginal(var, "between"), parse_marginal(var, "within"))
    else:
        sigma, icc = parse_marginal(var, "sigma"), parse_marginal(var, "icc")
        corr = var.number("copula", None, check=lambda v: -1 <= v <= 1, why="correlation must lie in [-1, 1]")
        variance = _guard(var, "copula", lambda: SdIcc(sigma, icc, corr))
    sizes_sec = sec.section("sizes")
    kind = sizes_sec.raw("type")
    if kind == "dirichlet":
        sizes = DirichletSizes(sizes_sec.number("a", check=lambda v: v > 0, why="must be > 0"))
    elif kind == "equal":
        sizes = EqualSizes()
    elif kind == "cv":
        sizes = CvSizes(parse_marginal(sizes_sec, "nu"))
    else:
        raise sizes_sec.error(f"unknown size prior {kind!r}", "type")
    return DesignPrior(lam, delta, variance, sizes)


_FAMILY_TYPES = {
    "gamma_precision": (GammaPrecision, ("r_b", "s_b", "r_w", "s_w")),
    "log_uniform": (LogUniformBoth, ("l_b", "u_b", "l_w", "u_w")),
    "uniform_between": (UniformBLogUniformW, ("l_b", "u_b", "l_w", "u_w")),
    "uniform_icc": (UniformICC, ("l_rho", "u_rho", "l_w", "u_w")),
    "beta_icc": (BetaICC, ("r_rho", "s_rho", "l_w", "u_w")),
}


def parse_family(sec: Section, key="family"):
    if key not in sec:
        return TABLE1_FAMILIES[2]
    node = sec.node_of(key)
    if isinstance(node, yaml.ScalarNode):
        n = sec.number(key, integer=True, check=lambda v: v in TABLE1_FAMILIES, why="preset must be 1-6")
        return TABLE1_FAMILIES[n]
    fam = sec.section(key)
    kind = fam.raw("type")
    if kind not in _FAMILY_TYPES:
        raise fam.error(f"unknown variance family {kind!r}; choose from {sorted(_FAMILY_TYPES)}", "type")
    cls, names = _FAMILY_TYPES[kind]
    return _guard(sec, key, lambda: cls(*(fam.number(n) for n in names)))


def parse_analysis_prior(sec: Section) -> AnalysisPrior:
    d = AnalysisPrior()
    positive = dict(check=lambda v: v > 0, why="must be > 0")
    return AnalysisPrior(
        lambda_mean=sec.number("lambda_mean", d.lambda_mean),
        lambda_var=sec.number("lambda_var", d.lambda_var, **positive),
        delta_mean=sec.number("delta_mean", d.delta_mean),
        delta_var=sec.number("delta_var", d.delta_var, **positive),
        variance=parse_family(sec),
    )


def parse_mcmc(sec: Section) -> McmcSettings:
    d = McmcSettings()
    nonneg = dict(integer=True, check=lambda v: v >= 0, why="must be >= 0")
    pos = dict(integer=True, check=lambda v: v >= 1, why="must be >= 1")
    adapt = sec.raw("adapt", d.adapt)
    if not isinstance(adapt, bool):
        raise sec.error("expected true/false", "adapt")
    return McmcSettings(
        burn_in=sec.number("burn_in", d.burn_in, **nonneg),
        samples=sec.number("samples", d.samples, **pos),
        thin=sec.number("thin", d.thin, **pos),
        target_acceptance=sec.number("target_acceptance", d.target_acceptance, check=lambda v: 0 < v < 1, why="must lie in (0, 1)"),
        adapt=adapt,
    )


def parse_rule(sec: Section) -> SuccessRule:
    return SuccessRule(
        confidence=sec.number("confidence", 0.95, check=lambda v: 0 < v < 1, why="must lie in (0, 1)"),
        threshold=sec.number("threshold", 0.0),
    )


def parse_int_list(sec: Section, key, default=_MISSING, minimum=1) -> list[int]:
    """An integer, a list of integers, or ``{min: a, max: b}`` (inclusive)."""
    if key not in sec:
        if default is _MISSING:
            raise sec.error("missing required key", key)
        return list(default)
    node = sec.node_of(key)
    if isinstance(node, yaml.MappingNode):
        rng = sec.section(key)
        lo = rng.number("min", integer=True)
        hi = rng.number("max", integer=True)
        step = rng.number("step", 1, integer=True, check=lambda v: v >= 1)
        values = list(range(lo, hi + 1, step))
    else:
        raw = sec.raw(key)
        values = raw if isinstance(raw, list) else [raw]
    if not values:
        raise sec.error("empty list", key)
    for v in values:
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            raise sec.error(f"expected integers >= {minimum}, got {v!r}", key)
    return values


def parse_float_list(sec: Section, key) -> list[float]:
    raw = sec.raw(key)
    values = raw if isinstance(raw, list) else [raw]
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise sec.error(f"expected numbers, got {v!r}", key)
    return [float(v) for v in values]


def parse_truth(sec: Section) -> ModelParams:
    return _guard(sec, None, lambda: ModelParams(
        sec.number("lambda"), sec.number("delta"), sec.number("var_between"), sec.number("var_within")
    ))


@dataclass
class RunConfig:
    root: Section
    seed: int
    workers: int
    output: str | None

    def section(self, key, required=True) -> Section:
        return self.root.section(key, required)


def load_config(path, *, seed=None, workers=None, output=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path), base_dir=path.parent, seed=seed, workers=workers, output=output)


def parse_config(text, source="<config>", *, base_dir=Path("."), seed=None, workers=None, output=None) -> RunConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if node is None:
        node = yaml.compose("{}")
    root = Section(node, source, "", Path(base_dir))
    cfg_seed = root.number("seed", 0, integer=True, check=lambda v: v >= 0, why="must be >= 0")
    cfg_workers = root.number("workers", 1, integer=True, check=lambda v: v >= 1, why="must be >= 1")
    out = root.raw("output", None)
    return RunConfig(
        root=root,
        seed=cfg_seed if seed is None else seed,
        workers=cfg_workers if workers is None else workers,
        output=output if output is not None else out,
    )
