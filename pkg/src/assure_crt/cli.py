"""Command-line entry point ``assure-crt``.

Every subcommand reads one YAML config (see ``config.py``) and writes a CSV.
The first line of each CSV is a ``#`` provenance comment; the body (all
non-comment lines) is byte-identical for a fixed config and seed at any
worker count. Wall-clock times are recorded in comment lines unless
``--timing`` asks for a column.

Exit codes: 0 success, 2 config error, 3 target not achievable,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as streams
from .assurance import AssuranceSpec, OuterLoopPool, estimate_assurance, modal_sample_size
from .closed_form import FULL, MCID, hybrid_search, power, power_sample_size, PowerInputs
from .config import (
    RunConfig,
    load_config,
    parse_analysis_prior,
    parse_design_prior,
    parse_float_list,
    parse_int_list,
    parse_marginal,
    parse_mcmc,
    parse_rule,
    parse_truth,
    _guard,
)
from .errors import AssureError, ConfigError, NotAchievableError, NumericalError
from .mcmc import McmcSettings, posterior_prob_exceeds, run_chain, write_trace
from .priors import TABLE1_FAMILIES, CvSizes, Normal, exceedance_probability
from .trial_model import ClusterLayout, ClusterProbabilities, allocate_clusters, assign_arms, simulate_trial

EXIT_OK, EXIT_CONFIG, EXIT_NOT_ACHIEVABLE, EXIT_NUMERICAL = 0, 2, 3, 4
NA = "NA"


def _fmt(v):
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return NA if math.isnan(v) else repr(float(v))
    return str(v)


class Report:
    """Collects CSV rows plus per-row wall times; writes them in one go."""

    def __init__(self, command: str, header: list[str], **provenance):
        self.command = command
        self.header = header
        self.provenance = provenance
        self.rows: list[list] = []
        self.times: list[float | None] = []
        self.not_achieved = 0
        self.started = time.perf_counter()

    def add(self, row, wall_time=None):
        self.rows.append(list(row))
        self.times.append(wall_time)

    def render(self, timing_column=False) -> str:
        buf = io.StringIO()
        meta = " ".join(f"{k}={_fmt(v)}" for k, v in self.provenance.items())
        total = time.perf_counter() - self.started
        buf.write(f"# assure-crt {__version__} command={self.command} {meta} wall_time_s={total:.3f}\n")
        if not timing_column and any(t is not None for t in self.times):
            buf.write("# row_wall_time_s=" + ";".join(NA if t is None else f"{t:.4f}" for t in self.times) + "\n")
        w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(self.header + (["wall_time_s"] if timing_column else []))
        for row, t in zip(self.rows, self.times):
            w.writerow([_fmt(v) for v in row] + ([NA if t is None else f"{t:.4f}"] if timing_column else []))
        return buf.getvalue()


def _progress(msg):
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# power and hybrid


def _power_inputs(cfg: RunConfig):
    sec = cfg.section("power")
    return dict(
        delta_M=sec.number("mcid"),
        sigma=sec.number("sigma", check=lambda v: v > 0, why="must be > 0"),
        rho=sec.number("icc", check=lambda v: 0 <= v < 1, why="must lie in [0, 1)"),
        nu=sec.number("cv", 0.0, check=lambda v: v >= 0, why="must be >= 0"),
        alpha=sec.number("alpha", 0.05, check=lambda v: 0 < v < 1, why="must lie in (0, 1)"),
    ), sec.number("target", 0.8, check=lambda v: 0 < v < 1, why="must lie in (0, 1)")


def cmd_power(cfg: RunConfig, quiet=False) -> Report:
    inputs, target = _power_inputs(cfg)
    clusters = parse_int_list(cfg.root, "clusters", minimum=2)
    report = Report("power", ["method", "J", "n_T", "achieved"], seed=NA, L=NA, K=NA, target=target)
    for J in clusters:
        try:
            n_T = power_sample_size(J, target, **inputs)
            report.add(["power", J, n_T, power(PowerInputs(J, n_T / J, **inputs))])
        except NotAchievableError as exc:
            report.not_achieved += 1
            report.add(["power", J, None, exc.best])
    return report


def _hybrid_settings(cfg: RunConfig):
    sec = cfg.section("hybrid")
    design = parse_design_prior(cfg.section("design_prior"))
    if "cv" in sec:
        design = replace(design, sizes=CvSizes(parse_marginal(sec, "cv")))
    modes = sec.raw("modes", [MCID, FULL])
    modes = modes if isinstance(modes, list) else [modes]
    for m in modes:
        if m not in (MCID, FULL):
            raise sec.error(f"unknown hybrid mode {m!r}; use {MCID!r} or {FULL!r}", "modes")
    return dict(
        design=design,
        modes=modes,
        draws=sec.number("draws", 100_000, integer=True, check=lambda v: v >= 1, why="must be >= 1"),
        mcid=sec.number("mcid", None),
        alpha=sec.number("alpha", 0.05, check=lambda v: 0 < v < 1, why="must lie in (0, 1)"),
        target=sec.number("target", 0.8, check=lambda v: 0 < v < 1, why="must lie in (0, 1)"),
        section=sec,
    )


_METHOD_NAME = {MCID: "hybrid_mcid", FULL: "full_hybrid"}
_MODE_KEY = {MCID: 0, FULL: 1}


def _hybrid_row(h, design, J, mode, seed):
    gen = streams.stream(seed, streams.HYBRID, J, _MODE_KEY[mode])
    delta_M = h["mcid"] if mode == MCID else None
    try:
        n_T, a = hybrid_search(design, J, h["target"], h["alpha"], mode, h["draws"], gen, delta_M)
        return n_T, a, False
    except NotAchievableError as exc:
        return None, exc.best, True


def cmd_hybrid(cfg: RunConfig, quiet=False) -> Report:
    h = _hybrid_settings(cfg)
    clusters = parse_int_list(cfg.root, "clusters", minimum=2)
    report = Report("hybrid", ["method", "J", "n_T", "achieved"], seed=cfg.seed, M=h["draws"], L=NA, K=NA, target=h["target"])
    for mode in h["modes"]:
        for J in clusters:
            start = time.perf_counter()
            n_T, a, failed = _hybrid_row(h, h["design"], J, mode, cfg.seed)
            report.not_achieved += failed
            report.add([_METHOD_NAME[mode], J, n_T, a], time.perf_counter() - start)
    return report


# ---------------------------------------------------------------------------
# two-loop assurance


def _assurance_spec(cfg: RunConfig, J: int, seed=None) -> tuple[AssuranceSpec, object]:
    sec = cfg.section("assurance")
    design = parse_design_prior(cfg.section("design_prior"))
    analysis = parse_analysis_prior(cfg.section("analysis_prior", required=False))
    mcmc = parse_mcmc(cfg.section("mcmc", required=False))
    rule = parse_rule(sec)
    L = sec.number("outer", 1000, integer=True, check=lambda v: v >= 1, why="must be >= 1")
    spec = _guard(cfg.root, "design_prior", lambda: AssuranceSpec(
        J, design, analysis, rule, L, mcmc, cfg.seed if seed is None else seed
    ))
    return spec, sec


def cmd_assurance(cfg: RunConfig, quiet=False) -> Report:
    clusters = parse_int_list(cfg.root, "clusters", minimum=2)
    spec, sec = _assurance_spec(cfg, clusters[0])
    n_bars = parse_int_list(sec, "n_bar", minimum=0)
    report = Report(
        "assurance",
        ["J", "n_T", "estimate", "mc_se", "successes", "L", "K", "failures", "seed"],
        seed=cfg.seed, L=spec.outer_samples, K=spec.mcmc.samples,
    )
    with OuterLoopPool(cfg.workers) as pool:
        for J in clusters:
            spec_J = replace(spec, J=J)
            for n_bar in n_bars:
                r = estimate_assurance(spec_J, J * n_bar, pool=pool)
                if not quiet:
                    _progress(f"J={J} n_T={r.n_T} assurance={r.estimate:.4f} ({r.wall_time:.1f}s)")
                report.add([J, r.n_T, r.estimate, r.mc_standard_error, r.successes, r.L, r.K, r.failures, r.seed], r.wall_time)
    return report


def _grid(sec):
    return parse_int_list(sec, "grid", default=range(1, 101))


def cmd_samplesize(cfg: RunConfig, quiet=False) -> Report:
    clusters = parse_int_list(cfg.root, "clusters", minimum=2)
    spec, sec = _assurance_spec(cfg, clusters[0])
    target = sec.number("target", 0.8, check=lambda v: 0 < v < 1, why="must lie in (0, 1)")
    grid = _grid(sec)
    R = sec.number("repetitions", 1, integer=True, check=lambda v: v >= 1, why="must be >= 1")
    method = sec.raw("search", "linear")
    if method not in ("linear", "bisect"):
        raise sec.error(f"unknown search method {method!r}", "search")
    report = Report(
        "samplesize",
        ["method", "J", "n_T", "modal_proportion", "assurance_at_mode", "repetitions", "L", "K", "per_run_n_T"],
        seed=cfg.seed, L=spec.outer_samples, K=spec.mcmc.samples, target=target,
    )
    for J in clusters:
        start = time.perf_counter()

        def progress(r, found, J=J):
            if not quiet:
                _progress(f"J={J} repetition {r + 1}/{R}: n_T={found.n_T} (assurance {found.estimate:.4f})")

        try:
            res = modal_sample_size(replace(spec, J=J), target, grid, R, workers=cfg.workers, method=method,
                                    progress=progress)
        except NotAchievableError as exc:
            if not quiet:
                _progress(f"J={J}: {exc}")
            report.add(["bayes", J, None, None, exc.best, R, spec.outer_samples, spec.mcmc.samples, None],
                       time.perf_counter() - start)
            report.not_achieved += 1
            continue
        report.add(
            ["bayes", J, res.modal_size, res.modal_proportion, res.assurance_at_mode, R,
             spec.outer_samples, spec.mcmc.samples, ";".join(map(str, res.per_run_sizes))],
            time.perf_counter() - start,
        )
    return report


def mc_study_rows(spec: AssuranceSpec, n_T: int, outer, inner, repetitions: int, workers: int = 1, progress=None):
    """Repeated assurance estimates over an (L, K) grid.

    Yields ``(L, K, repetition, seed, AssuranceResult)``; repetition ``r`` at
    cell ``(L, K)`` uses seed ``derive_seed(base, STUDY, L, K, r)``.
    """
    with OuterLoopPool(workers) as pool:
        for L in outer:
            for K in inner:
                for r in range(repetitions):
                    seed = streams.derive_seed(spec.base_seed, streams.STUDY, L, K, r)
                    cell = replace(spec, outer_samples=L, mcmc=replace(spec.mcmc, samples=K), base_seed=seed)
                    res = estimate_assurance(cell, n_T, pool=pool)
                    if progress is not None:
                        progress(L, K, r, res)
                    yield L, K, r, seed, res


def cmd_mc_study(cfg: RunConfig, quiet=False) -> Report:
    clusters = parse_int_list(cfg.root, "clusters", minimum=2)
    if len(clusters) != 1:
        raise cfg.root.error("mc-study takes a single cluster count", "clusters")
    spec, _ = _assurance_spec(cfg, clusters[0])
    sec = cfg.section("mc_study")
    outer = parse_int_list(sec, "outer")
    inner = parse_int_list(sec, "inner")
    reps = sec.number("repetitions", 20, integer=True, check=lambda v: v >= 1, why="must be >= 1")
    n_bar = sec.number("n_bar", integer=True, check=lambda v: v >= 0, why="must be >= 0")
    report = Report(
        "mc-study",
        ["L", "K", "repetition", "n_T", "estimate", "mc_se", "successes", "failures", "seed"],
        seed=cfg.seed, L=";".join(map(str, outer)), K=";".join(map(str, inner)),
    )

    def progress(L, K, r, res):
        if not quiet:
            _progress(f"L={L} K={K} repetition {r + 1}/{reps}: {res.estimate:.4f} ({res.wall_time:.2f}s)")

    for L, K, r, seed, res in mc_study_rows(spec, spec.J * n_bar, outer, inner, reps, cfg.workers, progress):
        report.add([L, K, r + 1, res.n_T, res.estimate, res.mc_standard_error, res.successes, res.failures, seed], res.wall_time)
    return report


# ---------------------------------------------------------------------------
# posterior study


def simulate_study_dataset(truth, n_T: int, mean_size: int, seed: int, equal_sizes=False):
    """One dataset with ``J = n_T // mean_size`` clusters and uniform cluster probabilities."""
    J = n_T // mean_size
    if J < 2:
        raise ConfigError(f"n_T={n_T} with mean cluster size {mean_size} gives fewer than 2 clusters")
    gen = streams.stream(seed, streams.DATASET, n_T)
    if equal_sizes:
        sizes = np.full(J, n_T // J)
        sizes[: n_T - sizes.sum()] += 1
    else:
        sizes = allocate_clusters(n_T, ClusterProbabilities.uniform(J), gen)
    return simulate_trial(truth, ClusterLayout(sizes, assign_arms(J)), gen)


def posterior_study(truth, totals, mean_size, families, base_prior, settings: McmcSettings, seed: int,
                    threshold=0.0, equal_sizes=False, trace_dir=None, progress=None):
    """Fit every analysis-prior family to one simulated dataset per total sample size.

    Returns a list of dict rows. The dataset for ``n_T`` is shared by all
    families; family ``f`` runs its chain on stream ``(seed, DATASET, n_T, f)``.
    """
    rows = []
    for n_T in totals:
        data = simulate_study_dataset(truth, n_T, mean_size, seed, equal_sizes)
        for f in families:
            start = time.perf_counter()
            prior = replace(base_prior, variance=TABLE1_FAMILIES[f])
            s = run_chain(data, prior, settings, streams.stream(seed, streams.DATASET, n_T, f))
            q = np.quantile(s.delta, [0.025, 0.5, 0.975])
            if trace_dir is not None:
                write_trace(s, Path(trace_dir) / f"trace_n{n_T}_prior{f}.csv")
            row = dict(
                n_T=n_T, J=data.layout.J, prior=f,
                prob=posterior_prob_exceeds(s, threshold),
                mean=float(s.delta.mean()), sd=float(s.delta.std(ddof=1)),
                q025=float(q[0]), q50=float(q[1]), q975=float(q[2]),
                acceptance=";".join(f"{a:.3f}" for a in s.acceptance_rates),
                wall_time=time.perf_counter() - start,
            )
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def cmd_posterior(cfg: RunConfig, quiet=False) -> Report:
    sec = cfg.section("posterior")
    truth = parse_truth(sec.section("truth"))
    totals = parse_int_list(sec, "totals", minimum=2)
    mean_size = sec.number("mean_size", 10, integer=True, check=lambda v: v >= 1, why="must be >= 1")
    families = parse_int_list(sec, "priors", default=range(1, 7))
    for f in families:
        if f not in TABLE1_FAMILIES:
            raise sec.error(f"prior presets are numbered 1-6, got {f}", "priors")
    sizes = sec.raw("sizes", "multinomial")
    if sizes not in ("multinomial", "equal"):
        raise sec.error(f"sizes must be 'multinomial' or 'equal', got {sizes!r}", "sizes")
    for n_T in totals:
        if n_T // mean_size < 2:
            raise sec.error(f"total {n_T} gives fewer than 2 clusters of mean size {mean_size}", "totals")
    threshold = sec.number("threshold", 0.0)
    trace_dir = sec.raw("trace_dir", None)
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    base = parse_analysis_prior(cfg.section("analysis_prior", required=False))
    settings = parse_mcmc(cfg.section("mcmc", required=False))
    report = Report(
        "posterior",
        ["n_T", "J", "prior", "prob_delta_gt_threshold", "mean", "sd", "q025", "q50", "q975", "acceptance"],
        seed=cfg.seed, L=NA, K=settings.samples, threshold=threshold,
    )

    def progress(row):
        if not quiet:
            _progress(f"n_T={row['n_T']} prior {row['prior']}: Pr(delta>{threshold:g})={row['prob']:.4f} ({row['wall_time']:.2f}s)")

    for row in posterior_study(truth, totals, mean_size, families, base, settings, cfg.seed, threshold,
                               sizes == "equal", trace_dir, progress):
        report.add([row[k] for k in ("n_T", "J", "prior", "prob", "mean", "sd", "q025", "q50", "q975", "acceptance")],
                   row["wall_time"])
    return report


# ---------------------------------------------------------------------------
# design-prior sensitivity sweep


def cmd_sweep(cfg: RunConfig, quiet=False) -> Report:
    sec = cfg.section("sweep")
    parameter = sec.raw("parameter")
    if parameter not in ("mean", "sd"):
        raise sec.error(f"parameter must be 'mean' or 'sd', got {parameter!r}", "parameter")
    values = parse_float_list(sec, "values")
    fixed_mean = sec.number("mean", 3.5)
    fixed_sd = sec.number("sd", 0.9, check=lambda v: v > 0, why="must be > 0")
    if parameter == "sd" and min(values) <= 0:
        raise sec.error("sd values must be > 0", "values")
    mcid = sec.number("mcid")
    methods = sec.raw("methods", ["full_hybrid"])
    methods = methods if isinstance(methods, list) else [methods]
    for m in methods:
        if m not in ("bayes", "full_hybrid"):
            raise sec.error(f"unknown sweep method {m!r}; use 'bayes' or 'full_hybrid'", "methods")
    clusters = parse_int_list(cfg.root, "clusters", minimum=2)
    if len(clusters) != 1:
        raise cfg.root.error("sweep takes a single cluster count", "clusters")
    J = clusters[0]
    h = _hybrid_settings(cfg) if "full_hybrid" in methods else None
    if "bayes" in methods:
        spec, asec = _assurance_spec(cfg, J)
        target = asec.number("target", 0.8, check=lambda v: 0 < v < 1, why="must lie in (0, 1)")
        grid = _grid(asec)
        R = asec.number("repetitions", 1, integer=True, check=lambda v: v >= 1, why="must be >= 1")
    report = Report(
        "sweep",
        ["parameter", "delta_mean", "delta_sd", "exceedance", "method", "J", "n_T", "achieved"],
        seed=cfg.seed,
        L=spec.outer_samples if "bayes" in methods else NA,
        K=spec.mcmc.samples if "bayes" in methods else NA,
        M=h["draws"] if h else NA,
        mcid=mcid,
    )
    for v in values:
        mean, sd = (v, fixed_sd) if parameter == "mean" else (fixed_mean, v)
        delta = Normal(mean, sd * sd)
        exceed = exceedance_probability(delta, mcid)
        for m in methods:
            start = time.perf_counter()
            if m == "full_hybrid":
                n_T, a, failed = _hybrid_row(h, replace(h["design"], delta=delta), J, FULL, cfg.seed)
            else:
                s = replace(spec, design_prior=replace(spec.design_prior, delta=delta))
                try:
                    res = modal_sample_size(s, target, grid, R, workers=cfg.workers)
                    n_T, a, failed = res.modal_size, res.assurance_at_mode, False
                except NotAchievableError as exc:
                    n_T, a, failed = None, exc.best, True
            report.not_achieved += failed
            report.add([parameter, mean, sd, exceed, m, J, n_T, a], time.perf_counter() - start)
            if not quiet:
                _progress(f"{parameter}={v:g} {m}: n_T={_fmt(n_T)}")
    return report


COMMANDS = {
    "power": (cmd_power, "closed-form power sample sizes per cluster count"),
    "assurance": (cmd_assurance, "two-loop Monte Carlo assurance on an n_bar grid"),
    "samplesize": (cmd_samplesize, "Bayesian assurance sample size (modal over repetitions)"),
    "hybrid": (cmd_hybrid, "hybrid MCID / full hybrid sample sizes"),
    "posterior": (cmd_posterior, "posterior of delta under the six analysis-prior presets"),
    "mc-study": (cmd_mc_study, "repeated assurance estimates over outer/inner sample counts"),
    "sweep": (cmd_sweep, "sample size as the delta design prior mean or sd varies"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assure-crt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    env_workers = os.environ.get("ASSURE_CRT_WORKERS")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker processes (default: $ASSURE_CRT_WORKERS, then config; env={env_workers or 'unset'})")
        p.add_argument("--out", default=None, help="output CSV path (default: config 'output', else stdout)")
        p.add_argument("--timing", action="store_true", help="add a wall_time_s column (breaks byte-identity)")
        p.add_argument("--quiet", action="store_true", help="no progress on stderr")
    return parser


def _resolve_workers(flag):
    if flag is not None:
        return flag
    env = os.environ.get("ASSURE_CRT_WORKERS")
    if env is None or env == "":
        return None
    try:
        value = int(env)
    except ValueError:
        raise ConfigError(f"ASSURE_CRT_WORKERS must be an integer, got {env!r}") from None
    return value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        workers = _resolve_workers(args.workers)
        if workers is not None and workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, seed=args.seed, workers=workers, output=args.out)
        report = COMMANDS[args.command][0](cfg, quiet=args.quiet)
        text = report.render(timing_column=args.timing)
        if cfg.output in (None, "-"):
            sys.stdout.write(text)
        else:
            Path(cfg.output).write_text(text)
        if report.not_achieved:
            print(f"assure-crt: target not achievable in {report.not_achieved} row(s)", file=sys.stderr)
            return EXIT_NOT_ACHIEVABLE
        return EXIT_OK
    except ConfigError as exc:
        print(f"assure-crt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotAchievableError as exc:
        print(f"assure-crt: not achievable: {exc}", file=sys.stderr)
        return EXIT_NOT_ACHIEVABLE
    except NumericalError as exc:
        print(f"assure-crt: numerical failure: {exc} {exc.diagnostic}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AssureError as exc:
        print(f"assure-crt: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
