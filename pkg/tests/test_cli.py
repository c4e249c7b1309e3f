"""End-to-end tests of the command-line harness."""

import csv
import io
from pathlib import Path

import pytest

from assure_crt import __version__
from assure_crt.cli import (
    EXIT_CONFIG,
    EXIT_NOT_ACHIEVABLE,
    EXIT_OK,
    main,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """\
seed: 3
clusters: 6
design_prior:
  lambda: {dist: normal, mean: 10, var: 1}
  delta: {dist: normal, mean: 1, var: 1}
  variance:
    between: {dist: truncnormal, mean: 2, var: 0.04}
    within: {dist: truncnormal, mean: 1, var: 0.01}
  sizes: {type: dirichlet, a: 100}
analysis_prior: {family: 2}
mcmc: {burn_in: 100, samples: 200}
assurance:
  outer: 20
  n_bar: [2, 5]
  target: 0.3
  grid: {min: 1, max: 4}
  repetitions: 3
mc_study:
  n_bar: 3
  outer: [5, 10]
  inner: [100]
  repetitions: 2
"""

POSTERIOR = """\
seed: 7
posterior:
  truth: {lambda: 10, delta: 1, var_between: 2, var_within: 1}
  totals: [200, 60]
  mean_size: 10
  priors: [1, 2, 3, 4, 5, 6]
mcmc: {burn_in: 200, samples: 500}
"""


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def body(text):
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def rows(text):
    return list(csv.DictReader(io.StringIO(body(text))))


class TestPower:
    def test_icons_row(self, capsys):
        code, out, _ = run(capsys, "power", str(CONFIGS / "icons_power.yaml"))
        assert code == EXIT_OK
        assert out.startswith(f"# assure-crt {__version__} command=power")
        got = [int(r["n_T"]) for r in rows(out)]
        assert got == [360, 369, 378, 344, 352, 360, 368, 329, 336, 343, 350]

    def test_single_cluster_count(self, capsys, tmp_path):
        cfg = write(tmp_path, "clusters: 47\npower: {mcid: 2.52, sigma: 8.32, icc: 0.028, cv: 0.49}\n")
        code, out, _ = run(capsys, "power", cfg)
        assert code == EXIT_OK
        assert rows(out) == [dict(method="power", J="47", n_T="329", achieved=rows(out)[0]["achieved"])]

    def test_unachievable_row(self, capsys, tmp_path):
        cfg = write(tmp_path, "clusters: [40, 41]\npower: {mcid: 0, sigma: 8.32, icc: 0.028, cv: 0.49}\n")
        code, out, err = run(capsys, "power", cfg)
        assert code == EXIT_NOT_ACHIEVABLE
        assert [r["n_T"] for r in rows(out)] == ["NA", "NA"]
        assert "not achievable" in err

    def test_output_file(self, capsys, tmp_path):
        target = tmp_path / "out.csv"
        code, out, _ = run(capsys, "power", str(CONFIGS / "icons_power.yaml"), "--out", str(target))
        assert code == EXIT_OK and out == ""
        assert "power,40,360," in target.read_text()

    def test_timing_column(self, capsys):
        _, out, _ = run(capsys, "power", str(CONFIGS / "icons_power.yaml"), "--timing")
        assert rows(out)[0].keys() == {"method", "J", "n_T", "achieved", "wall_time_s"}


class TestConfigErrors:
    @pytest.mark.parametrize("text,line,fragment", [
        ("clusters: 40\npower: {mcid: 2.52, sigma: -1, icc: 0.028, cv: 0.49}\n", 2, "sigma"),
        ("clusters: 40\npower:\n  mcid: 2.52\n  sigma: 8\n  icc: 1.5\n  cv: 0.4\n", 5, "icc"),
        ("clusters: 1\npower: {mcid: 2.52, sigma: 8, icc: 0.02, cv: 0.4}\n", 1, "clusters"),
        ("clusters: 40\npower: [1, 2\n", 3, "YAML"),
    ])
    def test_reports_line(self, capsys, tmp_path, text, line, fragment):
        cfg = write(tmp_path, text)
        code, out, err = run(capsys, "power", cfg)
        assert code == EXIT_CONFIG and out == ""
        assert f"cfg.yaml:{line}" in err or f"line {line}" in err
        assert fragment in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "power", str(tmp_path / "nope.yaml"))
        assert code == EXIT_CONFIG and "nope.yaml" in err

    def test_unknown_prior_family(self, capsys, tmp_path):
        cfg = write(tmp_path, SMALL.replace("family: 2", "family: 9"))
        code, _, err = run(capsys, "assurance", cfg)
        assert code == EXIT_CONFIG and "family" in err

    def test_negative_seed(self, capsys):
        code, _, _ = run(capsys, "power", str(CONFIGS / "icons_power.yaml"), "--seed", "-1")
        assert code == EXIT_CONFIG

    def test_bad_worker_env(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("ASSURE_CRT_WORKERS", "zero")
        code, _, _ = run(capsys, "assurance", write(tmp_path, SMALL))
        assert code == EXIT_CONFIG


class TestHybrid:
    def test_point_masses_reproduce_power(self, capsys, tmp_path):
        cfg = write(tmp_path, """\
clusters: {min: 40, max: 50}
design_prior:
  delta: 2.52
  variance: {sigma: 8.32, icc: 0.028}
  sizes: {type: equal}
hybrid: {modes: [mcid, full], mcid: 2.52, cv: 0.49, draws: 50}
""")
        code, out, _ = run(capsys, "hybrid", cfg)
        assert code == EXIT_OK
        r = rows(out)
        expected = [360, 369, 378, 344, 352, 360, 368, 329, 336, 343, 350]
        assert [int(x["n_T"]) for x in r if x["method"] == "hybrid_mcid"] == expected
        assert [int(x["n_T"]) for x in r if x["method"] == "full_hybrid"] == expected

    def test_unknown_mode(self, capsys, tmp_path):
        cfg = write(tmp_path, "clusters: 40\ndesign_prior: {delta: 1, variance: {sigma: 8, icc: 0.02}, "
                              "sizes: {type: equal}}\nhybrid: {modes: [both], cv: 0.5}\n")
        code, _, err = run(capsys, "hybrid", cfg)
        assert code == EXIT_CONFIG and ":3:" in err


class TestAssurance:
    def test_columns_and_invariants(self, capsys, tmp_path):
        code, out, _ = run(capsys, "assurance", write(tmp_path, SMALL), "--quiet")
        assert code == EXIT_OK
        r = rows(out)
        assert [int(x["n_T"]) for x in r] == [12, 30]
        for x in r:
            assert float(x["estimate"]) == int(x["successes"]) / int(x["L"])
            assert x["K"] == "200" and x["failures"] == "0"

    @pytest.mark.parametrize("command", ["assurance", "samplesize", "mc-study"])
    def test_byte_identical_across_workers(self, capsys, tmp_path, command):
        cfg = write(tmp_path, SMALL)
        _, one, _ = run(capsys, command, cfg, "--workers", "1", "--quiet")
        _, four, _ = run(capsys, command, cfg, "--workers", "4", "--quiet")
        _, again, _ = run(capsys, command, cfg, "--workers", "1", "--quiet")
        assert body(one) and body(one) == body(four) == body(again)

    def test_seed_flag_changes_result(self, capsys, tmp_path):
        cfg = write(tmp_path, SMALL)
        _, a, _ = run(capsys, "assurance", cfg, "--quiet")
        _, b, _ = run(capsys, "assurance", cfg, "--quiet", "--seed", "99")
        assert body(a) != body(b)
        assert "seed=99" in b.splitlines()[0]

    def test_worker_env(self, capsys, tmp_path, monkeypatch):
        cfg = write(tmp_path, SMALL)
        _, ref, _ = run(capsys, "assurance", cfg, "--quiet")
        monkeypatch.setenv("ASSURE_CRT_WORKERS", "3")
        _, env, _ = run(capsys, "assurance", cfg, "--quiet")
        assert body(ref) == body(env)


class TestSampleSize:
    def test_modal_row(self, capsys, tmp_path):
        code, out, _ = run(capsys, "samplesize", write(tmp_path, SMALL), "--quiet")
        assert code in (EXIT_OK, EXIT_NOT_ACHIEVABLE)
        (r,) = rows(out)
        assert r["method"] == "bayes" and r["J"] == "6" and r["repetitions"] == "3"
        if r["n_T"] != "NA":
            per_run = [int(v) for v in r["per_run_n_T"].split(";") if v != "NA"]
            assert float(r["modal_proportion"]) == per_run.count(int(r["n_T"])) / 3

    def test_unreachable_target(self, capsys, tmp_path):
        cfg = write(tmp_path, SMALL.replace("target: 0.3", "target: 0.99"))
        code, out, _ = run(capsys, "samplesize", cfg, "--quiet")
        assert code == EXIT_NOT_ACHIEVABLE
        (r,) = rows(out)
        assert r["n_T"] == "NA" and 0 < float(r["assurance_at_mode"]) < 0.99


class TestMcStudy:
    def test_grid_of_cells(self, capsys, tmp_path):
        code, out, _ = run(capsys, "mc-study", write(tmp_path, SMALL), "--quiet")
        assert code == EXIT_OK
        r = rows(out)
        assert [(x["L"], x["K"], x["repetition"]) for x in r] == [
            ("5", "100", "1"), ("5", "100", "2"), ("10", "100", "1"), ("10", "100", "2"),
        ]
        assert len({x["seed"] for x in r}) == 4

    def test_needs_single_cluster_count(self, capsys, tmp_path):
        cfg = write(tmp_path, SMALL.replace("clusters: 6", "clusters: [6, 8]"))
        code, _, _ = run(capsys, "mc-study", cfg)
        assert code == EXIT_CONFIG


class TestPosterior:
    def test_six_priors_per_size(self, capsys, tmp_path):
        code, out, _ = run(capsys, "posterior", write(tmp_path, POSTERIOR), "--quiet")
        assert code == EXIT_OK
        r = rows(out)
        assert len(r) == 12
        assert [x["prior"] for x in r[:6]] == ["1", "2", "3", "4", "5", "6"]
        assert {x["J"] for x in r} == {"20", "6"}
        for x in r:
            assert float(x["q025"]) <= float(x["q50"]) <= float(x["q975"])
            assert 0 <= float(x["prob_delta_gt_threshold"]) <= 1

    def test_too_few_clusters(self, capsys, tmp_path):
        cfg = write(tmp_path, POSTERIOR.replace("[200, 60]", "[200, 15]"))
        code, _, err = run(capsys, "posterior", cfg)
        assert code == EXIT_CONFIG and "totals" in err


class TestSweep:
    def test_sd_sweep_non_decreasing(self, capsys, tmp_path):
        text = (CONFIGS / "sweep.yaml").read_text().replace("draws: 100000", "draws: 20000")
        code, out, _ = run(capsys, "sweep", write(tmp_path, text), "--quiet")
        assert code == EXIT_OK
        sizes = [int(x["n_T"]) for x in rows(out)]
        assert all(b >= a for a, b in zip(sizes, sizes[1:]))

    def test_mean_sweep_non_increasing(self, capsys, tmp_path):
        text = (CONFIGS / "sweep.yaml").read_text().replace("draws: 100000", "draws: 20000")
        text = text.replace("parameter: sd", "parameter: mean").replace(
            "values: [1.0, 1.2, 1.4, 1.6, 1.8, 2.0]", "values: [3.0, 3.5, 4.0, 4.5]").replace("mean: 3.5\n", "sd: 0.9\n")
        code, out, _ = run(capsys, "sweep", write(tmp_path, text), "--quiet")
        assert code == EXIT_OK
        r = rows(out)
        assert [x["delta_mean"] for x in r] == ["3.0", "3.5", "4.0", "4.5"]
        sizes = [int(x["n_T"]) for x in r]
        assert all(b <= a for a, b in zip(sizes, sizes[1:]))

    def test_exceedance_column(self, capsys, tmp_path):
        text = (CONFIGS / "sweep.yaml").read_text().replace("draws: 100000", "draws: 2000")
        text = text.replace("[1.0, 1.2, 1.4, 1.6, 1.8, 2.0]", "[0.9]")
        _, out, _ = run(capsys, "sweep", write(tmp_path, text), "--quiet")
        assert float(rows(out)[0]["exceedance"]) == pytest.approx(0.862, abs=5e-4)


class TestParser:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate", "x.yaml"])
        assert info.value.code == 2
