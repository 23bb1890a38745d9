import csv
import io
import subprocess
import sys
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pytest

from conftest import irls_poisson, poisson_sample
from mdpdglm.asymp import sandwich_empirical
from mdpdglm.cli import load_csv, main
from mdpdglm.estim import fit_mdpde
from mdpdglm.model import PoissonRegression
from mdpdglm.wald import LinearHypothesis, wald_statistic

TOY = "y,x\n0,-1.2\n1,-0.3\n1,0.4\n4,1.1\n2,0.9\n"


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        try:
            code = main([str(a) for a in argv])
        except SystemExit as exc:
            code = exc.code
    return code, out.getvalue(), err.getvalue()


def kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def toy(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text(TOY)
    return p


@pytest.fixture
def sample_csv(tmp_path):
    s = poisson_sample(12, n=150, beta=(0.3, 0.8), intercept=True)
    p = tmp_path / "data.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["count", "z"])
        w.writerows(zip(s.y.astype(int), s.X[:, 1]))
    return p, s


class TestFit:
    def test_toy_matches_irls(self, toy):
        code, out, _ = run("fit", toy, "--alpha", 0)
        assert code == 0
        rec = kv(out)
        X = np.array([[-1.2], [-0.3], [0.4], [1.1], [0.9]])
        ref = irls_poisson(X, np.array([0, 1, 1, 4, 2.0]))
        assert float(rec["estimate[x]"]) == pytest.approx(ref[0], abs=1e-6)
        assert rec["converged"] == "true"

    def test_intercept_and_columns(self, sample_csv):
        path, s = sample_csv
        code, out, _ = run("fit", path, "--y", "count", "--x", "z", "--intercept", "--format", "csv")
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [r["parameter"] for r in rows] == ["(intercept)", "z"]
        ref = irls_poisson(s.X, s.y)
        np.testing.assert_allclose([float(r["estimate"]) for r in rows], ref, atol=1e-6)

    def test_std_errors(self, sample_csv):
        path, s = sample_csv
        _, out, _ = run("fit", path, "--y", "count", "--intercept", "--alpha", 0.3, "--format", "csv")
        fit = fit_mdpde(PoissonRegression(), s, 0.3)
        se = np.sqrt(np.diag(sandwich_empirical(PoissonRegression(), s, fit.eta_hat, 0.3).Sigma) / s.n)
        got = [float(r["std_error"]) for r in csv.DictReader(io.StringIO(out))]
        np.testing.assert_allclose(got, se, rtol=1e-8)

    def test_malformed_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,x\n1,0.5\n2,abc\n3,0.1\n")
        code, _, err = run("fit", p)
        assert code == 1
        assert "line 3" in err

    def test_missing_value(self, tmp_path):
        p = tmp_path / "gap.csv"
        p.write_text("y,x\n1,0.5\n2,\n")
        code, _, err = run("fit", p)
        assert code == 1 and "line 3" in err

    def test_negative_alpha(self, toy):
        code, _, err = run("fit", toy, "--alpha", -0.5)
        assert code == 1
        assert "alpha" in err

    def test_missing_file(self, tmp_path):
        code, _, _ = run("fit", tmp_path / "nope.csv")
        assert code == 1

    def test_separated_data_exit_2(self, tmp_path):
        p = tmp_path / "sep.csv"
        p.write_text("y,x\n0,1\n0,2\n0,0.5\n")
        code, _, err = run("fit", p)
        assert code == 2
        assert "numerical failure" in err

    def test_load_csv_header(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(Exception, match="y"):
            load_csv(p)


class TestTestCommand:
    def test_exact_null(self, sample_csv):
        path, s = sample_csv
        fit = fit_mdpde(PoissonRegression(), s, 0.0)
        l0 = repr(float(fit.eta_hat[1]))
        code, out, _ = run("test", path, "--y", "count", "--intercept", "--L", "0,1", "--l0", l0)
        rec = kv(out)
        assert code == 0
        assert float(rec["statistic"]) == pytest.approx(0.0, abs=1e-12)
        assert float(rec["p_value"]) == pytest.approx(1.0)
        assert rec["decision"] == "do not reject"

    def test_invariance(self, sample_csv):
        path, _ = sample_csv
        base = ["test", path, "--y", "count", "--intercept", "--alpha", 0.25]
        _, a, _ = run(*base, "--L", "1,0;0,1", "--l0", "0,1")
        _, b, _ = run(*base, "--L", "2,1;0,3", "--l0", "1,3")
        assert float(kv(a)["statistic"]) == pytest.approx(float(kv(b)["statistic"]), rel=1e-8)

    def test_matches_library(self, sample_csv):
        path, s = sample_csv
        _, out, _ = run("test", path, "--y", "count", "--intercept", "--alpha", 0.5, "--L", "0,1",
                        "--l0", 1, "--level", 0.1)
        fit = fit_mdpde(PoissonRegression(), s, 0.5)
        res = wald_statistic(fit, LinearHypothesis([[0.0, 1.0]], [1.0]), levels=(0.1,))
        rec = kv(out)
        assert float(rec["statistic"]) == pytest.approx(res.statistic, rel=1e-8)
        assert rec["df"] == "1" and rec["level"] == "0.1"

    def test_bad_hypothesis(self, sample_csv):
        path, _ = sample_csv
        code, _, _ = run("test", path, "--y", "count", "--intercept", "--L", "1,0;2,0")
        assert code == 1


class TestTable:
    def test_are_round_trip(self, tmp_path):
        out = tmp_path / "are.csv"
        assert run("table", "ARE", "-o", out)[0] == 0
        rows = list(csv.reader(out.open()))
        assert rows[0][:3] == ["mu_x", "beta0", "0"]
        assert len(rows) == 7 and len(rows[0]) == 10
        cells = {(r[0], r[1]): [float(v) for v in r[2:]] for r in rows[1:]}
        assert cells[("0", "1")][3] == 0.927
        assert all(v[0] == 1.0 for v in cells.values())
        text = out.read_text()
        for r in rows[1:]:
            for v in r[2:]:
                assert f"{float(v):.3f}" == v and v in text

    def test_power_cell(self, tmp_path):
        out = tmp_path / "pow.csv"
        assert run("table", "ContiguousPower", "-o", out)[0] == 0
        rows = list(csv.reader(out.open()))
        assert rows[0][:3] == ["d", "mu_x", "beta0"]
        cells = {tuple(r[:3]): r[3:] for r in rows[1:]}
        # reference cell, at the table tolerance
        assert abs(float(cells[("1", "1", "1")][0]) - 0.998) <= 0.002

    def test_bad_choice(self):
        with pytest.raises(SystemExit) as exc, redirect_stderr(io.StringIO()):
            main(["table", "Nope"])
        assert exc.value.code == 1


class TestIfGrid:
    def sup(self, alpha, tmp_path):
        out = tmp_path / f"g{alpha}.csv"
        code, _, err = run("ifgrid", "estimator", "--alpha", alpha, "-o", out)
        assert code == 0
        return float(err.strip().split("=")[1]), out

    def test_sup_ordering(self, tmp_path):
        assert self.sup(0.5, tmp_path)[0] < self.sup(0.1, tmp_path)[0]

    def test_long_format(self, tmp_path):
        sup, out = self.sup(0.25, tmp_path)
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["y_t", "x_t", "value"]
        assert len(rows) == 1 + 31 * 121
        assert max(abs(float(r[2])) for r in rows[1:]) == pytest.approx(sup, rel=1e-9)

    def test_panel_default(self, tmp_path):
        out = tmp_path / "p.csv"
        assert run("ifgrid", "estimator", "--mu-x", 5, "--alpha", 0.5, "--quiet", "-o", out)[0] == 0
        rows = list(csv.reader(out.open()))
        assert rows[1][:2] == ["0", "2"] and rows[-1][:2] == ["2981", "8"]

    def test_explicit_ranges(self, tmp_path):
        out = tmp_path / "e.csv"
        run("ifgrid", "estimator", "--y-max", 5, "--x-min", -1, "--x-max", 1, "--x-step", 0.5, "--quiet", "-o", out)
        assert len(list(csv.reader(out.open()))) == 1 + 6 * 5

    def test_quiet(self, tmp_path):
        code, _, err = run("ifgrid", "if2", "--alpha", 0.2, "--quiet", "-o", tmp_path / "q.csv")
        assert code == 0 and err == ""


CONFIG = """family=poisson
covariate=univariate_normal
eta_true=1
n=100
replicates=1
alphas=0,0.5
L=1
l0=1
seed=42
"""


class TestSimulate:
    def test_repeatable(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(CONFIG)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run("simulate", cfg, "-o", a)[0] == 0
        assert run("simulate", cfg, "-o", b)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        rows = list(csv.DictReader(a.open()))
        assert [r["alpha"] for r in rows] == ["0", "0.5"]

    def test_seed_override(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(CONFIG.replace("replicates=1", "replicates=3"))
        _, a, _ = run("simulate", cfg)
        _, b, _ = run("simulate", cfg, "--seed", 43)
        assert a != b

    def test_config_error(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(CONFIG.replace("n=100", "n=lots"))
        code, _, err = run("simulate", cfg)
        assert code == 1 and "line 4" in err

    def test_clean_null_level(self, tmp_path):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(CONFIG.replace("replicates=1", "replicates=1000").replace("alphas=0,0.5", "alphas=0"))
        code, out, _ = run("simulate", cfg)
        assert code == 0
        assert abs(float(kv(out)["rejection_rate"]) - 0.05) < 0.02


class TestPower:
    def test_round_trip(self):
        _, out, _ = run("power", "--beta0", 1, "--beta-star", 1.1, "--target", 0.8, "--alpha", 0.25)
        n = int(kv(out)["n"])
        _, out, _ = run("power", "--beta0", 1, "--beta-star", 1.1, "--n", n, "--alpha", 0.25)
        assert float(kv(out)["power"]) >= 0.8 - 1e-9

    def test_needs_one_of(self):
        assert run("power", "--beta0", 1, "--beta-star", 1.1)[0] == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mdpdglm", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout


def test_usage_error_exit_code():
    res = subprocess.run([sys.executable, "-m", "mdpdglm", "fit"], capture_output=True, text=True)
    assert res.returncode == 1
