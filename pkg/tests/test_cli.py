import math

import numpy as np
import pytest
from scipy import stats

from comprkhs.cli import main
from comprkhs.dataio import expansion_from_text
from comprkhs.expfam import ThetaPoly, example_theta, theta_from_text, theta_to_text


def _csv(path, rows, header=None):
    lines = [header] if header else []
    lines += [",".join("%.17g" % v for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def _body(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def _header(path):
    return dict(
        ln[2:].split("=", 1) for ln in path.read_text().splitlines() if ln.startswith("# ") and "=" in ln
    )


@pytest.fixture
def data(tmp_path):
    X = np.random.default_rng(0).dirichlet([2, 3, 4], 40)
    return _csv(tmp_path / "x.csv", X, "a,b,c")


@pytest.fixture
def uniform_theta(tmp_path):
    p = tmp_path / "zero.theta"
    p.write_text(theta_to_text(ThetaPoly.zeros(2, 2)))
    return str(p)


def test_validate_echo(tmp_path, data):
    out = tmp_path / "v.csv"
    assert main(["validate", "-i", data, "-o", str(out)]) == 0
    body = _body(out)
    assert body[0] == "a,b,c" and len(body) == 41
    head = out.read_text().splitlines()
    assert head[0] == "# comprkhs 0.1.0" and "# command=validate" in head


def test_spread_multiplicities(tmp_path):
    inp = _csv(tmp_path / "s.csv", [[0.5, 0.5, 0.0], [0.2, 0.3, 0.5]])
    out = tmp_path / "s.out"
    assert main(["spread", "-i", inp, "-o", str(out)]) == 0
    rows = [r.split(",") for r in _body(out)[1:]]
    assert len(rows) == 12
    mult = np.array([int(r[3]) for r in rows])
    owner = np.array([int(r[4]) for r in rows])
    assert mult[owner == 1].sum() == 8 and mult[owner == 2].sum() == 8
    assert set(mult[owner == 1]) == {2}


def test_kde_grid(tmp_path, data):
    out = tmp_path / "k.csv"
    assert main(["kde", "-i", data, "-o", str(out), "--h", "0.3", "--grid", "4"]) == 0
    body = _body(out)
    assert body[0] == "x1,x2,x3,density" and len(body) == 1 + math.comb(6, 2)
    dens = np.array([float(r.split(",")[3]) for r in body[1:]])
    assert np.all(dens >= 0)
    assert _header(out)["h"] == "0.29999999999999999"


def test_expfam_eval_uniform_constant(tmp_path, uniform_theta):
    out = tmp_path / "e.csv"
    assert main(["expfam-eval", "--theta", uniform_theta, "--grid", "2", "-o", str(out)]) == 0
    dens = [float(r.split(",")[-1]) for r in _body(out)[1:]]
    assert len(dens) == 6
    assert np.allclose(dens, 2 / np.pi, rtol=1e-12)


def test_grid_vertices(tmp_path):
    out = tmp_path / "g.csv"
    assert main(["grid", "--resolution", "2", "-o", str(out)]) == 0
    body = _body(out)
    assert body[0] == "x1,x2,x3" and len(body) == 7


def test_grid_with_theta(tmp_path):
    th = tmp_path / "t1.theta"
    th.write_text(theta_to_text(example_theta(1)))
    out = tmp_path / "g.csv"
    assert main(["grid", "--resolution", "10", "--theta", str(th), "--n-mc", "100000", "-o", str(out)]) == 0
    assert len(_body(out)) == 1 + math.comb(12, 2)


def test_interp_and_report(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.dirichlet(np.ones(3), 6)
    y = rng.normal(size=6)
    inp = _csv(tmp_path / "r.csv", np.hstack([X, y[:, None]]))
    out, rep = tmp_path / "f.txt", tmp_path / "rep.txt"
    assert main(["interp", "-i", inp, "-o", str(out), "--report", str(rep)]) == 0
    f = expansion_from_text(out.read_text())
    assert np.max(np.abs(f(X) - y)) < 1e-8
    kv = dict(ln.split("=", 1) for ln in _body(rep) if "=" in ln)
    assert float(kv["max_abs_residual"]) < 1e-8


def test_ridge_mu_in_header(tmp_path):
    rng = np.random.default_rng(2)
    X = rng.dirichlet(np.ones(3), 8)
    inp = _csv(tmp_path / "r.csv", np.hstack([X, rng.normal(size=(8, 1))]))
    out = tmp_path / "f.txt"
    assert main(["ridge", "-i", inp, "-o", str(out), "--m", "2", "--mu", "0.1"]) == 0
    assert _header(out)["mu"] == "0.10000000000000001"
    assert expansion_from_text(out.read_text()).n == 8


def test_expfam_sample_and_fit(tmp_path, uniform_theta):
    smp = tmp_path / "smp.csv"
    assert main(["expfam-sample", "--theta", uniform_theta, "--n", "300", "--seed", "3", "-o", str(smp)]) == 0
    assert len(_body(smp)) == 301
    fit = tmp_path / "fit.theta"
    assert main(["expfam-fit", "-i", str(smp), "--m", "1", "--n-mc", "20000", "-o", str(fit)]) == 0
    model = theta_from_text(fit.read_text())
    assert model.dim == 2 and model.degree == 1 and math.isfinite(model.log_partition)
    empty = tmp_path / "none.csv"
    assert main(["expfam-sample", "--theta", uniform_theta, "--n", "0", "-o", str(empty)]) == 0
    assert _body(empty) == ["x1,x2,x3"]


def test_gof_output_keys(tmp_path, data):
    out = tmp_path / "gof.txt"
    assert main(["gof", "-i", data, "-o", str(out), "--n-sim", "99", "--h", "0.3"]) == 0
    keys = dict(ln.split("=", 1) for ln in _body(out))
    assert {"statistic", "p_value", "n_sim"} <= set(keys)
    assert 0 < float(keys["p_value"]) <= 1


def test_errors_exit_one(tmp_path, capsys):
    bad = _csv(tmp_path / "bad.csv", [[0.5, 0.5, 0.1]])
    assert main(["validate", "-i", bad, "-o", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "line" in err and "1" in err
    assert not (tmp_path / "o").exists()
    assert main(["gof", "-i", bad, "-o", str(tmp_path / "o"), "--n-sim", "10"]) == 1
    with pytest.raises(SystemExit):
        main(["validate", "--no-such-flag"])


def test_gof_rejects_small_n_sim(tmp_path, data):
    assert main(["gof", "-i", data, "-o", str(tmp_path / "o"), "--n-sim", "10"]) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["kde", "--h", "0.25", "--grid", "6"],
        ["spread"],
        ["gof", "--n-sim", "99", "--seed", "5"],
        ["expfam-fit", "--m", "2", "--n-mc", "20000", "--seed", "2"],
    ],
)
def test_reruns_byte_identical(tmp_path, data, argv):
    outs = []
    for _ in range(2):
        out = tmp_path / "run.txt"
        assert main(argv[:1] + ["-i", data, "-o", str(out)] + argv[1:]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_gof_worker_count_irrelevant(tmp_path, data):
    outs = []
    for w in (1, 3):
        out = tmp_path / "w.txt"
        assert main(["gof", "-i", data, "-o", str(out), "--n-sim", "99", "--seed", "8", "--workers", str(w)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_expfam_sample_rerun_identical(tmp_path):
    th = tmp_path / "t3.theta"
    th.write_text(theta_to_text(example_theta(3)))
    outs = []
    for _ in range(2):
        out = tmp_path / "s.csv"
        argv = ["expfam-sample", "--theta", str(th), "--n", "50", "--n-mc", "20000", "--seed", "4", "-o", str(out)]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.slow
def test_gof_p_values_uniform_under_null(tmp_path, uniform_theta):
    # sample under the null, test against it: p-values should look uniform
    p = []
    for seed in range(200):
        smp = tmp_path / "smp.csv"
        out = tmp_path / "gof.txt"
        assert main(["expfam-sample", "--theta", uniform_theta, "--n", "30", "--seed", str(seed), "-o", str(smp)]) == 0
        assert main(["gof", "-i", str(smp), "-o", str(out), "--n-sim", "99", "--seed", str(10_000 + seed)]) == 0
        p.append(float(dict(ln.split("=", 1) for ln in _body(out))["p_value"]))
    # discrete p-values on {1/100, ..., 1}: jitter within a cell before the KS test
    u = np.array(p) - np.random.default_rng(0).uniform(0, 0.01, len(p))
    assert stats.kstest(u, "uniform").pvalue > 0.01
