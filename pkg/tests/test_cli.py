import csv
import json
import logging
import math
import subprocess
import sys

import numpy as np
import pytest

from slpqn.cli import (OUTPUT_ENV, cmd_compare_inner, cmd_datagen, cmd_fstar, cmd_plot,
                       cmd_run, load_config, load_series, main, read_vector, write_vector)
from slpqn.data import load_libsvm

BASE = """\
[experiment]
n = 60
d = 5
data_seed = 3
algorithms = {algs}
seeds = {seeds}
mu = 1e-3
lam = {lam}

[defaults]
batch_size = 8
hessian_batch = 20
max_epochs = 4
step_size = 0.5
record_every = 2
"""


def _config(tmp_path, algs="slspqn", seeds="0", lam="1e-3", extra=""):
    path = tmp_path / "exp.ini"
    path.write_text(BASE.format(algs=algs, seeds=seeds, lam=lam) + extra)
    return path


def _csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _without_wall(rows):
    return [r[:-1] for r in rows]


def test_run_minimal(tmp_path):
    out = tmp_path / "out"
    assert cmd_run(_config(tmp_path), out=out) == 0
    rows = _csv_rows(out / "slspqn_seed0.csv")
    assert rows[0] == "k,epochs,train_obj,train_gap,test_loss,test_acc,inner_iters,inner_residual,wall_ms".split(",")
    assert len(rows) >= 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["runs"][0]["name"] == "slspqn seed=0"
    cfg = manifest["runs"][0]["config"]
    assert cfg["batch_size"] == 8 and cfg["memory"] == 10 and cfg["seed"] == 0
    assert manifest["experiment"]["n"] == 60
    assert math.isfinite(manifest["fstar"])


def test_unknown_key_suggests_spelling(tmp_path, caplog):
    path = _config(tmp_path, extra="stepsize = 0.1\n")
    with caplog.at_level(logging.ERROR, logger="slpqn"):
        assert cmd_run(path, out=tmp_path / "o") == 1
    assert "stepsize" in caplog.text and "step_size" in caplog.text


@pytest.mark.parametrize("extra, needle", [
    ("[slspqm]\nmemory = 3\n", "slspqn"),
    ("[plsvrg]\nstep_size = fast\n", "step_size"),
])
def test_config_errors(tmp_path, caplog, extra, needle):
    with caplog.at_level(logging.ERROR, logger="slpqn"):
        assert cmd_run(_config(tmp_path, extra=extra), out=tmp_path / "o") == 1
    assert needle in caplog.text


def test_unknown_algorithm_rejected(tmp_path):
    assert cmd_run(_config(tmp_path, algs="slspqn, lbfgs"), out=tmp_path / "o") == 1


def test_invalid_run_config_rejected(tmp_path):
    assert cmd_run(_config(tmp_path, extra="[slspqn]\nbatch_size = 1000\n"), out=tmp_path / "o") == 1


def test_missing_config_file(tmp_path):
    assert cmd_run(tmp_path / "nope.ini") == 1


def test_runtime_failure_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cmd_run(_config(tmp_path), out=blocker) == 2


def test_per_algorithm_override(tmp_path):
    path = _config(tmp_path, algs="slspqn, plsvrg", extra="[plsvrg]\nstep_size = 2.0\n")
    exp = load_config(path)
    assert exp.run_config("plsvrg", 1).step_size == 2.0
    assert exp.run_config("slspqn", 1).step_size == 0.5
    assert exp.run_config("slspqn", 1).seed == 1


def test_none_values_and_relative_paths(tmp_path):
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "t.libsvm").write_text("1 1:1\n0 1:-1\n")
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\ndata = d/t.libsvm\n[defaults]\nupdate_frequency = none\n")
    exp = load_config(path)
    assert exp.data == str((tmp_path / "d" / "t.libsvm").resolve())
    assert exp.run_config("slspqn", 0).update_frequency is None


def test_seed_override_and_jobs(tmp_path):
    path = _config(tmp_path, algs="slspqn, plsvrg", seeds="0, 1")
    assert cmd_run(path, seed=1, out=tmp_path / "a") == 0
    assert sorted(p.name for p in (tmp_path / "a").glob("*.csv")) == [
        "plsvrg_seed1.csv", "slspqn_seed1.csv"]
    assert cmd_run(path, jobs=1, out=tmp_path / "serial") == 0
    assert cmd_run(path, jobs=2, out=tmp_path / "parallel") == 0
    for name in ("slspqn_seed0.csv", "plsvrg_seed1.csv"):
        assert _without_wall(_csv_rows(tmp_path / "serial" / name)) == \
            _without_wall(_csv_rows(tmp_path / "parallel" / name))


def test_output_dir_resolution(tmp_path, monkeypatch):
    path = _config(tmp_path)
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert cmd_run(path) == 0
    assert (tmp_path / "env" / "slspqn_seed0.csv").exists()
    assert cmd_run(path, out=tmp_path / "flag") == 0
    assert (tmp_path / "flag" / "slspqn_seed0.csv").exists()
    monkeypatch.delenv(OUTPUT_ENV)
    assert cmd_run(path) == 0
    assert (tmp_path / "results" / "slspqn_seed0.csv").exists()


def test_main_dispatch(tmp_path):
    assert main(["run", "--config", str(_config(tmp_path)), "--out", str(tmp_path / "o")]) == 0
    with pytest.raises(SystemExit):
        main(["run"])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "slpqn", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("run", "fstar", "compare-inner", "plot", "datagen"):
        assert sub in out.stdout


# ---- fstar -----------------------------------------------------------------

def _two_sample(tmp_path, lam):
    (tmp_path / "two.libsvm").write_text("1 1:1.0\n0 1:0.5\n")
    path = tmp_path / "two.ini"
    path.write_text(f"[experiment]\ndata = two.libsvm\nmu = 1e-3\nlam = {lam}\n")
    return path


def _two_sample_objective(x, lam):
    # label 1 with a = 1, label 0 with a = 0.5, written out by hand
    return (0.5 * (math.log1p(math.exp(-x)) + math.log1p(math.exp(0.5 * x)))
            + 0.5e-3 * x * x + lam * abs(x))


def _grid_min(fun, lo, hi):
    z = np.linspace(lo, hi, 200001)
    vals = np.array([fun(t) for t in z])
    j = int(np.argmin(vals))
    zf = np.linspace(z[max(j - 1, 0)], z[min(j + 1, z.size - 1)], 20001)
    return min(fun(t) for t in zf)


def _fstar_printed(capsys):
    return float(capsys.readouterr().out.split()[2])


def test_fstar_matches_grid_oracle(tmp_path, capsys):
    assert cmd_fstar(_two_sample(tmp_path, 1e-3), out=tmp_path / "o") == 0
    fstar = _fstar_printed(capsys)
    oracle = _grid_min(lambda t: _two_sample_objective(t, 1e-3), -20, 20)
    assert fstar == pytest.approx(oracle, abs=1e-6)
    x = read_vector(tmp_path / "o" / "xstar.txt")
    assert x.shape == (1,)
    assert _two_sample_objective(x[0], 1e-3) == pytest.approx(fstar, abs=1e-14)


def test_fstar_tolerance_halving(tmp_path, capsys):
    path = _two_sample(tmp_path, 1e-3)
    cmd_fstar(path, tol=1e-10, out=tmp_path / "a")
    a = _fstar_printed(capsys)
    cmd_fstar(path, tol=5e-11, out=tmp_path / "b")
    assert abs(_fstar_printed(capsys) - a) < 1e-10


def test_fstar_total_shrinkage(tmp_path, capsys):
    assert cmd_fstar(_two_sample(tmp_path, 1e3), out=tmp_path / "o") == 0
    assert _fstar_printed(capsys) == pytest.approx(math.log(2.0), rel=1e-15)
    np.testing.assert_array_equal(read_vector(tmp_path / "o" / "xstar.txt"), [0.0])


def test_fstar_non_convergence(tmp_path):
    assert cmd_fstar(_config(tmp_path), max_iter=2, out=tmp_path / "o") == 3


def test_vector_checksum(tmp_path):
    x = np.array([1.0, -2.5e-300, 1 / 3])
    write_vector(tmp_path / "v.txt", x)
    np.testing.assert_array_equal(read_vector(tmp_path / "v.txt"), x)
    text = (tmp_path / "v.txt").read_text().replace("-2.5e-300", "-2.6e-300")
    (tmp_path / "v.txt").write_text(text)
    with pytest.raises(ValueError, match="checksum"):
        read_vector(tmp_path / "v.txt")


# ---- compare-inner ---------------------------------------------------------

def _inner_table(path):
    return {r[0]: r for r in _csv_rows(path)[1:]}


def test_compare_inner_deterministic(tmp_path, capsys):
    path = _config(tmp_path, lam="1e-2", extra="[slspqn]\nmax_epochs = 10\n")
    assert cmd_compare_inner(path, trials=1, target=1e-3, out=tmp_path / "a") == 0
    assert cmd_compare_inner(path, trials=1, target=1e-3, out=tmp_path / "b") == 0
    a = _inner_table(tmp_path / "a" / "inner_solvers.csv")
    b = _inner_table(tmp_path / "b" / "inner_solvers.csv")
    assert set(a) == {"ssn", "fista", "ista"}
    for s in a:
        assert a[s][2:] == b[s][2:]
    assert "Ave Iter" in capsys.readouterr().out
    assert float(a["ssn"][2]) < min(float(a["fista"][2]), float(a["ista"][2]))


def test_compare_inner_smooth_case(tmp_path):
    path = _config(tmp_path, lam="0", extra="[slspqn]\nmax_epochs = 10\n")
    assert cmd_compare_inner(path, trials=1, target=1e-3, out=tmp_path / "o") == 0
    ssn = _inner_table(tmp_path / "o" / "inner_solvers.csv")["ssn"]
    assert int(ssn[4]) > 0 and float(ssn[2]) <= 2


# ---- plot ------------------------------------------------------------------

def _write_trace(path, gaps):
    with open(path, "w") as fh:
        fh.write("k,epochs,train_obj,train_gap,test_loss,test_acc,inner_iters,inner_residual,wall_ms\n")
        for k, g in enumerate(gaps):
            fh.write(f"{k},{0.5 * k},1.0,{g},nan,nan,0,0.0,1.0\n")


def test_plot_two_runs(tmp_path):
    _write_trace(tmp_path / "alpha.csv", [1.0, 0.1, 0.01])
    _write_trace(tmp_path / "beta.csv", [1.0, 0.5, 0.2, 0.1])
    svg = tmp_path / "p.svg"
    assert cmd_plot([tmp_path / "alpha.csv", tmp_path / "beta.csv"], svg) == 0
    text = svg.read_text()
    assert text.count('<g id="run-') == 2
    assert ">alpha</text>" in text and ">beta</text>" in text
    assert "<svg" in text and 'version="1.1"' in text


def test_plot_from_manifest(tmp_path):
    out = tmp_path / "o"
    assert cmd_run(_config(tmp_path, algs="slspqn, plsvrg"), out=out) == 0
    assert cmd_plot([out / "manifest.json"], out=out) == 0
    text = (out / "convergence.svg").read_text()
    assert text.count('<g id="run-') == 2
    assert "slspqn seed=0</text>" in text


def test_plot_rejects_single_row(tmp_path, caplog):
    _write_trace(tmp_path / "one.csv", [1.0])
    with caplog.at_level(logging.ERROR, logger="slpqn"):
        assert cmd_plot([tmp_path / "one.csv"], tmp_path / "p.svg") == 1
    assert "at least two" in caplog.text
    assert cmd_plot([tmp_path / "missing.csv"], tmp_path / "p.svg") == 1


def test_plot_floor(tmp_path):
    _write_trace(tmp_path / "t.csv", [1.0, 0.0, -3.0, 1e-20])
    (_, _, gap), = load_series([tmp_path / "t.csv"])
    np.testing.assert_array_equal(gap, [1.0, 1e-16, 1e-16, 1e-16])
    (_, _, gap), = load_series([tmp_path / "t.csv"], floor=1e-12)
    assert gap.min() == 1e-12
    assert cmd_plot([tmp_path / "t.csv"], tmp_path / "p.svg") == 0


def test_plot_bytes_reproducible(tmp_path):
    _write_trace(tmp_path / "alpha.csv", [1.0, 0.1, 0.01])
    _write_trace(tmp_path / "beta.csv", [1.0, 0.5, 0.2])
    inputs = [tmp_path / "alpha.csv", tmp_path / "beta.csv"]
    cmd_plot(inputs, tmp_path / "a.svg", title="demo")
    cmd_plot(inputs, tmp_path / "b.svg", title="demo")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


# ---- datagen ---------------------------------------------------------------

def test_datagen(tmp_path):
    assert cmd_datagen(50, 20, 0.2, seed=1, out=tmp_path, name="toy") == 0
    ds = load_libsvm(tmp_path / "toy.libsvm", d=20)
    assert (ds.n, ds.d) == (50, 20)
    assert np.all(np.diff(ds.features.indptr) == 4)
    assert cmd_datagen(50, 20, 1.0, test_fraction=0.2, out=tmp_path, name="toy") == 0
    assert load_libsvm(tmp_path / "toy.test.libsvm", d=20).n == 10
    assert cmd_datagen(50, 20, 0.0, out=tmp_path) == 1
