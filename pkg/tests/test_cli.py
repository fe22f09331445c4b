import json

import numpy as np
import pytest

from fbenv.cli import RunSpec, generate, main, run_checks, run_experiment
from fbenv.problems import ProblemSpec
from fbenv.solver import COUNTER_KEYS


def _lasso_spec(**kw):
    return ProblemSpec(family="lasso", seed=0, params={"m": 60, "n": 120}, **kw)


@pytest.fixture(scope="module")
def lasso_run():
    spec = RunSpec(problem=_lasso_spec(), solvers=["fbs", "fast-fbs", "alg2-lbfgs"])
    return run_experiment(spec)


def test_unknown_preset_lists_valid_ones(tmp_path, capsys):
    with pytest.raises(ValueError, match="valid presets: .*alg2-lbfgs"):
        RunSpec(problem=_lasso_spec(), solvers=["newton-exact"]).validate()
    (tmp_path / "p.spec").write_text("family = lasso\nm = 10\nn = 20\n")
    assert main(["run", str(tmp_path / "p.spec"), "--solvers", "newton-exact"]) == 2
    err = capsys.readouterr().err
    assert "newton-exact" in err and "fast-fbs" in err


def test_rows_present_and_envelope_cheaper(lasso_run):
    rows, traces = lasso_run
    by = {r["solver"]: r for r in rows}
    assert set(by) == {"fbs", "fast-fbs", "alg2-lbfgs"}
    assert all(r["status"] == "converged" for r in rows)
    assert by["alg2-lbfgs"]["matvecs"] < by["fast-fbs"]["matvecs"]
    for r in rows:
        phi_star = traces[r["solver"]].records[-1].objective - r["final_gap"]
        assert r["final_gap"] <= 1e-6 * (1 + abs(phi_star))


def test_counters_reconcile(lasso_run):
    rows, traces = lasso_run
    for r in rows:
        trace = traces[r["solver"]]
        for key in ("f_evals", "matvecs", "prox_calls", "svds"):
            assert r[key] == trace.column(key).sum() == trace.counters[key]
        assert set(COUNTER_KEYS) <= set(trace.counters)


def test_fbs_residual_monotone(lasso_run):
    _, traces = lasso_run
    res = traces["fbs"].column("residual")
    assert np.all(np.diff(res) <= 1e-12 * (1 + res[:-1]))


def _trace_files(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("trace_*.csv"))}


def test_rerun_is_bitwise_identical(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        run_experiment(RunSpec(problem=_lasso_spec(), solvers=["fbs", "alg1-lbfgs"], out=str(out)))
        outs.append(_trace_files(out))
    assert outs[0] and outs[0] == outs[1]


def test_gen_then_run(tmp_path, capsys):
    gen_dir = tmp_path / "inst"
    assert main(["gen", "lasso", "m=20", "n=40", "--seed", "3", "-o", str(gen_dir)]) == 0
    specfile = capsys.readouterr().out.strip()
    for name in ("problem.spec", "A.csv", "b.csv", "meta.json"):
        assert (gen_dir / name).exists()
    out = tmp_path / "res"
    code = main(["run", specfile, "--solvers", "fbs,alg2-lbfgs", "--out", str(out)])
    stdout = capsys.readouterr().out
    assert code == 0
    assert "alg2-lbfgs" in stdout and "matvecs" in stdout
    for name in ("summary.csv", "summary.txt", "plot.csv", "reference.json", "trace_fbs.csv",
                 "trace_alg2-lbfgs.json"):
        assert (out / name).exists()
    ref = json.loads((out / "reference.json").read_text())
    assert ref["lam"] > 0


def test_generated_files_rebuild_same_problem(tmp_path):
    path = generate("lasso", {"m": "15", "n": "25"}, 1, tmp_path)
    A = np.loadtxt(tmp_path / "A.csv", delimiter=",")
    b = np.loadtxt(tmp_path / "b.csv", delimiter=",")
    assert A.shape == (15, 25) and b.shape == (15,)
    rows, _ = run_experiment(RunSpec(problem=ProblemSpec.load(path), solvers=["alg2-lbfgs"]))
    assert rows[0]["status"] == "converged"


def test_residual_stop(tmp_path):
    rows, traces = run_experiment(RunSpec(problem=_lasso_spec(), solvers=["alg2-bfgs"], stop="residual",
                                          tol=1e-9))
    assert traces["alg2-bfgs"].records[-1].residual <= 1e-9


def test_check_passes():
    assert run_checks(0, log=lambda *a: None) == 0
    assert main(["check"]) == 0


def test_bad_arguments(tmp_path):
    assert main(["run", str(tmp_path / "missing.spec")]) == 2
    assert main(["gen", "lasso", "m20", "-o", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
