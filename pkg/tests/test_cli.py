import json

import numpy as np
import pytest

from avgfilt import cli, experiments, oracle
from avgfilt.errors import ConfigError, NumericalError
from avgfilt.experiments import ResultRow, make_config, run_experiment
from avgfilt.model import scalar_problem
from avgfilt.output import emit_results, gnuplot_script, load_rows, render


def small(experiment, **kw):
    base = dict(N=16, n_steps=100, trials=8, resamples=200, record_per_decade=5)
    base.update(kw)
    return make_config(experiment, "full", {}, **base)


# output format


def test_empty_table_is_header_only():
    assert render([], "csv") == "experiment,t,n,series,value,ci_lo,ci_hi,predicted_exponent\n"
    assert render([], "json") == "[]\n"


def test_deterministic_row_has_empty_ci():
    row = ResultRow("diag-bias", 0.0, 10, "bias_closed", 0.125)
    assert render([row]).splitlines()[1] == "diag-bias,0,10,bias_closed,0.125,,,"


def test_json_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    rows = [ResultRow("scalar", 0.5, i + 1, "x", float(v), float(v) / 3, float(v) * np.pi, -1 / 3)
            for i, v in enumerate(rng.standard_normal(20))]
    rows.append(ResultRow("scalar", 0.5, 99, "y", 1e-300))
    path = tmp_path / "r.json"
    emit_results(rows, path, "json")
    back = json.loads(path.read_text())
    for r, b in zip(rows, back):
        assert b["value"] == r.value and b["ci_lo"] == r.ci_lo and b["ci_hi"] == r.ci_hi
        assert b["predicted_exponent"] == r.predicted_exponent and b["n"] == r.n and b["t"] == r.t
    assert back[-1]["ci_lo"] is None


def test_csv_round_trip(tmp_path):
    rows = [ResultRow("scalar", 0.0, 3, "a", 0.1 + 0.2, 0.1, 0.7, -1.0)]
    path = tmp_path / "r.csv"
    emit_results(rows, path)
    back = load_rows(path)
    assert back[0]["value"] == 0.1 + 0.2 and back[0]["n"] == 3 and back[0]["ci_lo"] == 0.1


def test_unwritable_path_reports_path(tmp_path):
    target = tmp_path / "missing" / "out.csv"
    with pytest.raises(OSError, match="missing"):
        emit_results([], target)


def test_gnuplot_script(tmp_path):
    path = tmp_path / "r.csv"
    emit_results([ResultRow("s", 0.0, 1, "a", 1.0), ResultRow("s", 1.0, 1, "b", 2.0)], path)
    script = gnuplot_script(path)
    assert "set logscale xy" in script and "title 'a t=0'" in script and "title 'b t=1'" in script


# configuration


def test_defaults():
    cfg = make_config("scalar")
    assert (cfg.a, cfg.gamma, cfg.u_truth, cfg.u0, cfg.sigma, cfg.alpha, cfg.C0) == (1, 0.1, 0.5, 0, 1, 1, 1)
    assert (cfg.trials, cfg.n_steps) == (100, 10_000)
    cfg = make_config("diag-bias")
    assert (cfg.N, cfg.n_steps, cfg.beta, cfg.delta, cfg.t) == (4096, 10_000, 1.0, 0.01, (0.0, 0.5, 1.0, 2.0))
    desk = make_config("diag-var", "desk")
    assert (desk.N, desk.n_steps, desk.trials) == (1024, 1000, 50)


def test_precedence():
    cfg = make_config("diag-var", "desk", {"N": 64, "trials": 7}, trials=3)
    assert (cfg.N, cfg.n_steps, cfg.trials) == (64, 1000, 3)


@pytest.mark.parametrize("bad", [dict(trials=0), dict(alpha=-1.0), dict(t=[-1.0]), dict(N=0),
                                 dict(seed=2**64), dict(format="xml"), dict(n_steps=3)])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        make_config("diag-var", **bad)


def test_unknown_field_and_experiment():
    with pytest.raises(ConfigError):
        make_config("diag-var", "full", {"colour": 1})
    with pytest.raises(ConfigError):
        make_config("nope")
    with pytest.raises(ConfigError):
        make_config("scalar", "huge")


def test_seed_resolution(monkeypatch):
    monkeypatch.delenv(experiments.SEED_ENV, raising=False)
    assert make_config("scalar").resolved_seed == 0
    monkeypatch.setenv(experiments.SEED_ENV, "17")
    assert make_config("scalar").resolved_seed == 17
    assert make_config("scalar", seed=3).resolved_seed == 3
    monkeypatch.setenv(experiments.SEED_ENV, "abc")
    with pytest.raises(ConfigError):
        make_config("scalar").resolved_seed


# experiment runners


def test_rows_are_sorted_and_consistent():
    for name in experiments.EXPERIMENTS:
        kw = dict(n_min=10, n_max=10_000) if name == "batch-minimax" else {}
        res = run_experiment(small(name, **kw))
        assert res.rows
        seen = {}
        for r in res.rows:
            key = (r.series, r.t)
            if key in seen:
                assert r.n > seen[key]
            seen[key] = r.n
            if r.ci_lo is not None:
                assert r.ci_lo <= r.value <= r.ci_hi


def test_scalar_noiseless_single_trial_collapses_to_bias():
    res = run_experiment(small("scalar", gamma=1e-30, trials=1))
    for name in ("3dvar", "3dvar_avg", "kalman", "kalman_avg"):
        n, mc = res.series(name)
        _, ref = res.series(name + "_oracle")
        # the iterate itself is only accurate to ~1e-16, so squared errors to ~1e-32
        assert np.allclose(mc, ref, rtol=1e-8, atol=1e-30)


def test_diag_bias_sim_matches_closed():
    res = run_experiment(small("diag-bias", N=256, n_steps=1000))
    for t in (0.0, 0.5, 1.0, 2.0):
        _, sim = res.series("bias_sim", t)
        _, closed = res.series("bias_closed", t)
        assert np.allclose(sim, closed, rtol=1e-8, atol=0)


def test_kalman_compare_zero_initial_error():
    res = run_experiment(small("kalman-compare", u0=0.5))
    _, bias = res.series("avg_bias")
    _, flags = res.series("bias_ineq")
    assert np.all(bias == 0) and np.all(flags == 1)


def test_batch_minimax_noiseless():
    res = run_experiment(small("batch-minimax", gamma=0.0, n_min=10, n_max=1000, t=[0.0]))
    _, risk = res.series("risk_opt", 0.0)
    assert np.all(risk == 0)


def test_rates_table_flags_uncovered_regime():
    res = run_experiment(small("rates-table"))
    assert any("t=2: regime not covered" in note for note in res.notes)
    rows = {(r.series, r.t): r.value for r in res.rows}
    assert rows[("tau_bar_b", 0.0)] == pytest.approx(0.125)
    assert rows[("var_rate", 2.0)] == 1.0


# command line


def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_writes_csv_and_summary(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, stdout, err = run_cli(["scalar", "--n-steps", "200", "--trials", "5", "--resamples", "100",
                                 "--out", str(out)], capsys)
    assert code == 0 and stdout == ""
    assert "3dvar_avg" in err and out.read_text().startswith("experiment,")


def test_cli_stdout_json(capsys):
    code, stdout, _ = run_cli(["rates-table", "--format", "json", "--quiet"], capsys)
    assert code == 0
    assert json.loads(stdout)[0]["experiment"] == "rates-table"


def test_cli_exit_codes(tmp_path, capsys):
    assert run_cli(["diag-var", "--trials", "0"], capsys)[0] == 2
    assert run_cli(["diag-var", "--seed", "-4"], capsys)[0] == 2
    assert run_cli(["unknown"], capsys)[0] == 2
    assert run_cli(["diag-var", "--preset", "huge"], capsys)[0] == 2
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert run_cli(["scalar", "--config", str(bad)], capsys)[0] == 2
    assert run_cli(["rates-table", "--out", str(tmp_path / "no" / "x.csv")], capsys)[0] == 4


def test_cli_numerical_failure_exit_code(monkeypatch, capsys):
    def boom(cfg):
        raise NumericalError("covariance lost positivity")

    monkeypatch.setitem(experiments.RUNNERS, "rates-table", boom)
    assert run_cli(["rates-table"], capsys)[0] == 3


def test_cli_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"N": 8, "n_steps": 50, "trials": 4, "resamples": 50, "t": [1.0]}))
    code, stdout, _ = run_cli(["diag-var", "--config", str(cfg), "--quiet"], capsys)
    assert code == 0
    assert {line.split(",")[1] for line in stdout.splitlines()[1:]} == {"1"}


def test_cli_env_seed(tmp_path, monkeypatch, capsys):
    args = ["diag-var", "--N", "8", "--n-steps", "50", "--trials", "4", "--resamples", "50", "--quiet"]
    monkeypatch.setenv("AVGFILT_SEED", "9")
    _, a, _ = run_cli(args, capsys)
    _, b, _ = run_cli(args + ["--seed", "9"], capsys)
    _, c, _ = run_cli(args + ["--seed", "10"], capsys)
    assert a == b and a != c


def test_cli_threads_do_not_change_output(capsys):
    args = ["diag-var", "--N", "32", "--n-steps", "300", "--trials", "12", "--resamples", "100", "--quiet"]
    _, a, _ = run_cli(args + ["--threads", "1"], capsys)
    _, b, _ = run_cli(args + ["--threads", "3"], capsys)
    assert a == b


def test_cli_plot(tmp_path, capsys):
    data = tmp_path / "r.csv"
    emit_results([ResultRow("s", 0.0, 1, "a", 1.0)], data)
    code, stdout, _ = run_cli(["plot", str(data)], capsys)
    assert code == 0 and "plot '" in stdout


def test_kalman_compare_uses_exact_variance(capsys):
    code, stdout, _ = run_cli(["kalman-compare", "--alpha", "1", "--n-steps", "10", "--quiet"], capsys)
    rows = [line.split(",") for line in stdout.splitlines()[1:]]
    avg_var = {int(r[2]): float(r[4]) for r in rows if r[3] == "avg_var"}
    assert avg_var[2] == pytest.approx(oracle.kalman_closed(scalar_problem(alpha=1.0), 2, averaged=True).var, rel=1e-14)
