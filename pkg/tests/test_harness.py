import csv
import filecmp
import os

import numpy as np
import pytest

from stoprl.arppo import MethodConfig
from stoprl.diagnostics import iqm
from stoprl.environments import NModelConfig, load_preset
from stoprl.errors import AlignmentError, ConfigError
from stoprl.harness.aggregate import aggregate, read_trials, table1
from stoprl.harness.cli import main
from stoprl.harness.config import ExperimentConfig, parse_config_text
from stoprl.harness.runner import run_experiment, run_trial, window_rows

BASE = """
[experiment]
steps = {steps}
trials = {trials}
seed = 3
window = {window}
out = {out}
workers = 1

[env]
preset = sa-medium

[method]
method = {method}
"""


def _cfg(tmp_path, name="run", steps=600, trials=2, window=200, method="stop"):
    return parse_config_text(BASE.format(steps=steps, trials=trials, window=window,
                                         out=tmp_path / name, method=method))


def _write(tmp_path, **kw):
    path = tmp_path / "exp.ini"
    path.write_text(BASE.format(**{"steps": 600, "trials": 2, "window": 200, "out": tmp_path / "out",
                                   "method": "stop", **kw}))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_full_config():
    text = BASE.format(steps=10, trials=1, window=5, out="x", method="stop") + "lyapunov_p = 3\nrollout_len = 64\n"
    cfg = parse_config_text(text)
    assert cfg.method.lyapunov_p == 3 and cfg.method.hyper.rollout_len == 64
    assert cfg.env == load_preset("sa-medium") and cfg.seed == 3


def test_inline_nmodel_env():
    text = """[env]
kind = nmodel
lambda1 = 0.6
lambda2 = 0.5
mu1 = 1
mu2 = 0.9
mu3 = 0.8
[method]
method = cmu
"""
    cfg = parse_config_text(text)
    assert isinstance(cfg.env, NModelConfig) and cfg.env.holding_costs == (3.0, 1.0)
    assert cfg.steps == 100_000 and cfg.trials == 20 and cfg.window == 1000


@pytest.mark.parametrize("bad", [
    "[method]\nmethod = stop\n",
    "[env]\npreset = sa-medium\n[method]\nmethod = dqn\n",
    "[env]\npreset = sa-medium\n[method]\nmethod = stop\nfoo = 1\n",
    "[env]\npreset = nowhere\n[method]\nmethod = stop\n",
    "[experiment]\ntrials = 0\n[env]\npreset = sa-medium\n[method]\nmethod = stop\n",
    "[experiment]\nsteps = 10\nwindow = 20\n[env]\npreset = sa-medium\n[method]\nmethod = stop\n",
    "[env]\npreset = sa-medium\n[method]\nmethod = stop\ncost_variant = exp_current\n",
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        parse_config_text(bad)


def test_zero_steps_header_only(tmp_path):
    out = run_experiment(_cfg(tmp_path, steps=0, window=1))
    for k in range(2):
        lines = (tmp_path / "run" / f"trial_{k:03d}.csv").read_text().splitlines()
        assert lines == ["trial,step,mean_true_cost,mean_shaped_cost,destab_frac"]
    assert os.path.isdir(out)


def test_window_count_and_seed_offset(tmp_path):
    cfg = _cfg(tmp_path, steps=1000, trials=2, window=100)
    run_experiment(cfg, raw=True)
    rows = _rows(tmp_path / "run" / "trial_001.csv")
    assert len(rows) == 10 and [int(r["step"]) for r in rows] == list(range(100, 1001, 100))
    single = run_trial(cfg.with_overrides(seed=cfg.seed + 1), 0)
    assert float(rows[0]["mean_true_cost"]) == single.true_costs[:100].mean()


def test_windowed_equals_raw(tmp_path):
    run_experiment(_cfg(tmp_path, steps=650, trials=1, window=100), raw=True)
    raw = _rows(tmp_path / "run" / "trial_000_raw.csv")
    win = _rows(tmp_path / "run" / "trial_000.csv")
    true = np.array([float(r["true_cost"]) for r in raw])
    shaped = np.array([float(r["shaped_cost"]) for r in raw])
    assert [int(r["step"]) for r in win][-1] == 650
    for j, r in enumerate(win):
        sl = slice(100 * j, min(100 * (j + 1), 650))
        assert float(r["mean_true_cost"]) == pytest.approx(true[sl].mean(), rel=1e-15)
        assert float(r["mean_shaped_cost"]) == pytest.approx(shaped[sl].mean(), rel=1e-15)


def test_default_sized_windows():
    from stoprl.arppo import TrainResult

    r = TrainResult(np.ones(100_000), np.ones(100_000), np.zeros(100_000, dtype=int),
                    np.zeros(100_000, dtype=bool), np.zeros((100_000, 2), dtype=int))
    assert len(list(window_rows(r, 0, 1000))) == 100


def test_determinism_and_trial_isolation(tmp_path):
    a = run_experiment(_cfg(tmp_path, "a", method="ppo"))
    b = run_experiment(_cfg(tmp_path, "b", method="ppo"))
    for k in range(2):
        assert filecmp.cmp(os.path.join(a, f"trial_{k:03d}.csv"), os.path.join(b, f"trial_{k:03d}.csv"), shallow=False)
    keep = (tmp_path / "a" / "trial_001.csv").read_bytes()
    os.remove(tmp_path / "a" / "trial_001.csv")
    run_experiment(_cfg(tmp_path, "a", method="ppo"), trials=[1])
    assert (tmp_path / "a" / "trial_001.csv").read_bytes() == keep


def test_failed_trial_is_recorded(tmp_path, monkeypatch):
    import stoprl.harness.runner as runner

    real = runner.run_trial

    def flaky(config, k, backend=None):
        if k == 1:
            raise RuntimeError("boom")
        return real(config, k, backend)

    monkeypatch.setattr(runner, "run_trial", flaky)
    out = run_experiment(_cfg(tmp_path, trials=3))
    assert runner.failed_trials(out) == [1]
    assert (tmp_path / "run" / "trial_000.csv").exists() and (tmp_path / "run" / "trial_002.csv").exists()


def test_parallel_matches_serial(tmp_path):
    a = run_experiment(_cfg(tmp_path, "serial", method="maxweight"))
    b = run_experiment(_cfg(tmp_path, "par", method="maxweight").with_overrides(workers=2))
    for k in range(2):
        assert filecmp.cmp(os.path.join(a, f"trial_{k:03d}.csv"), os.path.join(b, f"trial_{k:03d}.csv"), shallow=False)


def test_aggregate(tmp_path):
    d = run_experiment(_cfg(tmp_path, "agg", trials=5, method="maxweight"))
    out = aggregate([d], "mean_true_cost", str(tmp_path / "s.csv"), n_bootstrap=300)
    rows = _rows(out)
    steps, vals = read_trials(d, "mean_true_cost")
    assert len(rows) == len(steps)
    for r, col in zip(rows, vals.T):
        assert float(r["iqm"]) == pytest.approx(iqm(col), rel=1e-15)
        assert float(r["ci_low"]) <= float(r["iqm"]) <= float(r["ci_high"])
        assert r["n_trials"] == "5" and r["single_trial"] == "0"


def test_aggregate_single_trial(tmp_path):
    d = run_experiment(_cfg(tmp_path, "one", trials=1, method="maxweight"))
    rows = _rows(aggregate([d], "destab_frac", str(tmp_path / "s.csv")))
    assert all(r["single_trial"] == "1" and r["iqm"] == r["ci_low"] == r["ci_high"] for r in rows)


def test_aggregate_constant_trials(tmp_path):
    d = tmp_path / "const"
    d.mkdir()
    for k in range(4):
        (d / f"trial_{k:03d}.csv").write_text(
            "trial,step,mean_true_cost,mean_shaped_cost,destab_frac\n" f"{k},10,2.5,2.5,0.0\n")
    r = _rows(aggregate([str(d)], "mean_true_cost", str(tmp_path / "s.csv")))[0]
    assert float(r["iqm"]) == float(r["ci_low"]) == float(r["ci_high"]) == 2.5


def test_aggregate_alignment(tmp_path):
    a = run_experiment(_cfg(tmp_path, "g1", window=200, method="maxweight"))
    b = run_experiment(_cfg(tmp_path, "g2", window=300, method="maxweight"))
    with pytest.raises(AlignmentError):
        aggregate([a, b], "mean_true_cost", str(tmp_path / "s.csv"))
    os.remove(os.path.join(a, "trial_001.csv"))
    run_experiment(_cfg(tmp_path, "g1", window=300, method="maxweight"), trials=[1])
    with pytest.raises(AlignmentError):
        read_trials(a, "mean_true_cost")


def test_table1_shape(tmp_path):
    rows = table1(str(tmp_path / "t1.csv"), trials=6)
    assert [r[0] for r in rows] == ["true", "l1", "l2"]
    assert len(_rows(tmp_path / "t1.csv")) == 3


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg = _write(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "trial_001.csv").exists()
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["run"]) == 1
    assert main(["run", "--config", str(cfg), "--bogus"]) == 1
    assert main([]) == 1
    assert main(["aggregate", "--in", str(tmp_path / "c"), "--metric", "mean_true_cost",
                 "--out", str(tmp_path / "agg.csv")]) == 0
    assert main(["aggregate", "--in", str(tmp_path / "nothing"), "--metric", "mean_true_cost",
                 "--out", str(tmp_path / "agg.csv")]) == 1


def test_cli_oracle_check(capsys):
    assert main(["oracle-check", "--cap", "5"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_cli_sweep(tmp_path):
    cfg = _write(tmp_path, steps=400)
    assert main(["sweep", "--config", str(cfg), "--param", "lyapunov_p", "--values", "1,2,3",
                 "--out", str(tmp_path / "sw"), "--trials", "1"]) == 0
    for v in ("1", "2", "3"):
        assert (tmp_path / f"sw_lyapunov_p_{v}" / "trial_000.csv").exists()
    assert main(["sweep", "--config", str(cfg), "--param", "lyapunov_p", "--values", "-1",
                 "--out", str(tmp_path / "bad")]) == 1


def test_cli_table1(tmp_path):
    assert main(["table1", "--out", str(tmp_path / "t.csv"), "--trials", "4"]) == 0


def test_experiment_config_invariants():
    m = MethodConfig.for_method("stop")
    env = load_preset("sa-medium")
    with pytest.raises(ConfigError):
        ExperimentConfig(env, m, steps=-1)
    ExperimentConfig(env, m, steps=0, window=1000)
