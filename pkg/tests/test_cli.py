import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from mpgpe import gp, lscde
from mpgpe.cli import _streams, load_model, main, read_config
from mpgpe.env import make_env, read_dataset_csv
from mpgpe.trainer import TrainConfig, fit_model

QUICK = ["--synthetic", "200", "--eval-episodes", "20"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(path):
    with open(path, newline="") as fh:
        return {r["key"]: r["value"] for r in csv.DictReader(fh)}


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data.csv"
    assert main(["collect", "--env", "chainwalk-gaussian", "--episodes", "20", "--seed", "1", "--out", str(out)]) == 0
    return out


# -- collect ---------------------------------------------------------------------


def test_collect_writes_one_row_per_transition(dataset, capsys):
    assert len(rows(dataset)) == 200
    assert os.path.exists(str(dataset) + ".manifest")


def test_collect_is_byte_identical_for_a_seed(tmp_path, dataset):
    again = tmp_path / "again.csv"
    main(["collect", "--env", "chainwalk-gaussian", "--episodes", "20", "--seed", "1", "--out", str(again)])
    assert again.read_bytes() == dataset.read_bytes()


def test_collect_zero_episodes_is_usage_error(tmp_path, capsys):
    out = tmp_path / "none.csv"
    assert main(["collect", "--episodes", "0", "--out", str(out)]) != 0
    assert not out.exists()
    assert "episodes" in capsys.readouterr().err
    assert os.listdir(tmp_path) == []


def test_unknown_env_rejected(tmp_path):
    assert main(["collect", "--env", "cartpole", "--out", str(tmp_path / "x.csv")]) != 0
    assert os.listdir(tmp_path) == []


def test_unwritable_path_fails(tmp_path):
    assert main(["collect", "--out", str(tmp_path / "missing" / "x.csv")]) == 1


# -- fit -------------------------------------------------------------------------


def test_fit_lscde_reload_reproduces_density(tmp_path, dataset):
    out = tmp_path / "m.lscde"
    assert main(["fit", "--model", "lscde", "--data", str(dataset), "--out", str(out)]) == 0
    model = load_model(str(out))
    assert isinstance(model, lscde.LscdeModel)
    rep = report(str(out) + ".report")
    assert float(rep["lambda"]) == model.lam
    assert any(k.startswith("cv[") for k in rep)
    # an in-memory fit on the same stream is the reference
    with open(dataset, newline="") as fh:
        data = read_dataset_csv(fh)
    ref, _, _ = fit_model(make_env("chainwalk_gaussian"), "lscde", data, TrainConfig(), _streams(0)[1])
    s = np.linspace(0, 10, 7)
    for si in s:
        for a in (-3.0, 0.0, 2.5):
            for sn in s:
                d1 = lscde.density(model, [si], [a], [sn])
                d0 = lscde.density(ref, [si], [a], [sn])
                assert d1 == pytest.approx(d0, rel=1e-12, abs=1e-300)


def test_fit_gp_report_has_argmax_evidence(tmp_path, dataset):
    out = tmp_path / "m.gp"
    assert main(["fit", "--model", "gp", "--data", str(dataset), "--out", str(out)]) == 0
    model = load_model(str(out))
    rep = report(str(out) + ".report")
    with open(dataset, newline="") as fh:
        data = read_dataset_csv(fh)
    grid = gp.HyperGrid().scaled(1.0, 1.0)
    best = max(gp.log_evidence(data.inputs, data.s_next, a, l, v) for a, l, v in grid)
    assert float(rep["log_evidence"]) == pytest.approx(best, rel=1e-12)
    assert (model.amplitude, model.noise_var) == (float(rep["amplitude"]), float(rep["noise_var"]))


@pytest.mark.parametrize("kind", ["lscde", "gp"])
def test_fit_single_row_dataset(tmp_path, kind):
    data = tmp_path / "one.csv"
    data.write_text("s0,a0,s_next0\n5,1,6.2\n")
    out = tmp_path / f"m.{kind}"
    assert main(["fit", "--model", kind, "--data", str(data), "--out", str(out)]) == 0
    assert load_model(str(out)).M == 1


def test_fit_malformed_csv_names_row(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("s0,a0,s_next0\n1,2,3\n4,oops,6\n")
    out = tmp_path / "m.lscde"
    assert main(["fit", "--data", str(data), "--out", str(out)]) != 0
    assert "row 3" in capsys.readouterr().err
    assert not out.exists()


def test_fit_dimension_mismatch(tmp_path, dataset):
    assert main(["fit", "--env", "arm2", "--data", str(dataset), "--out", str(tmp_path / "m")]) == 2


# -- train -----------------------------------------------------------------------


def test_train_mpgpe_curve_and_artifacts(tmp_path):
    out = tmp_path / "curve.csv"
    argv = ["train", "--algo", "mpgpe-lscde", "--env", "chainwalk-bimodal", "--budget", "20", "--iters", "20", "--seed", "7", "--out", str(out)]
    assert main(argv) == 0
    curve = rows(out)
    assert len(curve) == 20
    assert list(curve[0]) == ["iteration", "cumulative_real_samples", "mean_return", "std_error"]
    assert {r["cumulative_real_samples"] for r in curve} == {"20"}
    assert (tmp_path / "curve.csv.policy").exists()
    manifest = (tmp_path / "curve.csv.manifest").read_text()
    for key in ("command = train", "config_hash = ", "seed = 7", "started = ", "finished = ", "outputs = "):
        assert key in manifest


def test_train_iwpgpe_schedule_rows(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["train", "--algo", "iwpgpe", "--schedule", "5x4", "--updates-per-batch", "10", "--eval-episodes", "20", "--out", str(out)]) == 0
    assert [r["cumulative_real_samples"] for r in rows(out)] == ["5", "10", "15", "20"]


def test_train_zero_lr_keeps_policy(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["train", "--algo", "mpgpe-gp", "--iters", "4", "--lr", "0", "--eval-episodes", "200", "--synthetic", "200", "--out", str(out)]) == 0
    R = np.array([float(r["mean_return"]) for r in rows(out)])
    se = max(float(r["std_error"]) for r in rows(out))
    assert np.ptp(R) < 6 * se


def test_train_validation_errors_listed_together(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code = main(["train", "--algo", "iwpgpe", "--schedule", "3x5", "--lr", "-1", "--synthetic", "3", "--out", str(out)])
    assert code == 2
    err = capsys.readouterr().err
    assert "schedule 3x5" in err and "learning_rate" in err and "synthetic_per_update" in err
    assert os.listdir(tmp_path) == []


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# quick run\nalgo = mpgpe-gp\niters = 5\nlr = 0\nsynthetic = 200\neval-episodes = 10\n")
    assert read_config(str(conf))["eval_episodes"] == "10"
    out = tmp_path / "c.csv"
    assert main(["train", "--config", str(conf), "--iters", "2", "--out", str(out)]) == 0
    assert len(rows(out)) == 2
    assert "config.learning_rate = 0.0" in (tmp_path / "c.csv.manifest").read_text()


def test_config_unknown_key_rejected(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("learning_speed = 3\n")
    assert main(["train", "--config", str(conf), "--out", str(tmp_path / "c.csv")]) == 2
    assert "learning_speed" in capsys.readouterr().err


def test_config_can_supply_required_flags(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text(f"out = {tmp_path / 'd.csv'}\nepisodes = 2\n")
    assert main(["collect", "--config", str(conf)]) == 0
    assert len(rows(tmp_path / "d.csv")) == 20


# -- sweep -----------------------------------------------------------------------


def test_sweep_six_rows_and_deterministic(tmp_path):
    argv = ["sweep", "--runs", "1", "--updates-per-batch", "5", "--eval-episodes", "10", "--seed", "3"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    table = rows(a)
    assert [r["schedule"] for r in table] == ["1x20", "2x10", "4x5", "5x4", "10x2", "20x1"]
    assert a.read_bytes() == b.read_bytes()


def test_sweep_budget_mismatch_reported_per_schedule(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--schedules", "4x5,3x5,2x2", "--runs", "1", "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "3x5" in err and "2x2" in err and "4x5" not in err
    assert not out.exists()


# -- round trip ------------------------------------------------------------------


def test_collect_fit_train_evaluate_round_trip(tmp_path):
    d, m, c, e = (str(tmp_path / n) for n in ("d.csv", "m.lscde", "c.csv", "e.csv"))
    env = ["--env", "chainwalk-bimodal", "--seed", "5"]
    assert main(["collect", *env, "--episodes", "20", "--out", d]) == 0
    assert main(["fit", *env, "--data", d, "--out", m]) == 0
    assert main(["train", *env, "--model", m, "--iters", "3", *QUICK, "--out", c]) == 0
    assert main(["evaluate", *env, "--policy", c + ".policy", "--episodes", "50", "--out", e]) == 0
    (res,) = rows(e)
    assert 0.0 <= float(res["mean_return"]) <= 9.5618
    assert res["episodes"] == "50"


def test_train_from_dataset_matches_train_from_model_fit_on_it(tmp_path):
    # collect and fit use the same streams a single train would
    d, c1, c2 = (str(tmp_path / n) for n in ("d.csv", "c1.csv", "c2.csv"))
    assert main(["collect", "--seed", "4", "--episodes", "20", "--out", d]) == 0
    assert main(["train", "--seed", "4", "--iters", "2", *QUICK, "--out", c1]) == 0
    assert main(["train", "--seed", "4", "--iters", "2", *QUICK, "--data", d, "--out", c2]) == 0
    assert open(c1).read() == open(c2).read()


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.csv"
    proc = subprocess.run([sys.executable, "-m", "mpgpe", "collect", "--episodes", "1", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "10 transitions" in proc.stdout
