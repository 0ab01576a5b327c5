import pandas as pd
import pytest

from hardhank import cli
from hardhank.analysis import IRF_VARIABLES
from hardhank.cli import CHECKPOINT_FILE, LOSS_REPORT_FILE, TRAINLOG_FILE, run_cli
from hardhank.errors import TrainingAborted
from hardhank.model import PenaltyWeights
from hardhank.run_config import CONFIG_FILE, RunConfig

TINY_CONFIG = """\
regime = hard
seed = 5
model.n_agents = 2
net.hidden_layers = 1
net.width = 4
train.iterations = 3
train.batch_size = 4
train.max_sims = 2
analyze.burn_in = 2
analyze.states = 2
analyze.stride = 1
analyze.horizons = 2
analyze.draws = 1
analyze.norm_periods = 5
analyze.periods = 3
analyze.points = 3
"""


def _write_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


def _train(tmp_path, name="run", *extra):
    out = tmp_path / name
    code = run_cli(["train", "--config", str(_write_config(tmp_path)), "--out", str(out), *extra])
    assert code == 0
    return out


def test_train_writes_outputs_and_prints_report(tmp_path, capsys):
    out = _train(tmp_path)

    for name in (CONFIG_FILE, CHECKPOINT_FILE, TRAINLOG_FILE, LOSS_REPORT_FILE):
        assert (out / name).is_file(), name
    assert len(pd.read_csv(out / TRAINLOG_FILE)) == 3
    assert "Loss Report (hard)" in capsys.readouterr().out


def test_train_is_reproducible(tmp_path):
    first = _train(tmp_path, "a")
    second = _train(tmp_path, "b")
    assert (first / TRAINLOG_FILE).read_bytes() == (second / TRAINLOG_FILE).read_bytes()
    assert (first / CHECKPOINT_FILE).read_bytes() == (second / CHECKPOINT_FILE).read_bytes()


def test_train_penalty_weight_flag_sets_every_weight(tmp_path):
    out = _train(tmp_path, "soft", "--regime", "soft", "--penalty-weight", "5", "--iterations", "2")
    config = RunConfig.read(out / CONFIG_FILE)
    assert config.train.penalty_weight == 5.0
    assert config.trainer_config().weights == PenaltyWeights(5.0, 5.0, 5.0)


def test_train_missing_config_exits_one(tmp_path, caplog):
    missing = tmp_path / "absent.cfg"
    assert run_cli(["train", "--config", str(missing), "--out", str(tmp_path / "run")]) == 1
    assert str(missing) in caplog.text


def test_train_numerical_abort_exits_two(tmp_path, monkeypatch):
    def aborted(*args, **kwargs):
        raise TrainingAborted("loss non-finite")

    monkeypatch.setattr(cli, "fit", aborted)
    code = run_cli(["train", "--config", str(_write_config(tmp_path)), "--out", str(tmp_path / "run")])
    assert code == 2


def test_analyze_diverge_needs_no_checkpoint(tmp_path):
    out = tmp_path / "fresh"
    code = run_cli(["analyze", "diverge", "--config", str(_write_config(tmp_path)), "--out", str(out)])
    assert code == 0
    frame = pd.read_csv(out / "diverge.csv")
    assert frame["period"].tolist() == [1, 2, 3]
    assert frame["net_bond_supply"].abs().max() <= 1e-12


def test_analyze_without_checkpoint_exits_one(tmp_path, caplog):
    out = tmp_path / "fresh"
    assert run_cli(["analyze", "mpc", "--config", str(_write_config(tmp_path)), "--out", str(out)]) == 1
    assert CHECKPOINT_FILE in caplog.text


def test_analyze_jobs_after_training(tmp_path):
    out = _train(tmp_path)

    assert run_cli(["analyze", "sweep", "--out", str(out)]) == 0
    sweep = pd.read_csv(out / "sweep.csv")
    assert len(sweep) == 3
    assert (sweep["below_bound_mass"] == 0.0).all()

    assert run_cli(["analyze", "mpc", "--out", str(out)]) == 0
    assert len(pd.read_csv(out / "mpc.csv")) == 2 * 2

    assert run_cli(["analyze", "dist", "--out", str(out)]) == 0
    assert "gini" in pd.read_csv(out / "dist.csv")["statistic"].tolist()

    assert run_cli(["analyze", "irf", "--out", str(out), "--shock", "mp"]) == 0
    irf = pd.read_csv(out / "irf.csv")
    assert set(irf["horizon"]) == {1, 2}
    assert len(irf[irf["split"] == "all"]) == 2 * len(IRF_VARIABLES)

    assert run_cli(["analyze", "aggdist", "--out", str(out)]) == 0
    assert set(pd.read_csv(out / "aggdist.csv")["sample"]) == {0, 1, 2}


def test_report_window_longer_than_log_exits_one(tmp_path):
    out = _train(tmp_path)
    assert run_cli(["report", str(out / TRAINLOG_FILE)]) == 1


def test_report_compares_labelled_logs(tmp_path, capsys):
    out = _train(tmp_path)
    capsys.readouterr()
    table = tmp_path / "report.csv"
    log = out / TRAINLOG_FILE
    code = run_cli(["report", f"Hard={log}", f"Again={log}", "--window", "3", "--out", str(table)])

    assert code == 0
    assert "Loss Comparison" in capsys.readouterr().out
    assert list(pd.read_csv(table).columns) == ["type", "component", "key", "Hard", "Again"]


def test_report_missing_log_exits_one(tmp_path):
    assert run_cli(["report", str(tmp_path / "absent.csv")]) == 1


@pytest.mark.parametrize("argv, expected", [(["--help"], 0), (["fly"], 1), (["analyze", "plot"], 1), ([], 1)])
def test_argument_errors(argv, expected):
    assert run_cli(argv) == expected
