"""Config schema, coercion, and end-to-end command runs."""

import json
import os

import pytest

from crisp.cli import UsageError, echo_config, load_config, main
from crisp.features import N_FEATURES


SMALL_RUN = """
[data]
train_frac = 0.7

[synthetic]
days = 160

[train]
max_epochs = 1
batch_size = 16
patience = 2
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_cover_every_key():
    cfg = load_config(None)
    assert set(cfg) == {"data", "synthetic", "model", "train", "loss", "backtest"}
    assert cfg["data"]["window"] == 20
    assert cfg["data"]["horizon"] == 5
    assert cfg["model"]["n_features"] == N_FEATURES
    assert cfg["train"]["max_epochs"] == 200
    assert cfg["loss"]["sharpe"] == 0.4
    assert cfg["loss"]["turnover_target"] == 0.02


def test_overrides_are_coerced(tmp_path):
    path = write(tmp_path, """
[train]
batch_size = 8

[model]
static_graph = yes

[loss]
sharpe = 0.5
""")
    cfg = load_config(path)
    assert cfg["train"]["batch_size"] == 8
    assert cfg["model"]["static_graph"] is True
    assert cfg["loss"]["sharpe"] == 0.5
    # untouched keys keep their defaults
    assert cfg["train"]["patience"] == 15


@pytest.mark.parametrize("text,fragment", [
    ("[nonsense]\nx = 1\n", "unknown config section"),
    ("[train]\nwarmup = 5\n", "unknown config key"),
    ("[train]\nbatch_size = fast\n", "not a valid int"),
    ("[model]\nstatic_graph = maybe\n", "not a valid bool"),
])
def test_bad_config_rejected(tmp_path, text, fragment):
    path = write(tmp_path, text)
    with pytest.raises(UsageError, match=fragment):
        load_config(path)


def test_missing_config_file_rejected():
    with pytest.raises(UsageError, match="not found"):
        load_config("/no/such/file.ini")


def test_echo_round_trip(tmp_path):
    cfg = load_config(None)
    cfg["train"]["batch_size"] = 7
    cfg["loss"]["cvar_alpha"] = 0.1
    cfg["model"]["use_alloc_lstm"] = False
    path = echo_config(cfg, str(tmp_path))
    assert load_config(path) == cfg


def test_usage_error_exit_code(tmp_path, capsys):
    bad = write(tmp_path, "[nonsense]\nx = 1\n")
    code = main(["synth", "--config", bad, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_features_prints_roster(capsys):
    assert main(["features"]) == 0
    out = capsys.readouterr().out
    lines = out.strip().split("\n")
    assert lines[0] == "name,category,formula"
    assert len(lines) == 1 + N_FEATURES


def test_synth_writes_market(tmp_path, capsys):
    cfg = write(tmp_path, "[synthetic]\ndays = 30\n")
    out = tmp_path / "synth"
    assert main(["synth", "--config", cfg, "--out", str(out)]) == 0
    market = (out / "universe.csv").read_text().strip().split("\n")
    assert market[0] == "date,ticker,close,volume"
    n_days = len((out / "regimes.csv").read_text().strip().split("\n")) - 1
    assert n_days == 30
    assert len(market) == 1 + 13 * 30
    assert (out / "resolved_config.ini").is_file()
    assert "13 tickers" in capsys.readouterr().out


def test_unknown_variant_and_missing_checkpoint(tmp_path):
    assert main(["train", "--variant", "bogus", "--out", str(tmp_path)]) == 2
    assert main(["backtest", "--checkpoint", str(tmp_path / "nope.bin"),
                 "--out", str(tmp_path)]) == 2


def test_train_then_backtest_round_trip(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_RUN)
    train_out = tmp_path / "train"
    assert main(["train", "--config", cfg, "--out", str(train_out)]) == 0
    assert (train_out / "checkpoint.bin").is_file()
    log = (train_out / "training_log.csv").read_text().strip().split("\n")
    assert log[0].startswith("epoch,")
    assert len(log) == 2        # one epoch

    bt_out = tmp_path / "bt"
    assert main(["backtest", "--config", cfg, "--out", str(bt_out),
                 "--checkpoint", str(train_out / "checkpoint.bin")]) == 0
    summary = json.loads((bt_out / "metrics.json").read_text())
    assert set(summary["strategies"]) == {
        "CRISP", "Equal Weight", "Mean-Variance", "Risk Parity"}
    for entry in summary["strategies"].values():
        assert set(entry) >= {"sharpe", "sortino", "max_drawdown",
                              "infeasible_periods"}
    assert summary["periods"] * 5 == summary["test_days"]
    assert (bt_out / "equity_crisp.csv").is_file()
    assert (bt_out / "weights_equal_weight.csv").is_file()
    assert (bt_out / "attention_crisp.csv").is_file()
    report = json.loads((bt_out / "attention_summary_crisp.json").read_text())
    assert 0.0 <= report["defensive_share"] <= 1.0
    capsys.readouterr()


def test_ablate_only_random_selection(tmp_path, capsys):
    cfg = write(tmp_path, SMALL_RUN)
    out = tmp_path / "ab"
    assert main(["ablate", "--config", cfg, "--out", str(out),
                 "--only", "Random Selection"]) == 0
    table = (out / "ablation.csv").read_text().strip().split("\n")
    assert len(table) == 2
    assert table[1].startswith('"Random Selection",')
    assert main(["ablate", "--only", "Nonsense", "--out", str(out)]) == 2
    capsys.readouterr()
