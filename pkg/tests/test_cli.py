"""End-to-end runs of the `knf` command line."""

import numpy as np
import pytest

from knf.cli import main
from knf.config import apply_overrides, default_config, load_config, make_knf_config
from knf.data import TimeSeries, save_csv, write_manifest
from knf.errors import ParseError
from knf.model import init_params
from knf.training import save_checkpoint

SMALL = """
# small end-to-end run
d = 2
k = 2
q = 8
h = 4
segments_per_call = 2
poly_order = 2
exp_count = 0
sin_count = 1
encoder_hidden_dim = 6
encoder_layers = 1
decoder_hidden_dim = 6
decoder_layers = 1
attention_dim = 4
feedback_hidden_dim = 6
feedback_layers = 1
revin = false
learning_rate = 1e-3
batch_size = 16
epochs = 2
patience = 0
stride = 4
synth_steps = 60
synth_train_count = 4
synth_test_count = 2
seed = 3
"""


@pytest.fixture()
def workspace(tmp_path, monkeypatch):
    monkeypatch.setenv("KNF_OUT", str(tmp_path / "out"))
    config = tmp_path / "run.cfg"
    config.write_text(
        SMALL + f"\ntrain_manifest = {tmp_path}/out/manifest.txt\n"
        f"test_manifest = {tmp_path}/out/manifest_test.txt\n"
        f"checkpoint = {tmp_path}/out/model.knf\n"
    )
    return tmp_path, config


def run(config, command, *extra):
    return main([command, "--config", str(config), *extra])


def test_full_pipeline(workspace, capsys):
    tmp_path, config = workspace
    out = tmp_path / "out"

    assert run(config, "synth") == 0
    csvs = sorted((out / "data").glob("*.csv"))
    assert len(csvs) == 6
    assert (out / "manifest.txt").exists()
    assert len([l for l in (out / "manifest_test.txt").read_text().splitlines()
                if l and not l.startswith("#")]) == 2

    with pytest.warns(UserWarning):  # val/test slices of 60-step series are short
        assert run(config, "train") == 0
    assert (out / "model.knf").exists()
    history = (out / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,rec,back,forw,total,val"
    assert len(history) == 3  # header + 2 epochs

    assert run(config, "forecast") == 0
    forecasts = sorted(out.glob("forecast_*.csv"))
    assert len(forecasts) == 2  # one per test series
    lines = forecasts[0].read_text().splitlines()
    assert lines[0] == "x0,x1"
    assert len(lines) == 1 + 4  # header + h rows

    assert run(config, "eval") == 0
    printed = capsys.readouterr().out.strip().splitlines()[-1]
    metric, value = printed.split(": ")
    assert metric == "smape"
    float(value)  # parseable score
    assert (out / "report.csv").exists()

    assert run(config, "spectral") == 0
    spectrum = (out / "spectrum.csv").read_text().splitlines()
    assert spectrum[0] == "index,re,im,modulus,residual"
    rc = load_config(config)
    assert len(spectrum) == 1 + make_knf_config(rc).m
    trace = (out / "eigenfunction_0.csv").read_text().splitlines()
    assert len(trace) == 1 + rc["q"]


def test_eval_persistence_needs_no_checkpoint(workspace, capsys):
    tmp_path, config = workspace
    run(config, "synth")
    assert run(config, "eval", "--override", "eval_model=persistence") == 0
    assert "smape:" in capsys.readouterr().out


def test_retrain_is_byte_identical(workspace, monkeypatch):
    tmp_path, config = workspace
    run(config, "synth")
    blobs = []
    for name in ("a", "b"):
        monkeypatch.setenv("KNF_OUT", str(tmp_path / name))
        # reuse the synthesized data from the original out dir
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(
            SMALL + f"\ntrain_manifest = {tmp_path}/out/manifest.txt\n"
        )
        with pytest.warns(UserWarning):
            assert run(cfg, "train") == 0
        blobs.append((tmp_path / name / "model.knf").read_bytes())
    assert blobs[0] == blobs[1]


def test_seed_flag_changes_the_data(workspace):
    tmp_path, config = workspace
    run(config, "synth")
    first = (tmp_path / "out" / "data" / "osc000.csv").read_text()
    run(config, "synth", "--seed", "99")
    second = (tmp_path / "out" / "data" / "osc000.csv").read_text()
    assert first != second


def test_unknown_config_key_exits_2(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("nonsense = 1\n")
    assert main(["train", "--config", str(config)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_bad_value_and_override_errors(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("epochs = soon\n")
    assert main(["train", "--config", str(config)]) == 2
    config.write_text("epochs = 1\n")
    assert main(["train", "--config", str(config), "--override", "h"]) == 2
    assert main(["train", "--config", str(config), "--override", "zz=1"]) == 2


def test_missing_manifest_exits_2(tmp_path, capsys):
    config = tmp_path / "run.cfg"
    config.write_text("epochs = 1\n")
    assert main(["train", "--config", str(config)]) == 2
    assert "train_manifest" in capsys.readouterr().err


def test_numeric_failure_exits_3(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("KNF_OUT", str(tmp_path / "out"))
    (tmp_path / "out").mkdir()
    # a series far outside the exp guard, with normalization disabled
    series = TimeSeries(values=np.full((20, 2), 1.0e8), id="huge")
    save_csv(series, tmp_path / "out" / "huge.csv")
    write_manifest(tmp_path / "out" / "manifest.txt", [("huge.csv", 1.0)])
    config = tmp_path / "run.cfg"
    config.write_text(
        SMALL + f"\ntrain_manifest = {tmp_path}/out/manifest.txt\n"
        f"checkpoint = {tmp_path}/out/model.knf\n"
        "exp_count = 1\n"
    )
    rc = load_config(config)
    save_checkpoint(
        init_params(make_knf_config(rc), np.random.default_rng(0)),
        tmp_path / "out" / "model.knf",
    )
    assert main(["forecast", "--config", str(config)]) == 3
    assert "numeric failure" in capsys.readouterr().err


def test_config_parser_details(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("d = 3  # inline comment\nrevin = off\n")
    rc = load_config(config)
    assert rc["d"] == 3
    assert rc["revin"] is False
    assert rc["q"] == 16  # untouched default
    config.write_text("d 3\n")
    with pytest.raises(ParseError, match="line 1"):
        load_config(config)
    rc = default_config()
    apply_overrides(rc, ["k=8", "val_metric=smape"])
    assert rc["k"] == 8 and rc["val_metric"] == "smape"
