"""Config parsing and the end-to-end command-line surface.

CLI runs use a miniature dataset so the whole train/eval/sweep cycle takes
seconds; artifacts and exit codes are checked on disk.
"""

import json
import os

import numpy as np
import pytest

from precede.cli import main
from precede.config import ConfigError, config_from_dict, load_config

TINY = {
    "seed": 3,
    "train": {"epochs": 2, "batch_size": 16, "window_size": 20, "poa_horizon": 5},
    "solver": {"scheme": "rk4", "steps_per_window": 6, "knot_aligned": False},
    "model": {"hidden_dim": 6, "width_f": 6, "width_g": 6, "width_c": 12,
              "n_hidden_layers_f": 1, "n_hidden_layers_g": 1, "n_hidden_layers_c": 1},
    "synth": {"T": 2500, "n_channels": 2, "anomaly_count": 3, "precursor_len": 10,
              "min_len": 40, "max_len": 90},
}


def write_tiny_config(tmp_path, **extra):
    data = {**TINY, **extra}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return str(path)


# ---------------------------------------------------------------------------
# config loading


def test_defaults_round_trip():
    cfg = config_from_dict({})
    assert cfg.seed == 0
    snap = cfg.snapshot()
    assert snap["train"]["window_size"] == 30
    assert snap["solver"]["scheme"] == "rk4"


def test_json_and_toml_agree(tmp_path):
    jpath = tmp_path / "c.json"
    jpath.write_text(json.dumps({"seed": 9, "train": {"epochs": 7}}))
    tpath = tmp_path / "c.toml"
    tpath.write_text('seed = 9\n[train]\nepochs = 7\n')
    assert load_config(jpath) == load_config(tpath)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown key 'typo'"):
        config_from_dict({"typo": 1})
    with pytest.raises(ConfigError, match="train.epoch"):
        config_from_dict({"train": {"epoch": 5}})


def test_malformed_files_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    other = tmp_path / "c.yaml"
    other.write_text("a: 1")
    with pytest.raises(ConfigError):
        load_config(other)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"train_fraction": 1.5}})
    with pytest.raises(ConfigError):
        config_from_dict({"solver": {"scheme": "rk45"}})


# ---------------------------------------------------------------------------
# command-line surface


def run_cli(*argv):
    return main(list(argv))


def test_unknown_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"mystery": 1}))
    assert run_cli("synth", "--config", str(path)) == 2
    assert "config" in capsys.readouterr().err


def test_missing_data_exits_3(tmp_path):
    cfg = write_tiny_config(tmp_path)
    out = str(tmp_path / "out")
    assert run_cli("train", "--config", cfg, "--out", out,
                   "--data", str(tmp_path / "nope.csv")) == 3


def test_full_cycle_synth_train_eval(tmp_path, capsys):
    cfg = write_tiny_config(tmp_path)
    out = str(tmp_path / "out")
    assert run_cli("synth", "--config", cfg, "--out", out) == 0
    train_csv = os.path.join(out, "synthetic_train.csv")
    test_csv = os.path.join(out, "synthetic_test.csv")
    assert os.path.exists(train_csv) and os.path.exists(test_csv)

    assert run_cli("train", "--config", cfg, "--out", out, "--data", train_csv) == 0
    checkpoint = os.path.join(out, "checkpoint.json")
    assert os.path.exists(checkpoint)
    assert os.path.exists(os.path.join(out, "train_log.jsonl"))
    assert os.path.exists(os.path.join(out, "training_curves.png"))
    log_lines = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
    epochs = [l["epoch"] for l in log_lines if "epoch" in l]
    assert epochs == [0, 1]

    assert run_cli("eval", "--config", cfg, "--out", out,
                   "--checkpoint", checkpoint, "--data", test_csv) == 0
    for name in ("report_anomaly.json", "report_poa.json", "probabilities_anomaly.csv",
                 "probabilities_anomaly.png", "probabilities_poa.csv",
                 "probabilities_poa.png", "report.txt"):
        assert os.path.exists(os.path.join(out, name)), name
    report = json.loads(open(os.path.join(out, "report_anomaly.json")).read())
    assert report["config"]["seed"] == 3  # snapshot embedded
    assert 0.0 <= report["report"]["f1"] <= 1.0


def test_eval_supports_drop_flag(tmp_path):
    cfg = write_tiny_config(tmp_path)
    out = str(tmp_path / "out")
    assert run_cli("synth", "--config", cfg, "--out", out) == 0
    assert run_cli("train", "--config", cfg, "--out", out,
                   "--data", os.path.join(out, "synthetic_train.csv")) == 0
    assert run_cli("eval", "--config", cfg, "--out", out,
                   "--checkpoint", os.path.join(out, "checkpoint.json"),
                   "--data", os.path.join(out, "synthetic_test.csv"),
                   "--drop", "0.5") == 0


def test_train_epochs_zero_checkpoint_equals_initialization(tmp_path):
    from precede.model import init_parameters, load_checkpoint

    cfg_path = write_tiny_config(tmp_path, train={**TINY["train"], "epochs": 0})
    out = str(tmp_path / "out")
    assert run_cli("synth", "--config", cfg_path, "--out", out) == 0
    assert run_cli("train", "--config", cfg_path, "--out", out,
                   "--data", os.path.join(out, "synthetic_train.csv")) == 0
    params, _ = load_checkpoint(os.path.join(out, "checkpoint.json"))
    fresh = init_parameters(params.config, seed=3)
    for (n1, t1), (n2, t2) in zip(params.named_tensors(), fresh.named_tensors()):
        np.testing.assert_array_equal(t1.data, t2.data, err_msg=n1)


def test_augment_command(tmp_path):
    from precede.data import load_csv, save_csv, RawSequence

    rng = np.random.default_rng(0)
    src = tmp_path / "plain.csv"
    save_csv(src, RawSequence(times=np.arange(800.0), values=rng.normal(size=(800, 2))))
    cfg_path = write_tiny_config(tmp_path, augment={"gamma": 0.1, "min_len": 30, "max_len": 80})
    out = str(tmp_path / "out")
    assert run_cli("augment", "--config", cfg_path, "--out", out, "--data", str(src)) == 0
    augmented = load_csv(os.path.join(out, "augmented.csv"))
    assert augmented.n_obs > 800
    assert augmented.anomaly_flags.any()


def test_gradcheck_command_prints_pass(tmp_path, capsys):
    assert run_cli("gradcheck", "--out", str(tmp_path / "out")) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    payload = json.loads(out.splitlines()[0])
    assert payload["max_rel_err"] <= 1e-4


def test_sweep_emits_csv_row_per_output_length(tmp_path):
    cfg = write_tiny_config(tmp_path, train={**TINY["train"], "epochs": 1})
    out = str(tmp_path / "out")
    assert run_cli("synth", "--config", cfg, "--out", out) == 0
    assert run_cli("sweep", "--config", cfg, "--out", out,
                   "--data", os.path.join(out, "synthetic_train.csv"),
                   "--test-data", os.path.join(out, "synthetic_test.csv"),
                   "--p-values", "1,5,10,15,20") == 0
    rows = open(os.path.join(out, "sweep.csv")).read().strip().splitlines()
    assert rows[0] == "output_length,poa_f1"
    assert len(rows) == 6
    assert [int(r.split(",")[0]) for r in rows[1:]] == [1, 5, 10, 15, 20]
    assert os.path.exists(os.path.join(out, "sweep.png"))


def test_rerun_reproduces_metric_files_byte_identically(tmp_path):
    # identical config and seed, same output directory: the second round
    # overwrites the first, and every metric artifact must come back equal
    cfg = write_tiny_config(tmp_path)
    out = str(tmp_path / "out")

    def one_round():
        assert run_cli("synth", "--config", cfg, "--out", out) == 0
        assert run_cli("train", "--config", cfg, "--out", out,
                       "--data", os.path.join(out, "synthetic_train.csv")) == 0
        assert run_cli("eval", "--config", cfg, "--out", out,
                       "--checkpoint", os.path.join(out, "checkpoint.json"),
                       "--data", os.path.join(out, "synthetic_test.csv")) == 0
        reports = [open(os.path.join(out, n), "rb").read()
                   for n in ("report_anomaly.json", "report_poa.json")]
        checkpoint = open(os.path.join(out, "checkpoint.json"), "rb").read()
        return reports, checkpoint

    (rep1, ck1), (rep2, ck2) = one_round(), one_round()
    assert rep1 == rep2
    assert ck1 == ck2
