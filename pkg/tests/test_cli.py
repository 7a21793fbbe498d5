import json

import numpy as np
import pytest

from sivq.cli import main
from sivq.corpus import load_wav, save_corpus, save_wav
from sivq.experiment import parse_config, report, run_experiment
from sivq.errors import ConfigError


TINY_CONFIG = """
[corpus]
kind = "synthetic"
n_phones = 5
n_speakers = 3
feature_dim = 16
noise_std = 0.05
transition_depth = 1.0
n_utterances = 16
phones_per_utterance = [3, 6]
seed = 11

[perturb]
seed = 1

[train]
k = 8
d = 8
hidden_dim = 12
n_layers = 2
n_frozen = 1
batch_seconds = 8.0
total_steps = {steps}
warmup_steps = 5
lr_peak = 3e-3
lr_final = 1e-5
seed = 5

[eval]
abx_triples = 60
probe_max_frames = 600
kmeans_runs = 1
seed = 2
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TINY_CONFIG.format(steps=25))
    return path


def test_parse_config_round_trip(tiny_config):
    config = parse_config(tiny_config)
    assert config.corpus_spec.n_phones == 5
    assert config.train.k == 8
    assert config.eval.abx_triples == 60


def test_parse_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[train]\nnot_a_key = 3\n")
    with pytest.raises(ConfigError, match="not_a_key"):
        parse_config(path)


def test_parse_config_rejects_bad_values(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[corpus]\nn_phones = 1\n")
    with pytest.raises(ConfigError, match="n_phones"):
        parse_config(path)


def test_run_experiment_outputs(tiny_config, tmp_path):
    run_dir = run_experiment(tiny_config, tmp_path / "out")
    assert (run_dir / "config.toml").exists()
    assert (run_dir / "checkpoint.npz").exists()
    assert (run_dir / "trainlog.csv").exists()
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["train"]["steps"] == 25
    assert 0 < metrics["units"]["pnmi"] <= 1
    assert set(metrics["abx"]) == {"raw", "trained"}
    assert metrics["probe"]["chance"] == pytest.approx(1 / 3)
    assert (run_dir / "plots" / "utilization.svg").exists()
    assert (run_dir / "plots" / "code_phone.svg").exists()
    # timing never enters metrics.json
    assert "wall" not in (run_dir / "metrics.json").read_text()


def test_run_repeats_bit_identical(tiny_config, tmp_path):
    d1 = run_experiment(tiny_config, tmp_path / "a")
    d2 = run_experiment(tiny_config, tmp_path / "b")
    assert (d1 / "metrics.json").read_bytes() == (d2 / "metrics.json").read_bytes()


def test_zero_step_run_has_baseline_metrics(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(TINY_CONFIG.format(steps=0).replace("warmup_steps = 5",
                                                        "warmup_steps = 0"))
    run_dir = run_experiment(path, tmp_path / "out")
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["train"]["steps"] == 0
    assert "kmeans_baseline" in metrics
    assert "probe" in metrics


def test_sweep_runs_and_combined_plot(tmp_path):
    path = tmp_path / "sweep.toml"
    path.write_text(TINY_CONFIG.format(steps=20).replace("k = 8", "k = [4, 8]"))
    run_dir = run_experiment(path, tmp_path / "out")
    assert (run_dir / "k0004" / "metrics.json").exists()
    assert (run_dir / "k0008" / "metrics.json").exists()
    assert (run_dir / "plots" / "pnmi_vs_k.svg").exists()
    doc = json.loads((run_dir / "metrics.json").read_text())
    assert doc["sweep"]["k"] == [4, 8]


def test_report_table(tiny_config, tmp_path):
    d1 = run_experiment(tiny_config, tmp_path / "a")
    table = report([d1], out_csv=tmp_path / "t.csv")
    assert "pnmi" in table
    lines = (tmp_path / "t.csv").read_text().strip().splitlines()
    assert len(lines) == 2

    with pytest.raises(Exception, match="missing metrics"):
        report([tmp_path / "nope"])


def test_cli_run_and_report(tiny_config, tmp_path, capsys):
    out = tmp_path / "cli_run"
    assert main(["run", "--config", str(tiny_config), "--out", str(out)]) == 0
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "cluster_purity" in text


def test_cli_exit_code_on_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nwat = 1\n")
    assert main(["run", "--config", str(bad)]) == 2


def test_cli_exit_code_on_stage_failure(tmp_path):
    # valid TOML but the referenced manifest disappears before the run
    assert main(["eval-units", "--manifest", str(tmp_path / "gone.json"),
                 "--out", str(tmp_path / "r.json")]) == 3


def test_cli_gen_corpus_and_eval(tmp_path, capsys):
    config = tmp_path / "run.toml"
    config.write_text(TINY_CONFIG.format(steps=5))
    corpus_dir = tmp_path / "corpus"
    assert main(["gen-corpus", "--config", str(config),
                 "--out", str(corpus_dir)]) == 0
    manifest = corpus_dir / "manifest.json"
    assert manifest.exists()

    out = tmp_path / "units.json"
    assert main(["eval-units", "--manifest", str(manifest), "--kmeans", "6",
                 "--kmeans-runs", "1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert 0 <= doc["pnmi"] <= 1

    abx_out = tmp_path / "abx.json"
    assert main(["eval-abx", "--manifest", str(manifest), "--triples", "40",
                 "--out", str(abx_out)]) == 0
    doc = json.loads(abx_out.read_text())
    assert set(doc) == {"within", "across"}

    probe_out = tmp_path / "probe.json"
    assert main(["probe", "--manifest", str(manifest),
                 "--out", str(probe_out)]) == 0
    doc = json.loads(probe_out.read_text())
    assert 0 <= doc["accuracy"] <= 1


def test_cli_train_subcommand(tiny_config, tmp_path):
    out = tmp_path / "trained"
    assert main(["train", "--config", str(tiny_config),
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 25
    assert (out / "checkpoint.npz").exists()


def test_cli_perturb_wav(tmp_path):
    t = np.arange(16000) / 16000.0
    wave = 0.3 * np.sin(2 * np.pi * 220.0 * t)
    src = tmp_path / "in.wav"
    save_wav(src, wave)
    dst = tmp_path / "out.wav"
    params_json = tmp_path / "params.json"
    assert main(["perturb", "--in", str(src), "--out", str(dst),
                 "--seed", "7", "--params-json", str(params_json)]) == 0
    out = load_wav(dst)
    assert out.size == 16000
    doc = json.loads(params_json.read_text())
    assert 0.5 <= doc["formant_ratio"] <= 2.0


def test_eval_units_with_checkpoint(tiny_config, tmp_path):
    run_dir = run_experiment(tiny_config, tmp_path / "run")
    config = parse_config(tiny_config)
    corpus = config.load_corpus()
    corpus_dir = tmp_path / "corpus"
    manifest = save_corpus(corpus, corpus_dir)
    out = tmp_path / "units.json"
    assert main(["eval-units", "--manifest", str(manifest),
                 "--checkpoint", str(run_dir / "checkpoint.npz"),
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert "utilization" in doc
