import json
import os
import subprocess
import sys

import pytest
import yaml

from noskim import pipeline
from noskim.cli import main
from noskim.config import DEFAULTS, config_hash, load_config, stage_hashes
from noskim.errors import ArtifactError, ConfigError

TINY = {
    "data": {"synthetic": {"num_samples": 240, "vocab_size": 96}, "vocab_max_size": 96},
    "model": {"num_layers": 2, "embed_dim": 16, "ffn_dim": 32},
    "train": {"epochs": 2},
    "attack": {"scenarios": ["WhiteBox-Token", "GrayBox-Char"], "budgets": [1, 2], "eval_size": 6},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg_path = out / "config.yaml"
    cfg_path.write_text(yaml.safe_dump({**TINY, "output_dir": str(out / "run")}))
    cfg = load_config(cfg_path, env={})
    pipeline.run_all(cfg)
    return cfg, cfg_path, out / "run"


def test_config_layers_and_env_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 3\ntrain:\n  epochs: 4\n")
    cfg = load_config(path, env={"NOSKIM_TRAIN__EPOCHS": "7", "NOSKIM_ATTACK__BUDGETS": "[1, 5]", "OTHER": "x"})
    assert cfg["seed"] == 3 and cfg["train"]["epochs"] == 7 and cfg["attack"]["budgets"] == [1, 5]
    assert load_config(path, env={}, overrides={"seed": 9})["seed"] == 9
    assert DEFAULTS["train"]["epochs"] == 20


@pytest.mark.parametrize("bad", [
    {"nope": 1},
    {"train": {"nope": 1}},
    {"attack": {"budgets": [3, 1]}},
    {"attack": {"budgets": [0, 1]}},
    {"attack": {"scenarios": ["Nope"]}},
    {"attack": {"black_box_mode": "gpu"}},
    {"data": {"train_path": "/does/not/exist", "validation_path": "/does/not/exist"}},
    {"data": {"train_path": "/does/not/exist"}},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        load_config(env={}, overrides=bad)


def test_config_hash_ignores_output_dir_and_chains_stages():
    a = load_config(env={})
    b = load_config(env={}, overrides={"output_dir": "elsewhere"})
    assert config_hash(a) == config_hash(b)
    c = load_config(env={}, overrides={"attack": {"top_k": 8}})
    ha, hc = stage_hashes(a), stage_hashes(c)
    assert ha["data"] == hc["data"] and ha["model"] == hc["model"]
    assert ha["attack"] != hc["attack"] and ha["evaluate"] != hc["evaluate"]
    d = load_config(env={}, overrides={"seed": 1})
    assert all(stage_hashes(d)[k] != ha[k] for k in ha)


def test_artifact_layout_and_provenance(tiny_run):
    cfg, _, out = tiny_run
    for rel in ("data/train.jsonl", "data/validation.jsonl", "data/manifest.json", "model/vocab.txt",
                "model/model.nskm", "model/train_report.json", "metrics/report.json", "metrics/report.csv",
                "report/curves_retention.svg", "report/curves_crr.svg", "report/curves_similarity.svg"):
        assert (out / rel).exists(), rel
    h = config_hash(cfg)
    assert json.loads((out / "data/manifest.json").read_text())["config_hash"] == h
    assert json.loads((out / "model/train_report.json").read_text())["config_hash"] == h
    assert json.loads((out / "metrics/report.json").read_text())["config_hash"] == h
    for scenario in ("WhiteBox-Token", "GrayBox-Char", "Random-Char"):
        rows = [json.loads(x) for x in (out / "attacks" / f"{scenario}.jsonl").read_text().splitlines()]
        assert len(rows) == 6 * 2
        assert all(r["config_hash"] == h for r in rows)
        assert sorted({r["budget"] for r in rows}) == [1, 2]


def test_report_contents(tiny_run):
    _, _, out = tiny_run
    report = json.loads((out / "metrics/report.json").read_text())
    assert {r["scenario"] for r in report["per_budget"]} == {"WhiteBox-Token", "GrayBox-Char"}
    assert [r["scenario"] for r in report["baselines"]] == ["Random-Char", "Random-Char"]
    assert len(report["pairs"]) == 2 * 2 * 6
    assert "output_dir" not in report["config"]
    # fewer than 30 samples: the correlation is reported as unavailable rather than failing the stage
    assert "error" in report["correlation"]


def test_stages_are_resumable(tiny_run):
    cfg, _, out = tiny_run
    files = [out / "model/model.nskm", out / "attacks/GrayBox-Char.jsonl", out / "data/train.jsonl"]
    before = [f.stat().st_mtime_ns for f in files]
    pipeline.cmd_synth_data(cfg)
    pipeline.cmd_train(cfg)
    pipeline.cmd_attack(cfg)
    assert [f.stat().st_mtime_ns for f in files] == before


def test_evaluate_is_repeatable(tiny_run):
    cfg, _, out = tiny_run
    first = (out / "metrics/report.json").read_bytes()
    pipeline.cmd_evaluate(cfg, wall_clock_correlation=False)
    assert (out / "metrics/report.json").read_bytes() == first


def test_hash_mismatch_is_refused(tiny_run):
    cfg, _, _ = tiny_run
    changed = {**cfg, "attack": {**cfg["attack"], "top_k": 5}}
    with pytest.raises(ArtifactError, match="--force"):
        pipeline.cmd_evaluate(changed)
    changed_model = {**cfg, "train": {**cfg["train"], "epochs": 3}}
    with pytest.raises(ArtifactError):
        pipeline.load_model(changed_model)
    model, _ = pipeline.load_model(changed_model, force=True)
    assert model.config.num_layers == 2


def test_corrupt_attack_rows_name_the_file(tiny_run, tmp_path):
    bad = tmp_path / "GrayBox-Char.jsonl"
    bad.write_text('{"original_text": "x"\n')
    with pytest.raises(ArtifactError, match=str(bad)):
        pipeline.load_attack_rows(bad)


def test_user_corpus_ingestion(tmp_path):
    train = tmp_path / "train.tsv"
    val = tmp_path / "val.tsv"
    train.write_text("".join(f"good movie number {i}\t1\nbad movie number {i}\t0\n" for i in range(40)))
    val.write_text("".join(f"good film {i}\t1\nbad film {i}\t0\n" for i in range(20)))
    cfg = load_config(env={}, overrides={**TINY, "output_dir": str(tmp_path / "run"),
                                         "data": {"train_path": str(train), "validation_path": str(val)}})
    pipeline.cmd_synth_data(cfg)
    pipeline.cmd_train(cfg)
    report = json.loads((tmp_path / "run/model/train_report.json").read_text())
    assert report["train_samples"] == 80 and report["validation_samples"] == 40


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["attack", "--budget", "9"])
    assert info.value.code == 1
    bad_cfg = tmp_path / "bad.yaml"
    bad_cfg.write_text("nope: 1\n")
    assert main(["train", "--config", str(bad_cfg)]) == 1
    assert main(["train", "--output-dir", str(tmp_path / "empty")]) == 2
    assert "manifest.json" in capsys.readouterr().err

    def boom(cfg, force=False):
        raise RuntimeError("kaput")

    monkeypatch.setattr(pipeline, "cmd_synth_data", boom)
    assert main(["synth-data", "--output-dir", str(tmp_path / "x")]) == 3


def test_cli_subcommands_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(yaml.safe_dump(TINY))
    args = ["--config", str(cfg_path), "--output-dir", str(tmp_path / "run")]
    assert main(["synth-data", *args]) == 0
    assert main(["train", *args]) == 0
    assert main(["attack", *args, "--scenario", "GrayBox-Char", "--budget", "1"]) == 0
    rows = (tmp_path / "run/attacks/GrayBox-Char.jsonl").read_text().splitlines()
    assert len(rows) == 6
    assert not (tmp_path / "run/attacks/WhiteBox-Token.jsonl").exists()
    assert main(["evaluate", *args, "--no-wall-clock"]) == 0
    assert main(["report", *args]) == 0
    assert (tmp_path / "run/report/curves_crr.svg").exists()
    capsys.readouterr()
    assert main(["show-config", *args, "--seed", "4"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert shown["config"]["seed"] == 4 and set(shown["stage_hashes"]) == {"data", "model", "attack", "evaluate"}


def test_module_entry_point():
    env = {**os.environ, "NOSKIM_SEED": "5"}
    out = subprocess.run([sys.executable, "-m", "noskim", "show-config"], capture_output=True, text=True, env=env)
    assert out.returncode == 0 and json.loads(out.stdout)["config"]["seed"] == 5
