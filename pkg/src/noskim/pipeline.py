"""Pipeline stages: synthesize data, train, attack, evaluate, render.

Artifacts live under ``output_dir``::

    data/train.jsonl, data/validation.jsonl, data/manifest.json
    model/vocab.txt, model/model.nskm, model/train_report.json
    attacks/<scenario>.jsonl            one row per (sample, budget)
    metrics/report.json, metrics/report.csv, metrics/correlation.csv
    report/curves_*.svg, report/report.csv

Each artifact records the full config hash plus the hash of the config slice
its stage depends on; a stage whose outputs already carry the current stage
hash is skipped, and downstream stages refuse inputs whose hash disagrees with
the current config unless ``force`` is set.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
from pathlib import Path

import numpy as np

from . import attack as atk
from .access import (BlackBoxOracle, GrayBoxOracle, TimingConfig, WhiteBoxOracle, correlation_report)
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .config import config_hash, stage_hashes
from .data import KEYWORDS, CorpusSpec, load_corpus, synth_data
from .errors import ArtifactError, UndefinedCorrelationError, UnstableMeasurementError
from .metrics import build_report, budget_row, emit_report, evaluate_pairs, write_csv, write_json
from .model import ModelConfig, TrainConfig, train
from .tokenizer import Tokenizer, Vocab

log = logging.getLogger(__name__)

RANDOM_SCENARIO = "Random-Char"


def _out(cfg) -> Path:
    return Path(cfg["output_dir"])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise ArtifactError(path, "missing; run the previous stage first")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(path, f"corrupt JSON: {exc}") from exc


def _check_hash(path, found, expected, force):
    if found != expected:
        if not force:
            raise ArtifactError(path, f"built for config {found}, current config is {expected} (use --force)")
        log.warning("%s: config hash %s differs from %s; continuing (forced)", path, found, expected)


def _provenance(cfg, stage):
    return {"config_hash": config_hash(cfg), "stage": stage, "stage_hash": stage_hashes(cfg)[stage]}


def corpus_spec(cfg) -> CorpusSpec:
    syn = cfg["data"]["synthetic"]
    return CorpusSpec(keywords=KEYWORDS[:syn["num_classes"]], seed=cfg["seed"], **syn)


# -- stages ---------------------------------------------------------------------

def cmd_synth_data(cfg, force=False) -> Path:
    out = _out(cfg) / "data"
    manifest_path = out / "manifest.json"
    prov = _provenance(cfg, "data")
    if not force and manifest_path.exists() and _read_json(manifest_path).get("stage_hash") == prov["stage_hash"]:
        log.info("data up to date in %s", out)
        return manifest_path
    data = cfg["data"]
    if data["train_path"] is not None:
        files = {"train": str(Path(data["train_path"]).resolve()),
                 "validation": str(Path(data["validation_path"]).resolve())}
        load_corpus(files["train"]), load_corpus(files["validation"])
    else:
        paths = synth_data(corpus_spec(cfg), out, cfg["model"]["max_seq_len"])
        files = {k: p.name for k, p in paths.items()}
    _write_json(manifest_path, {**prov, "files": files})
    return manifest_path


def _data_files(cfg, force):
    out = _out(cfg) / "data"
    manifest = _read_json(out / "manifest.json")
    _check_hash(out / "manifest.json", manifest.get("stage_hash"), stage_hashes(cfg)["data"], force)
    return {k: (out / v if not os.path.isabs(v) else Path(v)) for k, v in manifest["files"].items()}


def cmd_train(cfg, force=False) -> Path:
    out = _out(cfg) / "model"
    report_path = out / "train_report.json"
    prov = _provenance(cfg, "model")
    if not force and report_path.exists() and _read_json(report_path).get("stage_hash") == prov["stage_hash"]:
        log.info("model up to date in %s", out)
        return report_path
    files = _data_files(cfg, force)
    train_set, val_set = load_corpus(files["train"]), load_corpus(files["validation"])
    vocab = Vocab.build([t for t, _ in train_set], cfg["data"]["vocab_max_size"], cfg["data"]["vocab_min_freq"])
    mc = ModelConfig(vocab_size=len(vocab), num_classes=1 + max(y for _, y in train_set + val_set),
                     seed=cfg["seed"], **cfg["model"])
    tc = TrainConfig(seed=cfg["seed"], **cfg["train"])
    tokenizer = Tokenizer(vocab, mc.max_seq_len)
    model, rep = train(train_set, mc, tc, tokenizer, val_set)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    save_checkpoint(model, out / "model.nskm", vocab.hash(), prov)
    _write_json(report_path, {**prov, **rep.to_dict(), "vocab_size": len(vocab),
                              "train_samples": len(train_set), "validation_samples": len(val_set)})
    return report_path


def load_model(cfg, force=False):
    out = _out(cfg) / "model"
    vocab_path = out / "vocab.txt"
    if not vocab_path.exists():
        raise ArtifactError(vocab_path, "missing; run train first")
    vocab = Vocab.load(vocab_path)
    header = read_header(out / "model.nskm")
    _check_hash(out / "model.nskm", header["meta"].get("stage_hash"), stage_hashes(cfg)["model"], force)
    model, header = load_checkpoint(out / "model.nskm", vocab.hash())
    return model, Tokenizer(vocab, model.config.max_seq_len)


def eval_subset(cfg, force=False):
    files = _data_files(cfg, force)
    return load_corpus(files["validation"])[: int(cfg["attack"]["eval_size"])]


def make_oracle(scenario, model, tokenizer, cfg):
    access = atk.SCENARIOS[scenario][0]
    if access is atk.AccessLevel.WHITE_BOX:
        return WhiteBoxOracle(model, tokenizer)
    if access is atk.AccessLevel.GRAY_BOX:
        return GrayBoxOracle(model, tokenizer)
    return BlackBoxOracle(model, tokenizer, cfg["attack"]["black_box_mode"], TimingConfig(**cfg["timing"]))


def _attack_config(cfg, scenario, budget):
    a = cfg["attack"]
    return atk.scenario_config(scenario, budget=budget, top_k=a["top_k"], sim_threshold=a["sim_threshold"],
                               charset=a["charset"], max_words_tried_per_iter=a["max_words_tried_per_iter"])


def _rows_ok(path, prov, n_expected):
    if not path.exists():
        return False
    with open(path, encoding="utf-8") as f:
        rows = [json.loads(line) for line in f if line.strip()]
    return len(rows) == n_expected and all(r.get("stage_hash") == prov["stage_hash"] for r in rows)


def _write_rows(path, rows):
    tmp = path.with_suffix(".jsonl.tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    os.replace(tmp, path)


def cmd_attack(cfg, scenarios=None, budgets=None, force=False) -> list[Path]:
    """One JSONL per scenario with a row per (sample, budget).

    Every sample is attacked once at the largest requested budget; smaller
    budgets are prefixes of that run.
    """
    scenarios = list(scenarios or cfg["attack"]["scenarios"])
    budgets = sorted(budgets or cfg["attack"]["budgets"])
    for s in scenarios:
        atk.scenario_config(s)
    model, tokenizer = load_model(cfg, force)
    subset = eval_subset(cfg, force)
    out = _out(cfg) / "attacks"
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, "attack")
    todo = scenarios + ([RANDOM_SCENARIO] if cfg["attack"]["random_baseline"] else [])
    written = []
    for scenario in todo:
        path = out / f"{scenario}.jsonl"
        if not force and _rows_ok(path, prov, len(subset) * len(budgets)):
            log.info("%s up to date", path)
            written.append(path)
            continue
        rows = []
        oracle = None if scenario == RANDOM_SCENARIO else make_oracle(scenario, model, tokenizer, cfg)
        for idx, (text, label) in enumerate(subset):
            if oracle is None:
                rng = np.random.default_rng([cfg["seed"], idx])
                full = atk.random_char_attack(text, budgets[-1], rng, cfg["attack"]["charset"])
            else:
                full = atk.run_attack(text, _attack_config(cfg, scenario, budgets[-1]), oracle)
            full.gold_label, full.scenario = label, scenario
            for b in budgets:
                row = full.truncate(b).to_json()
                row.update(prov, sample_index=idx)
                rows.append(row)
        _write_rows(path, rows)
        log.info("wrote %d rows to %s", len(rows), path)
        written.append(path)
    return written


def load_attack_rows(path, expected_hash=None, force=False):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(path, "missing; run attack first")
    results = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                res = atk.AttackResult.from_json(row)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ArtifactError(path, f"line {lineno}: {exc}") from exc
            if expected_hash is not None:
                _check_hash(path, row.get("stage_hash"), expected_hash, force)
            results.append((row.get("sample_index"), res))
    return results


def _pair_dict(scenario, ops, idx, pair):
    return {"scenario": scenario, "ops": ops, "sample_index": idx, "similarity": pair.similarity,
            "label_preserved": pair.label_preserved, "rtr_before": pair.rtr_before,
            "rtr_after": pair.rtr_after, "queries": pair.queries, "wall_time": pair.wall_time}


def cmd_evaluate(cfg, force=False, wall_clock_correlation=True) -> Path:
    out = _out(cfg) / "metrics"
    model, tokenizer = load_model(cfg, force)
    subset = eval_subset(cfg, force)
    hashes = stage_hashes(cfg)
    attack_dir = _out(cfg) / "attacks"
    scenario_files = [attack_dir / f"{s}.jsonl" for s in list(atk.SCENARIOS) + [RANDOM_SCENARIO]]
    scenario_files = [p for p in scenario_files if p.exists()]
    if not scenario_files:
        raise ArtifactError(attack_dir, "no attack outputs; run attack first")
    bins = int(cfg["metrics"]["bins"])

    origin_results = [atk.AttackResult(t, t, gold_label=y) for t, y in subset]
    origin = evaluate_pairs(model, tokenizer, origin_results, bins)

    per_budget, baselines, pairs = [], [], []
    for path in scenario_files:
        scenario = path.stem
        by_budget: dict = {}
        for idx, res in load_attack_rows(path, hashes["attack"], force):
            by_budget.setdefault(res.budget, []).append((idx, res))
        for ops in sorted(by_budget):
            items = by_budget[ops]
            ev = evaluate_pairs(model, tokenizer, [r for _, r in items], bins)
            row = budget_row(scenario, ops, ev)
            (baselines if scenario == RANDOM_SCENARIO else per_budget).append(row)
            if scenario != RANDOM_SCENARIO:
                pairs.extend(_pair_dict(scenario, ops, idx, p) for (idx, _), p in zip(items, ev.pairs))

    texts = [t for t, _ in subset]
    extra = {
        "config_hash": config_hash(cfg),
        "stage_hash": hashes["evaluate"],
        "baselines": baselines,
        "model": {k: v for k, v in _read_json(_out(cfg) / "model" / "train_report.json").items()
                  if k in ("val_accuracy", "val_arr", "train_accuracy", "vocab_size", "train_samples")},
    }
    corr = None
    try:
        corr = correlation_report(model, tokenizer, texts, "counted")
        extra["correlation"] = {"mode": "counted", "r_sequence": corr.r_sequence, "r_token": corr.r_token,
                                "samples": len(texts)}
    except (ValueError, UndefinedCorrelationError) as exc:
        extra["correlation"] = {"mode": "counted", "error": str(exc)}
    if wall_clock_correlation and corr is not None:
        try:
            wc = correlation_report(model, tokenizer, texts, "wall_clock", TimingConfig(**cfg["timing"]))
            extra["correlation_wall_clock"] = {"r_sequence": wc.r_sequence, "r_token": wc.r_token,
                                              "skipped": wc.skipped}
        except (UnstableMeasurementError, UndefinedCorrelationError) as exc:
            extra["correlation_wall_clock"] = {"error": str(exc)}
    report = build_report({k: v for k, v in cfg.items() if k != "output_dir"}, origin, per_budget, pairs, extra)
    out.mkdir(parents=True, exist_ok=True)
    write_json(report, out / "report.json")
    write_csv(report, out / "report.csv")
    if corr is not None:
        corr.write_csv(out / "correlation.csv")
    return out / "report.json"


def cmd_report(cfg, force=False) -> list[Path]:
    src = _out(cfg) / "metrics" / "report.json"
    report = _read_json(src)
    _check_hash(src, report.get("stage_hash"), stage_hashes(cfg)["evaluate"], force)
    out = _out(cfg) / "report"
    paths = emit_report(report, out, ("csv", "svg"))
    shutil.copyfile(src, out / "report.json")
    return paths + [out / "report.json"]


def run_all(cfg, force=False) -> Path:
    cmd_synth_data(cfg, force)
    cmd_train(cfg, force)
    cmd_attack(cfg, force=force)
    path = cmd_evaluate(cfg, force)
    cmd_report(cfg, force)
    return path
