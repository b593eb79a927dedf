"""Experiment configuration: one YAML (or JSON) file plus NOSKIM_* overrides.

Keys (all optional; defaults shown by ``noskim show-config``)::

    seed: 0                 # global seed: corpus, init, batching, baseline
    output_dir: runs/default
    data:
      train_path: null      # JSONL/TSV; when null a synthetic corpus is generated
      validation_path: null
      synthetic: {vocab_size, num_samples, validation_fraction, min_len, max_len,
                  num_classes, max_keywords, distractor_rate, zipf_exponent, noise_rate}
      vocab_max_size: 256
      vocab_min_freq: 2
    model: {num_layers, embed_dim, num_heads, ffn_dim, max_seq_len, skim_factor, gate_hidden_dim}
    train: {epochs, lr, batch_size, skim_lambda, weight_decay}
    attack:
      scenarios: [WhiteBox-Token, WhiteBox-Char, GrayBox-Char, BlackBox-Char]
      budgets: [1, 2, 3, 4, 5]
      eval_size: 200
      top_k: 32
      sim_threshold: 0.5
      charset: abcdefghijklmnopqrstuvwxyz0123456789
      max_words_tried_per_iter: 3
      black_box_mode: counted   # or wall_clock
      random_baseline: true
    timing: {warmup_runs: 1, measured_runs: 5}
    metrics: {bins: 1000}

Environment overrides: ``NOSKIM_SEED=3``, ``NOSKIM_TRAIN__EPOCHS=10``,
``NOSKIM_ATTACK__BUDGETS=[1,5]`` (double underscore separates levels; values
are parsed as YAML).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from .attack import DEFAULT_CHARSET, SCENARIOS
from .errors import ConfigError

ENV_PREFIX = "NOSKIM_"

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "data": {
        "train_path": None,
        "validation_path": None,
        "synthetic": {
            "vocab_size": 256,
            "num_samples": 2400,
            "validation_fraction": 1 / 6,
            "min_len": 8,
            "max_len": 20,
            "num_classes": 2,
            "max_keywords": 3,
            "distractor_rate": 0.3,
            "zipf_exponent": 1.0,
            "noise_rate": 0.0,
        },
        "vocab_max_size": 256,
        "vocab_min_freq": 2,
    },
    "model": {
        "num_layers": 4,
        "embed_dim": 32,
        "num_heads": 2,
        "ffn_dim": 64,
        "max_seq_len": 32,
        "skim_factor": 0.5,
        "gate_hidden_dim": 16,
    },
    "train": {"epochs": 20, "lr": 2e-3, "batch_size": 32, "skim_lambda": 1.0, "weight_decay": 0.0},
    "attack": {
        "scenarios": list(SCENARIOS),
        "budgets": [1, 2, 3, 4, 5],
        "eval_size": 200,
        "top_k": 32,
        "sim_threshold": 0.5,
        "charset": DEFAULT_CHARSET,
        "max_words_tried_per_iter": 3,
        "black_box_mode": "counted",
        "random_baseline": True,
    },
    "timing": {"warmup_runs": 1, "measured_runs": 5},
    "metrics": {"bins": 1000},
}

# keys whose value does not change any artifact
_NON_SEMANTIC = ("output_dir",)


def _merge(base: dict, over: dict, path=""):
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, path + k + ".")
        else:
            base[k] = v


def _env_overrides(env) -> dict:
    out: dict = {}
    for key, raw in sorted(env.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def load_config(path=None, env=None, overrides: dict | None = None) -> dict:
    """Defaults <- file <- environment <- explicit overrides, then validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, loaded)
    _merge(cfg, _env_overrides(os.environ if env is None else env))
    if overrides:
        _merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    budgets = cfg["attack"]["budgets"]
    if not budgets or list(budgets) != sorted(set(budgets)) or not all(1 <= int(b) <= 5 for b in budgets):
        raise ConfigError("attack.budgets must be a strictly ascending list within [1, 5]")
    for s in cfg["attack"]["scenarios"]:
        if s not in SCENARIOS:
            raise ConfigError(f"unknown scenario {s!r}; choose from {list(SCENARIOS)}")
    if cfg["attack"]["black_box_mode"] not in ("counted", "wall_clock"):
        raise ConfigError("attack.black_box_mode must be 'counted' or 'wall_clock'")
    data = cfg["data"]
    if (data["train_path"] is None) != (data["validation_path"] is None):
        raise ConfigError("give both data.train_path and data.validation_path, or neither")
    for key in ("train_path", "validation_path"):
        if data[key] is not None and not Path(data[key]).exists():
            raise ConfigError(f"data.{key} does not exist: {data[key]}")
    if int(cfg["attack"]["eval_size"]) < 1:
        raise ConfigError("attack.eval_size must be positive")


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def config_hash(cfg: dict) -> str:
    return _digest({k: v for k, v in cfg.items() if k not in _NON_SEMANTIC})


def stage_hashes(cfg: dict) -> dict:
    """Hashes of the config slice each pipeline stage depends on, chained."""
    data = _digest([cfg["seed"], cfg["data"], cfg["model"]["max_seq_len"]])
    model = _digest([data, cfg["model"], cfg["train"]])
    attack = _digest([model, cfg["attack"], cfg["timing"]])
    evaluate = _digest([attack, cfg["metrics"]])
    return {"data": data, "model": model, "attack": attack, "evaluate": evaluate}
