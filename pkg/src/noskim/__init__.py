"""Efficiency-robustness evaluation for token-skimming transformer classifiers."""

from .access import AccessLevel, BlackBoxOracle, EfficiencyReading, GrayBoxOracle, WhiteBoxOracle
from .attack import AttackConfig, AttackResult, run_attack, scenario_config
from .metrics import arr, crr
from .model import ModelConfig, SkimTransformer, TrainConfig, train
from .tokenizer import Tokenizer, Vocab

__version__ = "0.1.0"

__all__ = [
    "AccessLevel", "AttackConfig", "AttackResult", "BlackBoxOracle", "EfficiencyReading", "GrayBoxOracle",
    "ModelConfig", "SkimTransformer", "Tokenizer", "TrainConfig", "Vocab", "WhiteBoxOracle",
    "arr", "crr", "run_attack", "scenario_config", "train",
]
