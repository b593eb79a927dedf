"""Efficiency oracles for the three access scenarios.

* white box: remaining-token ratio, full traces, embedding gradients, vocabulary;
* gray box: the remaining-token ratio only;
* black box: token-level inference time only, either measured on the wall
  clock or read from a deterministic multiply-accumulate counter.

Gray- and black-box oracles close over the model instead of storing it, so
their public surface carries nothing but ``query``/``query_many`` and the
query counter.
"""

from __future__ import annotations

import csv
import json
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import UndefinedCorrelationError, UnstableMeasurementError
from .model import ForwardTrace, ModelConfig, SkimTransformer, remaining_token_ratio
from .tokenizer import Tokenizer, TokenSequence, surrogate_len

BATCH = 512


class AccessLevel(str, Enum):
    WHITE_BOX = "white_box"
    GRAY_BOX = "gray_box"
    BLACK_BOX = "black_box"


class ReadingKind(str, Enum):
    RATIO = "ratio"
    TOKEN_TIME = "token_time"
    COUNTED_COST = "counted_cost"


_KINDS = {
    AccessLevel.WHITE_BOX: {ReadingKind.RATIO},
    AccessLevel.GRAY_BOX: {ReadingKind.RATIO},
    AccessLevel.BLACK_BOX: {ReadingKind.TOKEN_TIME, ReadingKind.COUNTED_COST},
}


@dataclass(frozen=True)
class EfficiencyReading:
    value: float
    kind: ReadingKind
    queries_consumed: int

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"efficiency reading must be non-negative, got {self.value}")

    def to_json(self) -> dict:
        return {"value": self.value, "kind": self.kind.value, "queries": self.queries_consumed}


@dataclass(frozen=True)
class TimingConfig:
    warmup_runs: int = 1
    measured_runs: int = 5
    max_spread: float = 0.5

    def __post_init__(self):
        if self.warmup_runs < 1:
            raise ValueError("warmup_runs must be >= 1")
        if self.measured_runs < 3 or self.measured_runs % 2 == 0:
            raise ValueError("measured_runs must be odd and >= 3")

    @property
    def forwards_per_query(self) -> int:
        return self.warmup_runs + self.measured_runs


class CostCounter:
    """Multiply-accumulate count of one forward pass.

    Every retained (token, layer) slot pays for the QKV/output projections, a
    dense attention row over the ``n`` key buffer and the feed-forward block;
    gates, embeddings and the classifier head are paid regardless of skimming.
    The count is therefore ``slot_cost(n) * retained_slots + overhead(n)``.
    """

    def __init__(self, config: ModelConfig):
        self.config = config

    def slot_cost(self, n: int) -> int:
        m, f = self.config.embed_dim, self.config.ffn_dim
        return 4 * m * m + 2 * m * f + 2 * m * n

    def overhead(self, n: int) -> int:
        c = self.config
        gate = c.embed_dim * c.gate_hidden_dim + c.gate_hidden_dim
        return c.num_layers * n * gate + n * c.embed_dim + c.embed_dim * c.num_classes

    def cost(self, trace: ForwardTrace) -> int:
        n = trace.hard_masks.shape[1]
        return self.slot_cost(n) * trace.retained_slots + self.overhead(n)


class EfficiencyOracle:
    access: AccessLevel

    def __init__(self):
        self._queries = 0
        self._count_lock = threading.Lock()

    @property
    def queries(self) -> int:
        return self._queries

    def _charge(self, n: int) -> None:
        with self._count_lock:
            self._queries += n

    def query(self, text: str) -> EfficiencyReading:
        return self.query_many([text])[0]

    def query_many(self, texts: Sequence[str]) -> list[EfficiencyReading]:
        raise NotImplementedError


def _batched_traces(model, seqs):
    out = []
    for i in range(0, len(seqs), BATCH):
        out.extend(model.forward_many(seqs[i:i + BATCH]))
    return out


class WhiteBoxOracle(EfficiencyOracle):
    """Full access: ratio readings plus traces, gradients, vocabulary and embeddings."""

    access = AccessLevel.WHITE_BOX

    def __init__(self, model: SkimTransformer, tokenizer: Tokenizer):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer

    @property
    def vocab(self):
        return self.tokenizer.vocab

    def tokenize(self, text: str) -> TokenSequence:
        return self.tokenizer.tokenize(text)

    def query_many(self, texts):
        seqs = self.tokenizer.tokenize_many(texts)
        traces = _batched_traces(self.model, seqs)
        self._charge(len(texts))
        return [EfficiencyReading(remaining_token_ratio(t), ReadingKind.RATIO, 1) for t in traces]

    def trace(self, text: str, retain: str = "masks") -> ForwardTrace:
        self._charge(1)
        return self.model.trace(self.tokenizer.tokenize(text), retain)

    def gradient(self, text: str):
        """(token sequence, n x m gradient matrix, ratio reading) from one forward/backward."""
        seq = self.tokenizer.tokenize(text)
        grads, traces = self.model.grad_wrt_embeddings_many([seq])
        self._charge(1)
        return seq, grads[0], EfficiencyReading(remaining_token_ratio(traces[0]), ReadingKind.RATIO, 1)

    def embedding_table(self) -> np.ndarray:
        return self.model.embedding_table()


class GrayBoxOracle(EfficiencyOracle):
    """Remaining-token ratio only."""

    access = AccessLevel.GRAY_BOX

    def __init__(self, model: SkimTransformer, tokenizer: Tokenizer):
        super().__init__()

        def measure(texts):
            return [remaining_token_ratio(t) for t in _batched_traces(model, tokenizer.tokenize_many(texts))]

        self._measure: Callable[[Sequence[str]], list[float]] = measure

    def query_many(self, texts):
        values = self._measure(list(texts))
        self._charge(len(texts))
        return [EfficiencyReading(v, ReadingKind.RATIO, 1) for v in values]


class BlackBoxOracle(EfficiencyOracle):
    """Token-level inference time: forward time (or counted cost) per surrogate token."""

    access = AccessLevel.BLACK_BOX
    _timing_lock = threading.Lock()

    def __init__(self, model: SkimTransformer, tokenizer: Tokenizer, mode: str = "counted",
                 timing: TimingConfig | None = None):
        super().__init__()
        if mode not in ("counted", "wall_clock"):
            raise ValueError(f"unknown black-box mode {mode!r}")
        self.mode = mode
        self.timing = timing or TimingConfig()
        counter = CostCounter(model.config)
        timing_cfg = self.timing

        def counted(texts):
            return [float(counter.cost(t)) for t in _batched_traces(model, tokenizer.tokenize_many(texts))]

        def timed(text):
            seq = tokenizer.tokenize(text)
            with BlackBoxOracle._timing_lock:
                for _ in range(timing_cfg.warmup_runs):
                    model.forward_many([seq])
                runs = []
                for _ in range(timing_cfg.measured_runs):
                    t0 = time.perf_counter()
                    model.forward_many([seq])
                    runs.append(time.perf_counter() - t0)
            med = statistics.median(runs)
            if med <= 0 or max(runs) - min(runs) > timing_cfg.max_spread * med:
                raise UnstableMeasurementError(
                    f"timing spread {max(runs) - min(runs):.3g}s exceeds {timing_cfg.max_spread:.0%} of "
                    f"median {med:.3g}s; use counted mode")
            return med

        self._counted = counted
        self._timed = timed

    def sequence_costs(self, texts: Sequence[str]) -> list[float]:
        """Sequence-level time (or count) for each text."""
        if self.mode == "counted":
            out = self._counted(list(texts))
            self._charge(len(texts))
            return out
        out = []
        for t in texts:
            try:
                out.append(self._timed(t))
            finally:
                self._charge(self.timing.forwards_per_query)
        return out

    def query_many(self, texts):
        texts = list(texts)
        costs = self.sequence_costs(texts)
        kind = ReadingKind.COUNTED_COST if self.mode == "counted" else ReadingKind.TOKEN_TIME
        per = 1 if self.mode == "counted" else self.timing.forwards_per_query
        return [EfficiencyReading(c / surrogate_len(t), kind, per) for c, t in zip(costs, texts)]


def reading_kinds(access: AccessLevel) -> set:
    return set(_KINDS[access])


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.std() == 0 or y.std() == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class CorrelationReport:
    mode: str
    r_sequence: float
    r_token: float
    rows: list = field(default_factory=list)
    skipped: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["ratio", "seq_time", "tok_time"])
            w.writerows(self.rows)


def correlation_report(model: SkimTransformer, tokenizer: Tokenizer, texts: Sequence[str],
                       mode: str = "counted", timing: TimingConfig | None = None) -> CorrelationReport:
    """Pearson r of the remaining-token ratio against sequence-level and token-level cost."""
    texts = list(texts)
    if len(texts) < 30:
        raise ValueError("correlation_report needs at least 30 samples")
    ratios = [remaining_token_ratio(t) for t in _batched_traces(model, tokenizer.tokenize_many(texts))]
    oracle = BlackBoxOracle(model, tokenizer, mode, timing)
    if mode == "counted":
        seq = oracle.sequence_costs(texts)
    else:
        # wall-clock: samples whose repeated timings disagree are dropped, not fatal
        seq = []
        for t in texts:
            try:
                seq.extend(oracle.sequence_costs([t]))
            except UnstableMeasurementError:
                seq.append(None)
    keep = [i for i, s in enumerate(seq) if s is not None]
    if len(keep) < 30:
        raise UnstableMeasurementError(f"only {len(keep)} of {len(texts)} samples timed stably")
    ratios = [ratios[i] for i in keep]
    seq = [seq[i] for i in keep]
    tok = [seq[j] / surrogate_len(texts[i]) for j, i in enumerate(keep)]
    rows = [[r, s, k] for r, s, k in zip(ratios, seq, tok)]
    return CorrelationReport(mode, pearson(ratios, seq), pearson(ratios, tok), rows, len(texts) - len(keep))


def reading_to_json(reading: EfficiencyReading) -> str:
    return json.dumps(reading.to_json(), sort_keys=True)
