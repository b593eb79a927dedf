"""Greedy search for single-word mutations that keep more tokens alive.

Each iteration ranks the words of the current text, builds a candidate set
for the top-ranked word and keeps the candidate with the largest efficiency
reading, provided it strictly beats the current reading. If none does, the
next-ranked words are tried (up to ``max_words_tried_per_iter``); words that
failed are frozen for the rest of the attack and the iteration is recorded as
a no-op if nothing improves.

Since one iteration never looks at the total budget, the first ``k``
iterations of a budget-5 run are exactly the budget-``k`` attack;
:meth:`AttackResult.truncate` exploits this.
"""

from __future__ import annotations

import logging
import string
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .access import AccessLevel, EfficiencyOracle, EfficiencyReading, WhiteBoxOracle
from .errors import ConfigError, EmptyTextError, NoEmbeddingError, NotRankableError
from .tokenizer import PUNCT, split_word, words_of

log = logging.getLogger(__name__)

DEFAULT_CHARSET = string.ascii_lowercase + string.digits


class Ranking(str, Enum):
    GRADIENT = "gradient"
    MASK = "mask"


class CandidateMode(str, Enum):
    WORD = "word_level"
    CHAR = "char_level"


@dataclass(frozen=True)
class AttackConfig:
    budget: int = 5
    scenario: AccessLevel = AccessLevel.WHITE_BOX
    ranking: Ranking = Ranking.GRADIENT
    candidates: CandidateMode = CandidateMode.CHAR
    top_k: int = 32
    sim_threshold: float = 0.5
    charset: str = DEFAULT_CHARSET
    max_words_tried_per_iter: int = 3

    def __post_init__(self):
        object.__setattr__(self, "scenario", AccessLevel(self.scenario))
        object.__setattr__(self, "ranking", Ranking(self.ranking))
        object.__setattr__(self, "candidates", CandidateMode(self.candidates))
        if not 0 <= self.budget <= 5:
            raise ConfigError("budget must lie in [0, 5]")
        needs_white = self.ranking is Ranking.GRADIENT or self.candidates is CandidateMode.WORD
        if needs_white and self.scenario is not AccessLevel.WHITE_BOX:
            raise ConfigError("gradient ranking and word-level candidates need white-box access")
        if self.top_k < 1 or self.max_words_tried_per_iter < 1:
            raise ConfigError("top_k and max_words_tried_per_iter must be positive")
        if not self.charset or len(set(self.charset)) != len(self.charset):
            raise ConfigError("charset must be non-empty without repeated characters")


# Table-row presets: name -> (access, ranking, candidates)
SCENARIOS = {
    "WhiteBox-Token": (AccessLevel.WHITE_BOX, Ranking.GRADIENT, CandidateMode.WORD),
    "WhiteBox-Char": (AccessLevel.WHITE_BOX, Ranking.GRADIENT, CandidateMode.CHAR),
    "GrayBox-Char": (AccessLevel.GRAY_BOX, Ranking.MASK, CandidateMode.CHAR),
    "BlackBox-Char": (AccessLevel.BLACK_BOX, Ranking.MASK, CandidateMode.CHAR),
}


def scenario_config(name: str, **overrides) -> AttackConfig:
    try:
        access, ranking, cands = SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return AttackConfig(scenario=access, ranking=ranking, candidates=cands, **overrides)


@dataclass(frozen=True)
class Substitute:
    word_index: int
    new_word: str
    type: str = "substitute"


@dataclass(frozen=True)
class InsertChar:
    word_index: int
    char_position: int
    char: str
    type: str = "insert_char"


Edit = Union[Substitute, InsertChar]


def edit_from_json(d: dict) -> Edit:
    d = dict(d)
    kind = d.pop("type")
    return Substitute(**d) if kind == "substitute" else InsertChar(**d)


@dataclass(frozen=True)
class Candidate:
    mutated_word: str
    edit: Edit
    score_hint: float | None = None


def apply_candidate(words: Sequence[str], cand: Candidate) -> list[str]:
    out = list(words)
    out[cand.edit.word_index] = cand.mutated_word
    return out


def apply_edit(words: Sequence[str], edit: Edit) -> list[str]:
    out = list(words)
    w = out[edit.word_index]
    if isinstance(edit, InsertChar):
        if not 0 <= edit.char_position <= len(w):
            raise ValueError(f"insert position {edit.char_position} outside word {w!r}")
        out[edit.word_index] = w[:edit.char_position] + edit.char + w[edit.char_position:]
    else:
        lead, _, trail = split_word(w)
        out[edit.word_index] = lead + edit.new_word + trail
    return out


@dataclass
class IterationRecord:
    chosen_word_index: int | None
    chosen_candidate: Candidate | None
    eff_before: float | None
    eff_after: float | None
    queries: int = 0
    wall_time: float = 0.0


@dataclass
class AttackResult:
    original_text: str
    adversarial_text: str
    per_iteration: list = field(default_factory=list)
    total_queries: int = 0
    wall_time: float = 0.0
    similarity: float | None = None
    original_label: int | None = None
    adversarial_label: int | None = None
    gold_label: int | None = None
    scenario: str | None = None
    budget: int | None = None

    @property
    def edits(self) -> list:
        return [r.chosen_candidate.edit for r in self.per_iteration if r.chosen_candidate is not None]

    def truncate(self, k: int) -> "AttackResult":
        """The same attack stopped after ``k`` iterations."""
        iters = self.per_iteration[:k]
        words = words_of(self.original_text)
        for r in iters:
            if r.chosen_candidate is not None:
                words = apply_edit(words, r.chosen_candidate.edit)
        last = iters[-1] if iters else None
        return replace(self, adversarial_text=" ".join(words), per_iteration=list(iters),
                       total_queries=last.queries if last else 0,
                       wall_time=last.wall_time if last else 0.0,
                       similarity=None, adversarial_label=None, budget=k)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "AttackResult":
        d = dict(d)
        iters = []
        for r in d.pop("per_iteration", []):
            c = r.get("chosen_candidate")
            if c is not None:
                c = Candidate(c["mutated_word"], edit_from_json(c["edit"]), c.get("score_hint"))
            iters.append(IterationRecord(r["chosen_word_index"], c, r["eff_before"], r["eff_after"],
                                         r.get("queries", 0), r.get("wall_time", 0.0)))
        known = {f for f in cls.__dataclass_fields__}
        return cls(per_iteration=iters, **{k: v for k, v in d.items() if k in known})


# -- step 1: word importance ranking -----------------------------------------

def word_scores_from_gradient(seq, grad: np.ndarray) -> np.ndarray:
    """Per-word sum of all gradient entries of the word's tokens; words cut off by truncation get -inf."""
    token_scores = grad.sum(axis=1)
    scores = np.zeros(seq.num_words)
    seen = np.zeros(seq.num_words, dtype=bool)
    for k, w in enumerate(seq.word_spans):
        if w >= 0:
            scores[w] += token_scores[k]
            seen[w] = True
    scores[~seen] = -np.inf
    return scores


def rank_gradient(text: str, oracle: WhiteBoxOracle):
    """Gradient importance per word. Returns (scores, baseline reading, (seq, grad))."""
    if oracle.access is not AccessLevel.WHITE_BOX:
        raise ConfigError("gradient ranking needs a white-box oracle")
    seq, grad, base = oracle.gradient(text)
    return word_scores_from_gradient(seq, grad), base, (seq, grad)


def rank_mask(text: str, oracle: EfficiencyOracle):
    """Deletion importance: L(text without word i) - L(text). Costs n + 1 queries."""
    words = words_of(text)
    if len(words) < 2:
        raise NotRankableError("mask ranking needs at least two words")
    variants = [" ".join(words)] + [" ".join(words[:i] + words[i + 1:]) for i in range(len(words))]
    readings = oracle.query_many(variants)
    base = readings[0]
    return np.array([r.value - base.value for r in readings[1:]]), base


# -- step 2: candidate generation ---------------------------------------------

def _core_token(seq, word_index, vocab):
    for k in seq.tokens_of_word(word_index):
        tok = vocab.token(seq.ids[k])
        if not (len(tok) == 1 and tok in PUNCT):
            return k
    return None


def candidates_word(text: str, word_index: int, oracle: WhiteBoxOracle, top_k: int = 32,
                    sim_threshold: float = 0.5, gradient=None) -> list[Candidate]:
    """Vocabulary substitutions ranked by the first-order efficiency gain.

    ``gradient`` may carry a ``(seq, grad)`` pair already computed for ``text``.
    """
    if oracle.access is not AccessLevel.WHITE_BOX:
        raise ConfigError("word-level candidates need a white-box oracle")
    vocab = oracle.vocab
    seq, grad = gradient if gradient is not None else oracle.gradient(text)[:2]
    k = _core_token(seq, word_index, vocab)
    if k is None or seq.ids[k] == 1:
        raise NoEmbeddingError(f"word {word_index} has no in-vocabulary token")
    sel = seq.ids[k]
    table = oracle.embedding_table()
    ids = np.array([i for i in vocab.content_ids() if i != sel], dtype=np.int64)
    gains = (table[ids] - table[sel]) @ grad[k]
    order = np.lexsort((ids, -gains))[:top_k]
    norms = np.linalg.norm(table, axis=1)
    lead, _, trail = split_word(words_of(text)[word_index])
    out = []
    for j in order:
        tid, gain = int(ids[j]), float(gains[j])
        cos = float(table[tid] @ table[sel] / (norms[tid] * norms[sel]))
        if gain <= 0 or cos < sim_threshold:
            continue
        new = vocab.token(tid)
        out.append(Candidate(lead + new + trail, Substitute(word_index, new), gain))
    return out


def candidates_char(word: str, word_index: int = 0, charset: str = DEFAULT_CHARSET) -> list[Candidate]:
    """Every single-character insertion, position-major then charset order."""
    if not word:
        raise EmptyTextError("cannot perturb an empty word")
    return [Candidate(word[:p] + c + word[p:], InsertChar(word_index, p, c))
            for p in range(len(word) + 1) for c in charset]


# -- step 3: best candidate search --------------------------------------------

def best_candidate(text: str, word_index: int, candidates: Sequence[Candidate],
                   oracle: EfficiencyOracle, current: float | None = None):
    """Candidate with the largest reading strictly above ``current``, or None.

    ``current`` defaults to a fresh reading of ``text``. Ties go to the
    earliest candidate. Candidates whose evaluation fails are skipped.
    """
    if not candidates:
        raise ValueError("empty candidate set")
    words = words_of(text)
    if current is None:
        current = oracle.query(text).value
    texts = [" ".join(apply_candidate(words, c)) for c in candidates]
    try:
        readings = oracle.query_many(texts)
    except Exception:  # noqa: BLE001 - isolate the failing candidates
        readings = []
        for t in texts:
            try:
                readings.append(oracle.query(t))
            except Exception as exc:  # noqa: BLE001
                log.warning("candidate evaluation failed: %s", exc)
                readings.append(None)
    best, best_val = None, current
    for cand, r in zip(candidates, readings):
        if r is not None and r.value > best_val:
            best, best_val = (cand, r), r.value
    return best


# -- the loop -----------------------------------------------------------------

def _generate(text, word_index, config, oracle, gradient):
    word = words_of(text)[word_index]
    if config.candidates is CandidateMode.WORD:
        try:
            return candidates_word(text, word_index, oracle, config.top_k, config.sim_threshold, gradient)
        except NoEmbeddingError:
            pass
    return candidates_char(word, word_index, config.charset)


def run_attack(text: str, config: AttackConfig, oracle: EfficiencyOracle) -> AttackResult:
    if oracle.access is not config.scenario:
        raise ConfigError(f"config expects {config.scenario.value} access, oracle gives {oracle.access.value}")
    words = words_of(text)
    if not words:
        raise EmptyTextError("cannot attack empty text")
    t0, q0 = time.perf_counter(), oracle.queries
    result = AttackResult(original_text=text, adversarial_text=" ".join(words), budget=config.budget)
    frozen: set[int] = set()
    for _ in range(config.budget):
        current_text = " ".join(words)
        gradient = None
        if config.ranking is Ranking.GRADIENT:
            scores, base, gradient = rank_gradient(current_text, oracle)
        elif len(words) >= 2:
            scores, base = rank_mask(current_text, oracle)
        else:
            scores, base = np.zeros(1), oracle.query(current_text)
        order = sorted((i for i in range(len(words)) if i not in frozen), key=lambda i: (-scores[i], i))
        record = IterationRecord(None, None, base.value, base.value)
        for w in order[:config.max_words_tried_per_iter]:
            cands = _generate(current_text, w, config, oracle, gradient)
            found = best_candidate(current_text, w, cands, oracle, base.value) if cands else None
            if found is not None:
                cand, reading = found
                words = apply_candidate(words, cand)
                record = IterationRecord(w, cand, base.value, reading.value)
                break
            frozen.add(w)
        record.queries = oracle.queries - q0
        record.wall_time = time.perf_counter() - t0
        result.per_iteration.append(record)
    result.adversarial_text = " ".join(words)
    result.total_queries = oracle.queries - q0
    result.wall_time = time.perf_counter() - t0
    return result


def random_char_attack(text: str, budget: int, rng: np.random.Generator,
                       charset: str = DEFAULT_CHARSET) -> AttackResult:
    """Baseline: ``budget`` uniformly random single-character insertions, no oracle."""
    words = words_of(text)
    if not words:
        raise EmptyTextError("cannot attack empty text")
    result = AttackResult(original_text=text, adversarial_text=text, budget=budget, scenario="Random-Char")
    for _ in range(budget):
        w = int(rng.integers(len(words)))
        pos = int(rng.integers(len(words[w]) + 1))
        ch = charset[int(rng.integers(len(charset)))]
        edit = InsertChar(w, pos, ch)
        cand = Candidate(words[w][:pos] + ch + words[w][pos:], edit)
        words = apply_candidate(words, cand)
        result.per_iteration.append(IterationRecord(w, cand, None, None))
    result.adversarial_text = " ".join(words)
    return result

