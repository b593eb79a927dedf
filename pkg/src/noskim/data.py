"""Synthetic keyword-classification corpora and dataset file I/O.

Each synthetic sample is a bag of filler words with a few class keywords
mixed in; the label is the class with the most keywords, so a trivial
keyword counter classifies the noise-free corpus perfectly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArtifactError, EmptyCorpusError, InfeasibleSpecError

KEYWORDS = (
    ("bad", "awful", "terrible", "boring", "dull", "poor", "horrible", "weak", "messy", "bland",
     "worst", "lame"),
    ("good", "great", "excellent", "superb", "fine", "brilliant", "lovely", "fun", "nice", "best",
     "strong", "charming"),
    ("red", "blue", "green", "yellow", "purple", "orange", "pink", "brown", "black", "white",
     "grey", "violet"),
    ("one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
     "twelve"),
)

FILLERS = """
the a an of to in and is it that was for on are with as at be this have from or by not but
what all were when we there can which their said if do will each about how up out them then
she many some so these would other into has more her two like him see time could no make than
first been its who now people my made over did down only way find use may water long little
very after words called just where most know get through back much before go good new write
our used me man too any day same right look think also around another came come work three
word must because does part even place well such here take why things help put years different
away again off went old number great tell men say small every found still between name should
home big give air line set own under read last never us left end along while might next sound
below saw something thought both few those always looked show large often together asked house
world going want school important until form food keep children feet land side without boy once
animals life enough took sometimes four head above kind began almost live page got earth need far
hand high year mother light parts country father let night following picture being study second
eyes soon times story boys since white days ever paper hard near sentence better best across
during today others however sure means knew try told young miles sun ways thing whole hear example
heard several change answer room sea against top turned learn point city play toward five using
himself usually money seen car morning table river
""".split()

_SYLLABLES = ("ka", "lo", "mi", "ren", "tu", "vos", "zel", "pra", "dun", "shi", "gor", "bel")


def _pseudo_words():
    for n in range(2, 5):
        for combo in product(_SYLLABLES, repeat=n):
            yield "".join(combo)


@dataclass(frozen=True)
class CorpusSpec:
    vocab_size: int = 256
    num_samples: int = 2400
    validation_fraction: float = 1 / 6
    min_len: int = 8
    max_len: int = 20
    num_classes: int = 2
    keywords: tuple = field(default_factory=lambda: KEYWORDS[:2])
    max_keywords: int = 3
    distractor_rate: float = 0.3
    zipf_exponent: float = 1.0
    noise_rate: float = 0.0
    seed: int = 0

    def validate(self, max_seq_len: int | None = None):
        kws = [tuple(k) for k in self.keywords]
        if len(kws) != self.num_classes:
            raise InfeasibleSpecError("need exactly one keyword set per class")
        flat = [w for k in kws for w in k]
        if len(set(flat)) != len(flat):
            raise InfeasibleSpecError("keyword sets must be disjoint across classes")
        if len(flat) + 3 >= self.vocab_size:
            raise InfeasibleSpecError(f"{len(flat)} keywords do not fit in a vocabulary of {self.vocab_size}")
        if not 1 <= self.min_len <= self.max_len:
            raise InfeasibleSpecError("need 1 <= min_len <= max_len")
        if max_seq_len is not None and self.max_len > max_seq_len - 1:
            raise InfeasibleSpecError(f"max_len {self.max_len} exceeds max_seq_len - 1 = {max_seq_len - 1}")
        if self.max_keywords < 1 or self.max_keywords > self.min_len:
            raise InfeasibleSpecError("max_keywords must lie in [1, min_len]")
        if self.num_samples < 2:
            raise InfeasibleSpecError("need at least two samples")

    def filler_words(self) -> list[str]:
        keywords = {w for k in self.keywords for w in k}
        wanted = self.vocab_size - 3 - len(keywords)
        out, seen = [], set(keywords)
        for w in list(FILLERS) + list(_pseudo_words()):
            if len(out) == wanted:
                break
            if w not in seen:
                seen.add(w)
                out.append(w)
        return out


def keyword_label(text: str, keywords: Sequence[Sequence[str]]) -> int | None:
    """Bag-of-keywords classifier: the class with strictly most keywords, else None."""
    words = text.lower().split()
    counts = [sum(w in set(k) for w in words) for k in keywords]
    best = max(counts)
    return counts.index(best) if best > 0 and counts.count(best) == 1 else None


def _typo(word, rng):
    pos = int(rng.integers(len(word) + 1))
    ch = "abcdefghijklmnopqrstuvwxyz"[int(rng.integers(26))]
    return word[:pos] + ch + word[pos:]


def synth_samples(spec: CorpusSpec, max_seq_len: int | None = None) -> list[tuple[str, int]]:
    spec.validate(max_seq_len)
    rng = np.random.default_rng(spec.seed)
    fillers = spec.filler_words()
    weights = 1.0 / np.arange(1, len(fillers) + 1) ** spec.zipf_exponent
    weights /= weights.sum()
    labels = np.arange(spec.num_samples) % spec.num_classes
    rng.shuffle(labels)
    samples = []
    for y in labels.tolist():
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        k = int(rng.integers(1, spec.max_keywords + 1))
        words = [spec.keywords[y][int(i)] for i in rng.integers(len(spec.keywords[y]), size=k)]
        if k >= 2 and spec.num_classes > 1 and rng.random() < spec.distractor_rate:
            other = int(rng.choice([c for c in range(spec.num_classes) if c != y]))
            words.append(spec.keywords[other][int(rng.integers(len(spec.keywords[other])))])
        n_fill = max(0, length - len(words))
        for i in rng.choice(len(fillers), size=n_fill, p=weights):
            w = fillers[int(i)]
            words.append(_typo(w, rng) if rng.random() < spec.noise_rate else w)
        order = rng.permutation(len(words))
        samples.append((" ".join(words[int(i)] for i in order), int(y)))
    return samples


def synth_data(spec: CorpusSpec, out_dir: str | Path, max_seq_len: int | None = None) -> dict[str, Path]:
    """Write ``train.jsonl`` and ``validation.jsonl``; deterministic in ``spec.seed``."""
    samples = synth_samples(spec, max_seq_len)
    n_val = max(1, int(round(len(samples) * spec.validation_fraction)))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.jsonl", "validation": out / "validation.jsonl"}
    write_jsonl(paths["train"], samples[n_val:])
    write_jsonl(paths["validation"], samples[:n_val])
    return paths


def write_jsonl(path, samples):
    with open(path, "w", encoding="utf-8") as f:
        for text, label in samples:
            f.write(json.dumps({"text": text, "label": int(label)}, sort_keys=True) + "\n")


def load_corpus(path: str | Path) -> list[tuple[str, int]]:
    """Read a JSONL ({"text", "label"}) or TSV (text<TAB>label) corpus."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(path, "corpus file not found")
    samples = []
    tsv = path.suffix.lower() in (".tsv", ".txt")
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                if tsv:
                    text, label = line.rsplit("\t", 1)
                else:
                    rec = json.loads(line)
                    text, label = rec["text"], rec["label"]
                samples.append((str(text), int(label)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ArtifactError(path, f"line {lineno}: {exc}") from exc
    if not samples:
        raise EmptyCorpusError(f"{path}: no samples")
    return samples
