"""Word-level tokenization with word alignment, plus a surrogate tokenizer.

The model tokenizer lowercases, splits on whitespace and peels surrounding
punctuation off each word into one token per punctuation character. Every
token remembers which whitespace-delimited word of the raw text it came from,
which is what the attack needs to map token-level scores back onto editable
words.

The surrogate tokenizer is deliberately unrelated to the model vocabulary; it
is the "third-party" length estimate used to normalise black-box timings.
"""

from __future__ import annotations

import hashlib
import re
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyTextError, VocabularyError

PAD, UNK, CLS = 0, 1, 2
RESERVED = ("[PAD]", "[UNK]", "[CLS]")
CLS_SPAN = -1

PUNCT = frozenset(string.punctuation)
_SURROGATE_RE = re.compile(r"\w+|[^\w\s]")


def split_word(word: str) -> tuple[str, str, str]:
    """Split a raw word into (leading punctuation, core, trailing punctuation)."""
    i, j = 0, len(word)
    while i < j and word[i] in PUNCT:
        i += 1
    while j > i and word[j - 1] in PUNCT:
        j -= 1
    return word[:i], word[i:j], word[j:]


def word_pieces(word: str) -> list[str]:
    lead, core, trail = split_word(word.lower())
    return list(lead) + ([core] if core else []) + list(trail)


def words_of(text: str) -> list[str]:
    return text.split()


class Vocab:
    """Token string <-> id map with PAD=0, UNK=1, CLS=2 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos = list(RESERVED)
        self._stoi = {t: i for i, t in enumerate(self._itos)}
        for tok in tokens:
            if tok in self._stoi:
                raise VocabularyError(f"duplicate or reserved token {tok!r}")
            self._stoi[tok] = len(self._itos)
            self._itos.append(tok)

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int | None = None, min_freq: int = 1) -> "Vocab":
        """Frequency-ordered vocabulary; ties broken alphabetically.

        ``max_size`` counts the reserved entries.
        """
        counts = Counter(p for text in texts for w in words_of(text) for p in word_pieces(w))
        ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                        key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(RESERVED))]
        return cls(ranked)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self._itos):
            raise VocabularyError(f"id {idx} outside vocabulary of size {len(self)}")
        return self._itos[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def content_ids(self) -> range:
        return range(len(RESERVED), len(self._itos))

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self._itos).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        # line k holds id k + 3
        Path(path).write_text("".join(t + "\n" for t in self._itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    word_spans: tuple[int, ...]
    num_words: int
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    def tokens_of_word(self, word_index: int) -> list[int]:
        return [k for k, w in enumerate(self.word_spans) if w == word_index]


class Tokenizer:
    def __init__(self, vocab: Vocab, max_seq_len: int):
        self.vocab = vocab
        self.max_seq_len = max_seq_len

    def tokenize(self, text: str) -> TokenSequence:
        if not text or not text.strip():
            raise EmptyTextError("cannot tokenize empty text")
        ids, spans = [CLS], [CLS_SPAN]
        words = words_of(text)
        for w_idx, word in enumerate(words):
            for piece in word_pieces(word):
                ids.append(self.vocab.id(piece))
                spans.append(w_idx)
        truncated = len(ids) > self.max_seq_len
        if truncated:
            ids, spans = ids[: self.max_seq_len], spans[: self.max_seq_len]
        return TokenSequence(tuple(ids), tuple(spans), len(words), truncated)

    def tokenize_many(self, texts: Sequence[str]) -> list[TokenSequence]:
        return [self.tokenize(t) for t in texts]


def surrogate_len(text: str) -> int:
    """Token count under the surrogate rules: word runs and single punctuation marks."""
    if not text or not text.strip():
        raise EmptyTextError("cannot measure empty text")
    return len(_SURROGATE_RE.findall(text))
