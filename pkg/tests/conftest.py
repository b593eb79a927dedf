import numpy as np
import pytest

from noskim.data import CorpusSpec, synth_samples
from noskim.model import ModelConfig, SkimTransformer, TrainConfig, train
from noskim.tokenizer import Tokenizer, Vocab

WORDS = ["good", "bad", "movie", "plot", "the", "a", "was", "very", "great", "awful", "actor", "scene",
         "long", "short", "fun", "dull", "music", "story", "cast", "end"]


@pytest.fixture(scope="session")
def small_vocab():
    return Vocab(WORDS + list(".,!?"))


@pytest.fixture(scope="session")
def small_tokenizer(small_vocab):
    return Tokenizer(small_vocab, 16)


def random_model(vocab_size, seed=0, **kw):
    cfg = dict(vocab_size=vocab_size, num_layers=2, embed_dim=16, num_heads=2, ffn_dim=32,
               max_seq_len=16, gate_hidden_dim=8, seed=seed)
    cfg.update(kw)
    return SkimTransformer(ModelConfig(**cfg))


@pytest.fixture(scope="session")
def small_model(small_vocab):
    return random_model(len(small_vocab))


def random_text(rng, n_words=None, words=WORDS):
    n = int(rng.integers(2, 9)) if n_words is None else n_words
    return " ".join(words[int(i)] for i in rng.integers(len(words), size=n))


@pytest.fixture(scope="session")
def trained():
    """The default-size model on the default synthetic corpus: (model, tokenizer, validation, report)."""
    spec = CorpusSpec()
    samples = synth_samples(spec, 32)
    n_val = round(len(samples) * spec.validation_fraction)
    val, tr = samples[:n_val], samples[n_val:]
    vocab = Vocab.build([t for t, _ in tr], 256, 2)
    tok = Tokenizer(vocab, 32)
    model, report = train(tr, ModelConfig(vocab_size=len(vocab)), TrainConfig(epochs=20), tok, val)
    return model, tok, val, report


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
