"""A small transformer classifier with per-layer skim gates.

Before layer ``l`` runs, a gate MLP looks at every token's hidden state and
predicts a keep-probability. Tokens whose probability is above 0.5 (and that
survived layer ``l-1``) take part in layer ``l``; all others are frozen: they
are removed from attention as keys, their hidden state is not updated, and
they never come back. The CLS token is always kept.

All arithmetic is float64. Parameters are rounded to float32 after training so
that checkpoints (stored as float32) reload bit-exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (EmptyCorpusError, SequenceTooLongError, TrainingDivergenceError,
                     VocabularyError)
from .tokenizer import PAD, Tokenizer, TokenSequence

log = logging.getLogger(__name__)

DTYPE = torch.float64
KEEP_THRESHOLD = 0.5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    num_layers: int = 4
    embed_dim: int = 32
    num_heads: int = 2
    ffn_dim: int = 64
    max_seq_len: int = 32
    num_classes: int = 2
    skim_factor: float = 0.5
    gate_hidden_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "num_layers", "embed_dim", "num_heads", "ffn_dim",
                     "max_seq_len", "num_classes", "gate_hidden_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be at least 2")
        if not 0.0 < self.skim_factor < 1.0:
            raise ValueError("skim_factor must lie strictly between 0 and 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 2e-3
    batch_size: int = 32
    skim_lambda: float = 1.0
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class ForwardTrace:
    """One sequence's pass through the model.

    ``soft_probs[l]`` and ``hard_masks[l]`` belong to layer ``l + 1``; the mask
    entering layer 1 is implicitly all ones.
    """

    token_ids: np.ndarray
    soft_probs: np.ndarray
    hard_masks: np.ndarray
    logits: np.ndarray
    hidden_states: np.ndarray | None = None

    @property
    def num_layers(self) -> int:
        return self.hard_masks.shape[0]

    @property
    def retained_slots(self) -> int:
        return int(self.hard_masks.sum())


def remaining_token_ratio(trace: ForwardTrace) -> float:
    masks = np.asarray(trace.hard_masks, dtype=np.float64)
    return float((masks.sum(axis=1) / masks.shape[1]).mean())


def efficiency_loss_soft(trace: ForwardTrace) -> float:
    probs = np.asarray(trace.soft_probs, dtype=np.float64)
    prev = np.vstack([np.ones((1, probs.shape[1])), trace.hard_masks[:-1]])
    return float((probs * prev).mean(axis=1).mean())


class SkimGate(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)
        # wide output init: near-saturated probabilities keep the soft ratio close to the hard one
        nn.init.uniform_(self.fc2.weight, -2.5, 2.5)

    def forward(self, h):
        return torch.sigmoid(self.fc2(torch.tanh(self.fc1(h)))).squeeze(-1)


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        m = cfg.embed_dim
        self.heads = cfg.num_heads
        self.ln1 = nn.LayerNorm(m)
        self.qkv = nn.Linear(m, 3 * m)
        self.proj = nn.Linear(m, m)
        self.ln2 = nn.LayerNorm(m)
        self.fc1 = nn.Linear(m, cfg.ffn_dim)
        self.fc2 = nn.Linear(cfg.ffn_dim, m)

    def forward(self, h, keep, keep_w):
        # keep: bool [B, n]; keep_w: float [B, n], numerically equal to keep
        B, n, m = h.shape
        d = m // self.heads
        q, k, v = self.qkv(self.ln1(h)).split(m, dim=-1)
        q, k, v = (t.view(B, n, self.heads, d).transpose(1, 2) for t in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        top = scores.masked_fill(~keep[:, None, None, :], -math.inf).amax(-1, keepdim=True).detach()
        # unmasked exponent so straight-through weights receive gradient for dropped keys
        e = torch.exp(torch.clamp(scores - top, max=30.0)) * keep_w[:, None, None, :]
        att = e / e.sum(-1, keepdim=True)
        a = (att @ v).transpose(1, 2).reshape(B, n, m)
        out = h + self.proj(a)
        out = out + self.fc2(F.gelu(self.fc1(self.ln2(out))))
        return h + keep_w[..., None] * (out - h)


class SkimTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        c = config
        self.tok_emb = nn.Embedding(c.vocab_size, c.embed_dim)
        self.pos_emb = nn.Embedding(c.max_seq_len, c.embed_dim)
        nn.init.normal_(self.tok_emb.weight, std=0.5)
        nn.init.normal_(self.pos_emb.weight, std=0.1)
        self.blocks = nn.ModuleList(Block(c) for _ in range(c.num_layers))
        self.gates = nn.ModuleList(SkimGate(c.embed_dim, c.gate_hidden_dim) for _ in range(c.num_layers))
        self.ln_f = nn.LayerNorm(c.embed_dim)
        self.head = nn.Linear(c.embed_dim, c.num_classes)
        self.to(DTYPE)
        self.eval()
        # access instrumentation, read by scenario-separation checks
        self.gradient_calls = 0
        self.embedding_reads = 0

    # -- batched core -------------------------------------------------------

    def _run(self, ids, valid=None, embeds=None, straight_through=False, keep_hidden=False):
        """ids: long [B, n]; valid: bool [B, n] marking real (non-padding) tokens."""
        B, n = ids.shape
        if valid is None:
            valid = torch.ones_like(ids, dtype=torch.bool)
        if embeds is None:
            embeds = self.tok_emb(ids)
        h = embeds + self.pos_emb.weight[:n][None]
        prev = valid.clone()
        softs, hards, hidden = [], [], [h]
        for gate, block in zip(self.gates, self.blocks):
            p = gate(h)
            hard = (p > KEEP_THRESHOLD) & prev
            hard[:, 0] = True
            if straight_through:
                prev_f = prev.to(DTYPE)
                w = hard.to(DTYPE) + (p - p.detach()) * prev_f
                w = torch.cat([torch.ones_like(w[:, :1]), w[:, 1:]], dim=1)
            else:
                w = hard.to(DTYPE)
            h = block(h, hard, w)
            softs.append(p)
            hards.append(hard)
            if keep_hidden:
                hidden.append(h)
            prev = hard
        logits = self.head(self.ln_f(h[:, 0]))
        return {
            "valid": valid,
            "soft": torch.stack(softs, 1),
            "hard": torch.stack(hards, 1),
            "logits": logits,
            "hidden": torch.stack(hidden, 1) if keep_hidden else None,
        }

    @staticmethod
    def soft_loss(out):
        """Per-sample differentiable surrogate of the remaining-token ratio, shape [B]."""
        valid = out["valid"]
        hard = out["hard"].to(DTYPE)
        prev = torch.cat([valid[:, None].to(DTYPE), hard[:, :-1]], dim=1)
        prev = prev * valid[:, None].to(DTYPE)
        per_layer = (out["soft"] * prev).sum(-1) / valid.sum(-1, keepdim=True)
        return per_layer.mean(-1)

    def _check(self, seq: TokenSequence):
        n = len(seq.ids)
        if n < 1:
            raise SequenceTooLongError("empty token sequence")
        if n > self.config.max_seq_len:
            raise SequenceTooLongError(f"sequence of {n} tokens exceeds max_seq_len={self.config.max_seq_len}")
        if min(seq.ids) < 0 or max(seq.ids) >= self.config.vocab_size:
            raise VocabularyError(f"token id outside [0, {self.config.vocab_size})")

    def _pad(self, seqs: Sequence[TokenSequence]):
        for s in seqs:
            self._check(s)
        n = max(len(s.ids) for s in seqs)
        ids = torch.full((len(seqs), n), PAD, dtype=torch.long)
        valid = torch.zeros((len(seqs), n), dtype=torch.bool)
        for b, s in enumerate(seqs):
            ids[b, : len(s.ids)] = torch.tensor(s.ids)
            valid[b, : len(s.ids)] = True
        return ids, valid

    # -- public API ---------------------------------------------------------

    def forward_many(self, seqs: Sequence[TokenSequence], retain: str = "masks") -> list[ForwardTrace]:
        if not seqs:
            return []
        ids, valid = self._pad(seqs)
        with torch.no_grad():
            out = self._run(ids, valid, keep_hidden=retain == "hidden")
        traces = []
        for b, s in enumerate(seqs):
            n = len(s.ids)
            traces.append(ForwardTrace(
                token_ids=np.asarray(s.ids),
                soft_probs=out["soft"][b, :, :n].numpy().copy(),
                hard_masks=out["hard"][b, :, :n].numpy().copy(),
                logits=out["logits"][b].numpy().copy(),
                hidden_states=None if out["hidden"] is None else out["hidden"][b, :, :n].numpy().copy(),
            ))
        return traces

    def trace(self, seq: TokenSequence, retain: str = "masks") -> ForwardTrace:
        return self.forward_many([seq], retain)[0]

    def grad_wrt_embeddings_many(self, seqs: Sequence[TokenSequence]):
        """Gradient of each sequence's soft efficiency loss w.r.t. its token embeddings.

        Hard masks are held constant (the threshold contributes no gradient).
        Returns (list of n_i x m arrays, list of traces).
        """
        self.gradient_calls += 1
        ids, valid = self._pad(seqs)
        emb = self.tok_emb(ids).detach().clone().requires_grad_(True)
        with torch.enable_grad():
            out = self._run(ids, valid, embeds=emb)
            loss = self.soft_loss(out)
            (g,) = torch.autograd.grad(loss.sum(), emb)
        grads, traces = [], []
        for b, s in enumerate(seqs):
            n = len(s.ids)
            grads.append(g[b, :n].numpy().copy())
            traces.append(ForwardTrace(
                token_ids=np.asarray(s.ids),
                soft_probs=out["soft"][b, :, :n].detach().numpy().copy(),
                hard_masks=out["hard"][b, :, :n].numpy().copy(),
                logits=out["logits"][b].detach().numpy().copy(),
            ))
        return grads, traces

    def grad_wrt_embeddings(self, seq: TokenSequence) -> np.ndarray:
        grads, _ = self.grad_wrt_embeddings_many([seq])
        return grads[0]

    def soft_loss_at(self, seq: TokenSequence, embeds: np.ndarray) -> float:
        """Soft efficiency loss with the token embeddings replaced by ``embeds``."""
        ids, valid = self._pad([seq])
        with torch.no_grad():
            out = self._run(ids, valid, embeds=torch.as_tensor(embeds, dtype=DTYPE)[None])
            return float(self.soft_loss(out)[0])

    def embedding_table(self) -> np.ndarray:
        self.embedding_reads += 1
        return self.tok_emb.weight.detach().numpy().copy()

    def predict(self, seq: TokenSequence) -> int:
        # np.argmax returns the first maximum, i.e. the lower class index on ties
        return int(np.argmax(self.trace(seq).logits))

    def predict_many(self, seqs: Sequence[TokenSequence]) -> list[int]:
        return [int(np.argmax(t.logits)) for t in self.forward_many(seqs)]

    def round_to_float32(self):
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(p.to(torch.float32).to(DTYPE))
        return self


@dataclass
class TrainReport:
    epochs: int
    final_loss: float
    train_accuracy: float
    val_accuracy: float | None = None
    val_arr: float | None = None
    history: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _batches(n, batch_size, gen):
    order = torch.randperm(n, generator=gen).tolist()
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def evaluate(model: SkimTransformer, seqs: Sequence[TokenSequence], labels: Sequence[int],
             batch_size: int = 256) -> tuple[float, float]:
    """(accuracy, ARR) of ``model`` on tokenized samples."""
    correct, ratios = 0, []
    for i in range(0, len(seqs), batch_size):
        chunk = seqs[i:i + batch_size]
        for t, y in zip(model.forward_many(chunk), labels[i:i + batch_size]):
            correct += int(np.argmax(t.logits)) == y
            ratios.append(remaining_token_ratio(t))
    return correct / max(1, len(seqs)), float(np.mean(ratios)) if ratios else float("nan")


def train(corpus: Sequence[tuple[str, int]], config: ModelConfig, train_cfg: TrainConfig,
          tokenizer: Tokenizer, val_corpus: Sequence[tuple[str, int]] | None = None):
    """Train from scratch with loss = CE + lambda * |mean soft ratio - skim_factor|.

    Gates learn through straight-through masks: the forward pass uses hard
    0/1 decisions while gradients flow into the keep-probabilities.
    """
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    labels = [int(y) for _, y in corpus]
    if min(labels) < 0 or max(labels) >= config.num_classes:
        raise EmptyCorpusError(f"labels must lie in [0, {config.num_classes})")
    seqs = tokenizer.tokenize_many([t for t, _ in corpus])
    model = SkimTransformer(config)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    y_all = torch.tensor(labels)
    history = []
    loss_val = float("nan")
    for epoch in range(train_cfg.epochs):
        tot, nb = 0.0, 0
        for idx in _batches(len(seqs), train_cfg.batch_size, gen):
            out = model._run(*model._pad([seqs[i] for i in idx]), straight_through=True)
            ce = F.cross_entropy(out["logits"], y_all[idx])
            soft = model.soft_loss(out).mean()
            loss = ce + train_cfg.skim_lambda * (soft - config.skim_factor).abs()
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch}",
                    {"epoch": epoch, "ce": float(ce.detach()), "soft_ratio": float(soft.detach()), "lr": train_cfg.lr})
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            opt.step()
            tot += float(loss.detach())
            nb += 1
        loss_val = tot / nb
        history.append(loss_val)
        log.info("epoch %d loss %.4f", epoch, loss_val)
    model.eval()
    model.round_to_float32()
    train_acc, _ = evaluate(model, seqs, labels)
    report = TrainReport(train_cfg.epochs, loss_val, train_acc, history=history)
    if val_corpus:
        vseqs = tokenizer.tokenize_many([t for t, _ in val_corpus])
        report.val_accuracy, report.val_arr = evaluate(model, vseqs, [int(y) for _, y in val_corpus])
    return model, report
