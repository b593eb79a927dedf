"""How well does per-token inference cost reveal the skimming ratio?

A black-box attacker only sees cost. Sequence-level cost mostly tracks input
length; dividing by a surrogate token count removes that and leaves the
skimming signal. Uses the deterministic cost counter, then the wall clock.

Run: python3 demos/02_side_channel.py
"""

import argparse

from noskim import ModelConfig, TrainConfig, Tokenizer, Vocab, train
from noskim.access import correlation_report
from noskim.data import CorpusSpec, synth_samples
from noskim.errors import UnstableMeasurementError


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--samples", type=int, default=1200)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--probe", type=int, default=200)
    args = p.parse_args()

    samples = synth_samples(CorpusSpec(num_samples=args.samples, min_len=4, max_len=28), max_seq_len=32)
    cut = len(samples) // 6
    val, tr = samples[:cut], samples[cut:]
    vocab = Vocab.build([t for t, _ in tr], max_size=256)
    tok = Tokenizer(vocab, max_seq_len=32)
    model, _ = train(tr, ModelConfig(vocab_size=len(vocab)), TrainConfig(epochs=args.epochs), tok, val)

    texts = [t for t, _ in (val + tr)[:args.probe]]
    counted = correlation_report(model, tok, texts, mode="counted")
    print(f"counted cost:  r(sequence) = {counted.r_sequence:+.3f}   r(token) = {counted.r_token:+.3f}")
    try:
        wall = correlation_report(model, tok, texts[:60], mode="wall_clock")
        print(f"wall clock:    r(sequence) = {wall.r_sequence:+.3f}   r(token) = {wall.r_token:+.3f}"
              f"   ({wall.skipped} unstable samples skipped)")
    except UnstableMeasurementError as e:
        print(f"wall clock:    unavailable ({e})")
    # The dense forward pass masks skipped rows instead of removing them, so
    # wall time stays close to flat. The counter models a kernel that skips them.


if __name__ == "__main__":
    main()
