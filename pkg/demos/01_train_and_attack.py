"""Train a small skimming classifier, then slow it down with five character edits.

Run: python3 demos/01_train_and_attack.py
Takes about half a minute on one CPU core.
"""

import argparse

from noskim import ModelConfig, TrainConfig, Tokenizer, Vocab, run_attack, scenario_config, train
from noskim.access import WhiteBoxOracle
from noskim.data import CorpusSpec, synth_samples
from noskim.metrics import ReferenceEmbedding, similarity
from noskim.model import remaining_token_ratio


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--samples", type=int, default=1200)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    samples = synth_samples(CorpusSpec(num_samples=args.samples, seed=args.seed), max_seq_len=32)
    cut = len(samples) // 6
    val, tr = samples[:cut], samples[cut:]

    vocab = Vocab.build([t for t, _ in tr], max_size=256)
    tok = Tokenizer(vocab, max_seq_len=32)
    model, report = train(tr, ModelConfig(vocab_size=len(vocab), seed=args.seed),
                          TrainConfig(epochs=args.epochs, seed=args.seed), tok, val)
    print(f"trained: val accuracy {report.val_accuracy:.3f}, val ARR {report.val_arr:.3f}")

    # The gate decides, layer by layer, which tokens keep being processed.
    text, _ = val[0]
    trace = model.trace(tok.tokenize(text))
    print(f"\n{text!r}\nretained per layer: {trace.hard_masks.sum(axis=1).tolist()} of {trace.hard_masks.shape[1]}")

    # Gradient ranking + single-character insertions, five edits.
    oracle = WhiteBoxOracle(model, tok)
    result = run_attack(text, scenario_config("WhiteBox-Char", budget=5), oracle)
    ref = ReferenceEmbedding.from_model(model, tok)
    for i, it in enumerate(result.per_iteration, 1):
        word = it.chosen_candidate.mutated_word if it.chosen_candidate else "(no improving edit)"
        print(f"  op {i}: ratio {it.eff_before:.3f} -> {it.eff_after:.3f}  {word}")
    after = remaining_token_ratio(model.trace(tok.tokenize(result.adversarial_text)))
    print(f"adversarial: {result.adversarial_text!r}")
    print(f"remaining-token ratio {remaining_token_ratio(trace):.3f} -> {after:.3f}, "
          f"similarity {similarity(text, result.adversarial_text, ref):.3f}, {result.total_queries} queries")


if __name__ == "__main__":
    main()
