"""Overfit each model family on the synthetic corpus and print one line per model.

    python3 scripts/run_smoke.py [--examples 20] [--epochs 300]
"""
import argparse
import time

from multiact.data import build_vocabs
from multiact.models import MODEL_KINDS
from multiact.train import TrainConfig, synthetic_corpus, train, turn_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--examples", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--models", nargs="+", default=list(MODEL_KINDS), choices=MODEL_KINDS)
    args = ap.parse_args()
    corpus = synthetic_corpus(args.examples, seed=args.seed)
    vocab = build_vocabs(corpus)
    for kind in args.models:
        start = time.perf_counter()
        cfg = TrainConfig(model=kind, batch_size=1, max_epochs=args.epochs, patience=args.epochs, seed=args.seed,
                          max_len=30)
        ckpt, history = train(cfg, corpus, [], vocab)
        print(f"{kind:<15} turn accuracy {turn_accuracy(ckpt, corpus):.2f}  best epoch {ckpt.epoch + 1:>4}  "
              f"epochs run {len(history):>4}  {time.perf_counter() - start:6.1f} s")


if __name__ == "__main__":
    main()
