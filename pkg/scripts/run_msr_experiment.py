"""Train every model family on one MSR domain and print the result tables.

Expects ``<domain>_all.tsv`` in ``--msr-dir``.  Writes the converted dataset,
one checkpoint per (model, seed) and ``results.json`` to ``--out``.

    python3 scripts/run_msr_experiment.py --msr-dir data/msr --domain movie --seeds 0 1 2
"""
import argparse
import json
import logging
import statistics
from pathlib import Path

from multiact.data import build_vocabs, dataset_stats, format_stats, save_dataset, select
from multiact.metrics import build_evals, format_report, metrics_report
from multiact.models import MODEL_KINDS
from multiact.msr import DOMAINS, convert
from multiact.train import TrainConfig, predict, save_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--msr-dir", required=True)
    ap.add_argument("--domain", default="movie", choices=DOMAINS)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--models", nargs="+", default=list(MODEL_KINDS), choices=MODEL_KINDS)
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("--max-epochs", type=int, default=100)
    ap.add_argument("--patience", type=int, default=10)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out) / args.domain
    out.mkdir(parents=True, exist_ok=True)
    records = convert(args.msr_dir, args.domain)
    save_dataset(out / "dataset.jsonl", records)
    print(format_stats(dataset_stats(records)))
    vocab = build_vocabs(records)
    test = [r for r in records if r.split == "test"]
    agent_test = select(test, "test")

    results = {}
    for kind in args.models:
        runs = []
        for seed in args.seeds:
            cfg = TrainConfig(model=kind, seed=seed, max_epochs=args.max_epochs, patience=args.patience)
            ckpt, _ = train(cfg, select(records, "train"), select(records, "valid"), vocab)
            save_checkpoint(out / f"{kind}-{seed}.ckpt", ckpt)
            preds = predict(ckpt, agent_test)
            keyed = {(r.dialogue_id, r.turn_index): p for r, p in zip(agent_test, preds)}
            report = metrics_report(*build_evals(test, keyed))
            print(format_report(report, f"{kind}/{seed}"))
            runs.append(report)
        results[kind] = {"runs": runs, "median_frame_f1": statistics.median(r["frame"]["f1"] for r in runs)}
    (out / "results.json").write_text(json.dumps(results, indent=1))
    for kind, res in results.items():
        print(f"{kind:<15} median test frame F1 {100 * res['median_frame_f1']:.2f}")


if __name__ == "__main__":
    main()
