"""Command line entry point: ``multiact {convert,stats,train,evaluate,predict,gradcheck}``.

Exit codes: 0 success, 1 internal error (or a failed gradient check), 2 bad input.
Relative ``--data`` paths that do not exist are looked up in ``$MULTIACT_DATA_DIR``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from .archive import ArchiveError
from .data import (DataError, DialogueState, ParseError, build_vocabs, dataset_stats, format_frames, format_stats,
                   load_dataset, save_dataset, select, tokens_to_state_input)
from .metrics import build_evals, format_report, metrics_report
from .models import MODEL_KINDS
from .msr import DOMAINS, convert
from .train import CheckpointError, TrainConfig, load_checkpoint, predict, save_checkpoint, train

DATA_ENV = "MULTIACT_DATA_DIR"
BAD_INPUT = (FileNotFoundError, IsADirectoryError, DataError, ParseError, ArchiveError, CheckpointError,
             json.JSONDecodeError, ValueError)

log = logging.getLogger("multiact")


class UsageError(Exception):
    """Bad command-line input detected after argument parsing."""


def _data_path(arg: str | None) -> Path:
    env = os.environ.get(DATA_ENV)
    if arg is None:
        if not env:
            raise UsageError(f"--data not given and ${DATA_ENV} is unset")
        return Path(env) / "movie.jsonl"
    path = Path(arg)
    if not path.exists() and env and not path.is_absolute() and (Path(env) / path).exists():
        return Path(env) / path
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    return path


def _emit(report: dict, table: str, as_json: bool) -> None:
    print(json.dumps(report, indent=1, sort_keys=True) if as_json else table)


# ------------------------------------------------------------------ commands


def cmd_convert(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise FileNotFoundError(f"no such directory: {src}")
    records = convert(src, args.domain)
    if not records:
        raise DataError(f"no dialogues found in {src}")
    out = Path(args.out)
    # write to a temporary file first so a failure never leaves a partial dataset
    fd, tmp = tempfile.mkstemp(dir=out.parent if str(out.parent) else ".", suffix=".tmp")
    os.close(fd)
    try:
        save_dataset(tmp, records)
        os.replace(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    print(format_stats(dataset_stats(records)).splitlines()[0])
    return 0


def cmd_stats(args) -> int:
    stats = dataset_stats(load_dataset(_data_path(args.data)))
    _emit(stats, format_stats(stats), args.json)
    return 0


def cmd_train(args) -> int:
    overrides = {"model": args.model, "hidden_size": args.hidden_size, "max_epochs": args.epochs,
                 "batch_size": args.batch_size, "lr": args.lr, "seed": args.seed,
                 "teacher_forcing": args.teacher_forcing, "patience": args.patience}
    if args.config:
        config = TrainConfig.from_file(args.config, **overrides)
    else:
        config = TrainConfig(**{k: v for k, v in overrides.items() if v is not None})
    records = load_dataset(_data_path(args.data))
    vocab = build_vocabs(records)
    ckpt, history = train(config, select(records, "train"), select(records, "valid"), vocab)
    save_checkpoint(args.out, ckpt)
    summary = {"checkpoint": str(args.out), "model": config.model, "best_epoch": ckpt.epoch,
               "valid_frame_f1": ckpt.valid_frame_f1, "epochs_run": len(history),
               "history": [{"epoch": h.epoch, "train_loss": h.train_loss, "valid_frame_f1": h.valid_frame_f1}
                           for h in history]}
    table = "\n".join([f"epoch {h.epoch:>4}  loss {h.train_loss:10.4f}  valid frame F1 {100 * h.valid_frame_f1:6.2f}"
                       for h in history]
                      + [f"best epoch {ckpt.epoch}, valid frame F1 {100 * ckpt.valid_frame_f1:.2f}, saved {args.out}"])
    _emit(summary, table, args.json)
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    records = load_dataset(_data_path(args.data))
    if select(records, "train"):
        expected = build_vocabs(records).fingerprint()
        if expected != ckpt.vocab.fingerprint():
            raise CheckpointError(f"vocabulary fingerprint mismatch: checkpoint {ckpt.vocab.fingerprint()}, "
                                  f"data {expected}; refusing to evaluate")
    part = [r for r in records if r.split == args.split]
    if not select(part, args.split):
        raise DataError(f"no agent turns in split {args.split!r}")
    agent = select(part, args.split)
    preds = predict(ckpt, agent, workers=args.workers)
    keyed = {(r.dialogue_id, r.turn_index): p for r, p in zip(agent, preds)}
    turns, dialogues = build_evals(part, keyed, args.success_acts)
    report = metrics_report(turns, dialogues)
    report["model"] = ckpt.config.model
    report["split"] = args.split
    _emit(report, format_report(report, ckpt.config.model), args.json)
    return 0


def _read_state_input(path: Path, vocab, turn: int, kb: int):
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict):
        return DialogueState.from_json(obj, turn=turn, kb_result_count=kb)
    tokens = [str(t) for t in obj] if isinstance(obj, list) else text.split()
    if not tokens:
        raise DataError(f"{path}: empty state")
    return tokens_to_state_input(tokens, vocab, turn=turn, kb_result_count=kb)


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    state = _read_state_input(Path(args.state), ckpt.vocab, args.turn, args.kb_results)
    frames = predict(ckpt, [state])[0]
    if args.json:
        print(json.dumps([{"act": f.act, "slots": list(f.slots)} for f in frames]))
    else:
        print(format_frames(frames))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, run_all

    kinds = MODEL_KINDS if args.model == "all" else (args.model,)
    results, seconds = run_all(args.seed, kinds)
    report = {"seed": args.seed, "seconds": seconds, "passed": all(r.ok for r in results),
              "groups": [{"model": r.model, "group": r.group, "size": r.size, "rel_error": r.rel_error,
                          "ok": r.ok} for r in results]}
    _emit(report, format_results(results) + f"\n{len(results)} groups, {seconds:.1f} s", args.json)
    return 0 if report["passed"] else 1


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiact", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def output_flags(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--json", action="store_true", help="machine-readable JSON output")
        g.add_argument("--table", dest="json", action="store_false", help="human-readable table (default)")

    p = sub.add_parser("convert", help="MSR TSV files to the JSONL dataset")
    p.add_argument("--in", dest="input", required=True, metavar="MSR_DIR")
    p.add_argument("--domain", required=True, choices=DOMAINS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("stats", help="split counts and acts-per-turn histograms")
    p.add_argument("--data")
    output_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a policy model")
    p.add_argument("--config", help="JSON or YAML file with TrainConfig fields")
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="checkpoint path (sidecar written to <out>.json)")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--teacher-forcing", type=float)
    p.add_argument("--patience", type=int)
    output_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--success-acts", default="inform", choices=("inform", "all"))
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    output_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="decode frames for one state")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--state", required=True, help="DialogueState JSON object or serialized-token file")
    p.add_argument("--turn", type=int, default=0)
    p.add_argument("--kb-results", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--model", default="all", choices=("all", *MODEL_KINDS))
    p.add_argument("--seed", type=int, default=0)
    output_flags(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # argparse exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *BAD_INPUT) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
