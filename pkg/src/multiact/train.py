"""Training loop, checkpoints and the synthetic overfit corpus."""
from __future__ import annotations

import copy
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .archive import load_params, save_params
from .data import ActFrame, DialogueState, TurnRecord, Vocabularies, build_vocabs
from .metrics import TurnEval, frame_prf
from .models import MODEL_KINDS, build_model, teacher_force_choice  # noqa: F401  (re-exported)
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: str = "gcas"
    hidden_size: int = 64
    class_width: int = 128
    teacher_forcing: float = 0.5
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    max_decode_steps: int = 6
    beam_size: int = 10
    max_len: int = 60
    threshold: float = 0.5

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; expected one of {MODEL_KINDS}")
        for name in ("teacher_forcing", "threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("hidden_size", "class_width", "batch_size", "max_decode_steps", "beam_size", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.max_epochs < 0 or self.patience < 0:
            raise ValueError("lr must be positive; max_epochs and patience non-negative")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TrainConfig":
        """Load a JSON (or YAML, if PyYAML is installed) file mirroring the field names."""
        text = Path(path).read_text(encoding="utf-8")
        if str(path).endswith((".yml", ".yaml")):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    valid_frame_f1: float
    breakdown: dict = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    vocab: Vocabularies
    config: TrainConfig
    epoch: int = -1
    valid_frame_f1: float = 0.0

    @property
    def sidecar(self) -> dict:
        return {
            "model_kind": self.config.model,
            "hidden_size": self.config.hidden_size,
            "class_width": self.config.class_width,
            "seed": self.config.seed,
            "vocab_fingerprint": self.vocab.fingerprint(),
            "epoch": self.epoch,
            "valid_frame_f1": self.valid_frame_f1,
            "config": asdict(self.config),
            "vocab": self.vocab.to_json(),
        }

    def model(self):
        return build_model(self.config.model, self.vocab, self.config.hidden_size, self.config.class_width)


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Write the parameter archive to ``path`` and the sidecar to ``path.json``."""
    save_params(path, ckpt.params)
    Path(f"{path}.json").write_text(json.dumps(ckpt.sidecar, indent=1), encoding="utf-8")


def load_checkpoint(path: str | Path, model_kind: str | None = None) -> Checkpoint:
    side = json.loads(Path(f"{path}.json").read_text(encoding="utf-8"))
    if model_kind is not None and side["model_kind"] != model_kind:
        raise CheckpointError(f"checkpoint holds a {side['model_kind']} model, not {model_kind}")
    vocab = Vocabularies.from_json(side["vocab"])
    if vocab.fingerprint() != side["vocab_fingerprint"]:
        raise CheckpointError("vocabulary fingerprint mismatch in sidecar")
    params = load_params(path)
    config = TrainConfig(**side["config"])
    return Checkpoint(params, vocab, config, side.get("epoch", -1), side.get("valid_frame_f1", 0.0))


def predict(ckpt: Checkpoint, records: Sequence, workers: int = 1) -> list[list[ActFrame]]:
    """Decode frames for records, states or pre-encoded states, in chunks of 64.

    With ``workers > 1`` the chunks are decoded on a thread pool; results keep
    the input order.
    """
    cfg = ckpt.config
    model = ckpt.model()

    def run(i):
        return model.predict(ckpt.params, records[i:i + 64], ckpt.vocab, max_steps=cfg.max_decode_steps,
                             threshold=cfg.threshold, beam_size=cfg.beam_size, max_len=cfg.max_len)

    starts = range(0, len(records), 64)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(run, starts))
    else:
        chunks = [run(i) for i in starts]
    return [frames for chunk in chunks for frames in chunk]


def frame_f1(ckpt: Checkpoint, records: Sequence[TurnRecord]) -> float:
    preds = predict(ckpt, records)
    return frame_prf(TurnEval(p, r.target_acts) for p, r in zip(preds, records)).f1


def _loss_tensor(out):
    return getattr(out, "total", out)


def train(config: TrainConfig, train_set: Sequence[TurnRecord], valid_set: Sequence[TurnRecord],
          vocab: Vocabularies | None = None,
          score: Callable[[Checkpoint, Sequence[TurnRecord]], float] | None = None,
          ) -> tuple[Checkpoint, list[EpochReport]]:
    """Mini-batch Adam training with early stopping on validation frame F1.

    Returns the checkpoint with the best validation score and the per-epoch
    history.  With an empty validation set the training set is scored instead.
    ``score`` replaces frame F1 as the selection criterion; a score of 1.0
    ends training early.
    """
    score = score or frame_f1
    train_set = [r for r in train_set if r.speaker == "agent"]
    if not train_set:
        raise ValueError("empty training set")
    vocab = vocab or build_vocabs(train_set)
    valid_set = [r for r in valid_set if r.speaker == "agent"] or train_set
    model = build_model(config.model, vocab, config.hidden_size, config.class_width)
    params = model.init(config.seed)
    best = Checkpoint(copy.deepcopy(params), vocab, config)
    history: list[EpochReport] = []
    if config.max_epochs == 0:
        return best, history

    rng = np.random.default_rng(config.seed)
    adam = AdamState()
    best_f1, stale = -1.0, 0
    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        order = rng.permutation(len(train_set))
        total, parts = 0.0, {}
        for i in range(0, len(order), config.batch_size):
            batch = model.make_batch([train_set[j] for j in order[i:i + config.batch_size]], vocab)
            tape = ad.Tape()
            out = model.loss(tape.watch(params), batch, rng, config.teacher_forcing)
            loss = _loss_tensor(out)
            grads = ad.backward(tape, loss)
            adam_step(adam, params, grads, lr=config.lr)
            total += float(loss.value)
            if hasattr(out, "values"):
                for k, v in out.values().items():
                    parts[k] = parts.get(k, 0.0) + v
        n = len(train_set)
        current = Checkpoint(params, vocab, config, epoch)
        f1 = score(current, valid_set)
        report = EpochReport(epoch, total / n, f1, {k: v / n for k, v in parts.items()},
                             time.perf_counter() - start)
        history.append(report)
        log.info("epoch %d loss %.4f valid frame F1 %.4f", epoch, report.train_loss, f1)
        if f1 > best_f1:
            best_f1, stale = f1, 0
            best = Checkpoint(copy.deepcopy(params), vocab, config, epoch, f1)
            if f1 >= 1.0:
                break  # nothing left to improve
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best, history


# --------------------------------------------------------- synthetic corpus


def synthetic_corpus(n_examples: int = 20, n_acts: int = 5, n_slots: int = 8, max_frames: int = 3,
                     seed: int = 0) -> list[TurnRecord]:
    """Consistent toy corpus: distinct random states, each with its own multi-act target."""
    rng = np.random.default_rng(seed)
    acts = [f"act{i}" for i in range(n_acts)]
    slots = [f"slot{i}" for i in range(n_slots)]
    records, seen = [], set()
    while len(records) < n_examples:
        def pick(k):
            return tuple(sorted({slots[j] for j in rng.integers(0, n_slots, k)}, key=slots.index))

        state = DialogueState(
            user_acts=(ActFrame(acts[int(rng.integers(n_acts))], pick(int(rng.integers(0, 3)))),),
            user_inform_slots=pick(int(rng.integers(0, 3))),
            agent_request_slots=pick(int(rng.integers(0, 2))),
            turn=int(rng.integers(0, 20)),
            kb_result_count=int(rng.integers(0, 10)),
        )
        if state in seen:
            continue
        seen.add(state)
        n_frames = int(rng.integers(1, max_frames + 1))
        chosen = rng.choice(n_acts, size=n_frames, replace=False)
        target = tuple(ActFrame(acts[int(a)], pick(int(rng.integers(0, 4)))) for a in chosen)
        records.append(TurnRecord(f"syn{len(records)}", 0, "agent", state, target))
    return records


def turn_accuracy(ckpt: Checkpoint, records: Sequence[TurnRecord]) -> float:
    """Fraction of turns whose predicted frame set equals the gold set exactly."""
    preds = predict(ckpt, records)
    hits = sum({f.key() for f in p} == {f.key() for f in r.target_acts} for p, r in zip(preds, records))
    return hits / len(records)
