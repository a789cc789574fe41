"""Dialogue states, act frames, and the three target encodings.

An annotation such as ``inform(moviename=X; genre=thriller) multiple_choice(moviename)``
becomes a list of :class:`ActFrame` (values dropped), which can then be
rendered as

* a multi-hot vector over act+slot pairs (classification),
* a flat token sequence ``inform ( moviename = ; genre = ) ... <eos>`` (seq2seq),
  where ``=`` follows exactly the slots that carried a value,
* a sequence of :class:`CasTuple` ending in ``(<stop>, <pad>, {})`` (CAS / gCAS).
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CONTINUE, STOP, PAD = "<continue>", "<stop>", "<pad>"
EOS, GO, UNK, NOSLOT = "<eos>", "<go>", "<unk>", "<noslot>"
CONTINUE_VOCAB = (CONTINUE, STOP, PAD)
PUNCT = ("(", ")", "=", ";")
SECTIONS = (
    "prev_agent_acts",
    "user_acts",
    "user_request_slots",
    "user_inform_slots",
    "agent_request_slots",
    "agent_proposed_slots",
)
SECTION_MARKERS = tuple(f"<{s}>" for s in SECTIONS)
SPEAKERS = ("user", "agent")
SPLITS = ("train", "valid", "test")
MAX_TURN = 40


class ParseError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ActFrame:
    """One act with its slot names.

    ``valued`` records which slots carried a value in the source annotation.
    It only affects the token encoding (``slot =`` versus bare ``slot``) and
    takes no part in equality or hashing.
    """

    act: str
    slots: tuple[str, ...] = ()
    valued: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        # dedupe, keep first occurrence
        object.__setattr__(self, "slots", tuple(dict.fromkeys(self.slots)))
        object.__setattr__(self, "valued", frozenset(self.valued) & frozenset(self.slots))

    def __str__(self) -> str:
        return f"{self.act}({';'.join(self.slots)})"

    def key(self) -> tuple[str, frozenset]:
        return self.act, frozenset(self.slots)


@dataclass(frozen=True)
class CasTuple:
    cont: str
    act: str
    slots: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"({self.cont}, {self.act}, {{{', '.join(self.slots)}}})"


STOP_TUPLE = CasTuple(STOP, PAD, ())


@dataclass(frozen=True)
class DialogueState:
    prev_agent_acts: tuple[ActFrame, ...] = ()
    user_acts: tuple[ActFrame, ...] = ()
    user_request_slots: tuple[str, ...] = ()
    user_inform_slots: tuple[str, ...] = ()
    agent_request_slots: tuple[str, ...] = ()
    agent_proposed_slots: tuple[str, ...] = ()
    turn: int = 0
    kb_result_count: int = 0

    def __post_init__(self):
        if self.turn < 0 or self.kb_result_count < 0:
            raise DataError(f"turn and kb_result_count must be non-negative: {self.turn}, {self.kb_result_count}")

    @classmethod
    def from_json(cls, obj: dict, turn: int = 0, kb_result_count: int = 0) -> "DialogueState":
        def frames(key):
            return tuple(_frame_from_json(f) for f in obj.get(key, []))

        def slots(key):
            return tuple(dict.fromkeys(str(s) for s in obj.get(key, [])))

        return cls(
            prev_agent_acts=frames("prev_agent_acts"),
            user_acts=frames("user_acts"),
            user_request_slots=slots("user_request_slots"),
            user_inform_slots=slots("user_inform_slots"),
            agent_request_slots=slots("agent_request_slots"),
            agent_proposed_slots=slots("agent_proposed_slots"),
            turn=int(obj.get("turn", turn)),
            kb_result_count=int(obj.get("kb_result_count", kb_result_count)),
        )

    def to_json(self) -> dict:
        return {
            "prev_agent_acts": [_frame_to_json(f) for f in self.prev_agent_acts],
            "user_acts": [_frame_to_json(f) for f in self.user_acts],
            "user_request_slots": list(self.user_request_slots),
            "user_inform_slots": list(self.user_inform_slots),
            "agent_request_slots": list(self.agent_request_slots),
            "agent_proposed_slots": list(self.agent_proposed_slots),
            "turn": self.turn,
        }


@dataclass(frozen=True)
class TurnRecord:
    dialogue_id: str
    turn_index: int
    speaker: str
    state: DialogueState
    target_acts: tuple[ActFrame, ...]
    split: str = "train"

    def to_json(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "speaker": self.speaker,
            "split": self.split,
            "state": self.state.to_json(),
            "kb_result_count": self.state.kb_result_count,
            "target_acts": [_frame_to_json(f) for f in self.target_acts],
        }


def _frame_from_json(obj: dict) -> ActFrame:
    return ActFrame(str(obj["act"]), tuple(str(s) for s in obj.get("slots", [])),
                    frozenset(str(s) for s in obj.get("valued", [])))


def _frame_to_json(frame: ActFrame) -> dict:
    out = {"act": frame.act, "slots": list(frame.slots)}
    if frame.valued:
        out["valued"] = [s for s in frame.slots if s in frame.valued]
    return out


# ------------------------------------------------------------------ parsing


def _split_top(text: str, sep: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "({[":
            depth += 1
        elif ch in ")}]":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_annotation(annotation: str) -> list[tuple[str, list[tuple[str, str | None]]]]:
    """Parse ``act(slot=value; slot) act2(...)`` keeping values: [(act, [(slot, value or None)])]."""
    out: list[tuple[str, list[tuple[str, str | None]]]] = []
    i, n = 0, len(annotation)
    while i < n:
        if annotation[i].isspace():
            i += 1
            continue
        start = i
        while i < n and (annotation[i].isalnum() or annotation[i] in "_-"):
            i += 1
        act = annotation[start:i]
        if not act:
            raise ParseError(f"expected act name at offset {start}: {annotation[start:start + 20]!r}")
        if i >= n or annotation[i] != "(":
            raise ParseError(f"expected '(' after act {act!r} at offset {i}")
        open_at = i
        depth = 0
        while i < n:
            ch = annotation[i]
            if ch in "({[":
                depth += 1
            elif ch in ")}]":
                depth -= 1
                if depth < 0:
                    raise ParseError(f"unbalanced {ch!r} at offset {i}")
                if depth == 0:
                    break
            i += 1
        if depth != 0:
            raise ParseError(f"unbalanced '(' opened at offset {open_at}")
        body = annotation[open_at + 1:i]
        i += 1
        slots = []
        for entry in _split_top(body, ";"):
            name, eq, value = entry.partition("=")
            name = name.strip()
            if name:
                slots.append((name, value.strip() if eq else None))
        out.append((act, slots))
    return out


def parse_frames(annotation: str) -> list[ActFrame]:
    """Parse ``act(slot=value; slot) act2(...)`` into frames, dropping values."""
    return [frame_from_parsed(act, slots) for act, slots in parse_annotation(annotation)]


def frame_from_parsed(act: str, slots: Sequence[tuple[str, str | None]]) -> ActFrame:
    return ActFrame(act, tuple(name for name, _ in slots),
                    frozenset(name for name, value in slots if value is not None))


def format_frames(frames: Iterable[ActFrame]) -> str:
    """Value-free annotation notation, e.g. ``inform(moviename;genre) multiple_choice(moviename)``."""
    return " ".join(str(f) for f in frames)


def canonical_frames(frames: Iterable[ActFrame], slot_order: Sequence[str]) -> list[ActFrame]:
    """Sort each frame's slots by vocabulary order; unknown slots go last, alphabetically."""
    rank = {s: i for i, s in enumerate(slot_order)}
    big = len(rank)
    return [ActFrame(f.act, tuple(sorted(f.slots, key=lambda s: (rank.get(s, big), s))), f.valued) for f in frames]


# ----------------------------------------------------------------- encodings


def to_cas_sequence(frames: Iterable[ActFrame]) -> list[CasTuple]:
    return [CasTuple(CONTINUE, f.act, f.slots) for f in frames] + [STOP_TUPLE]


def from_cas_sequence(tuples: Iterable[CasTuple]) -> list[ActFrame]:
    frames = []
    for t in tuples:
        if t.cont == STOP:
            break
        if t.cont == PAD or t.act == PAD:
            continue
        frames.append(ActFrame(t.act, t.slots))
    return frames


def format_cas_sequence(tuples: Iterable[CasTuple]) -> str:
    return " ".join(str(t) for t in tuples)


def to_token_sequence(frames: Iterable[ActFrame]) -> list[str]:
    tokens: list[str] = []
    for f in frames:
        tokens += [f.act, "("]
        for j, slot in enumerate(f.slots):
            if j:
                tokens.append(";")
            tokens += [slot, "="] if slot in f.valued else [slot]
        tokens.append(")")
    tokens.append(EOS)
    return tokens


def from_token_sequence(tokens: Iterable[str], acts: Iterable[str], slots: Iterable[str]) -> list[ActFrame]:
    """Lenient left-to-right scan of a (possibly malformed) decoded sequence.

    An act token opens a frame, slot tokens join the open frame, everything
    else is skipped; ``<eos>`` ends the scan.
    """
    acts, slots = set(acts), set(slots)
    frames: list[tuple[str, list[str], set]] = []
    prev = None
    for tok in tokens:
        if tok == EOS:
            break
        if tok in acts:
            frames.append((tok, [], set()))
        elif tok in slots and frames:
            frames[-1][1].append(tok)
        elif tok == "=" and frames and prev in slots:
            frames[-1][2].add(prev)
        prev = tok
    return [ActFrame(a, tuple(s), frozenset(v)) for a, s, v in frames]


def pair_name(act: str, slot: str | None) -> str:
    return f"{act}+{slot if slot is not None else NOSLOT}"


def frame_pairs(frame: ActFrame) -> list[str]:
    if not frame.slots:
        return [pair_name(frame.act, None)]
    return [pair_name(frame.act, s) for s in frame.slots]


def format_pairs(frames: Iterable[ActFrame]) -> str:
    return ", ".join(p for f in frames for p in frame_pairs(f))


def frames_from_pairs(pairs: Iterable[str]) -> list[ActFrame]:
    """Group ``act+slot`` names by act, keeping first-seen act and slot order."""
    grouped: dict[str, list[str]] = {}
    for p in pairs:
        act, slot = p.split("+", 1)
        grouped.setdefault(act, [])
        if slot != NOSLOT:
            grouped[act].append(slot)
    return [ActFrame(a, tuple(s)) for a, s in grouped.items()]


# --------------------------------------------------------------- vocabulary


class Index:
    """Bijective token <-> id map in insertion order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi[token]

    def get(self, token: str, default: int | None = None) -> int | None:
        return self.stoi.get(token, default)


@dataclass
class Vocabularies:
    acts: list[str]
    slots: list[str]
    pairs: list[str]
    state_tokens: Index
    target_tokens: Index
    act_index: Index = field(init=False)
    slot_index: Index = field(init=False)
    pair_index: Index = field(init=False)

    def __post_init__(self):
        # <pad> is a trainable act so the stop step has a target
        self.act_index = Index([PAD, *self.acts])
        self.slot_index = Index(self.slots)
        self.pair_index = Index(self.pairs)

    @property
    def n_real_pairs(self) -> int:
        return sum(1 for p in self.pairs if not p.endswith("+" + NOSLOT))

    def to_json(self) -> dict:
        return {
            "acts": self.acts,
            "slots": self.slots,
            "pairs": self.pairs,
            "state_tokens": self.state_tokens.itos,
            "target_tokens": self.target_tokens.itos,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabularies":
        return cls(list(obj["acts"]), list(obj["slots"]), list(obj["pairs"]),
                   Index(obj["state_tokens"]), Index(obj["target_tokens"]))

    def fingerprint(self) -> str:
        import hashlib

        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def build_vocabs(records: Sequence[TurnRecord]) -> Vocabularies:
    """Vocabularies in first-appearance order, from agent-target training records."""
    train = [r for r in records if r.split == "train" and r.speaker == "agent"]
    if not train:
        raise DataError("cannot build vocabularies: no agent turns in the training split")
    acts, slots, pairs = Index(), Index(), Index()
    state = Index([PAD, UNK, *SECTION_MARKERS])
    for r in train:
        for f in r.target_acts:
            acts.add(f.act)
            for s in f.slots:
                slots.add(s)
            for p in frame_pairs(f):
                pairs.add(p)
        for tok in _state_words(r.state):
            state.add(tok)
    target = Index([PAD, GO, EOS, UNK, *PUNCT, *acts.itos, *slots.itos])
    return Vocabularies(acts.itos, slots.itos, pairs.itos, state, target)


def _state_words(state: DialogueState) -> Iterable[str]:
    for name in SECTIONS:
        for item in getattr(state, name):
            if isinstance(item, ActFrame):
                yield item.act
                yield from item.slots
            else:
                yield item


# ------------------------------------------------------------ model inputs


def serialize_state(state: DialogueState, vocab: Vocabularies) -> list[int]:
    """Section marker followed by that section's tokens, for all six sections.

    Within slot sections (and within each frame) slots are sorted by
    state-vocabulary index so equal states serialize identically.
    """
    idx = vocab.state_tokens
    unk = idx[UNK]
    big = len(idx)

    def order(slots):
        return sorted(slots, key=lambda s: (idx.get(s, big), s))

    out: list[int] = []
    for name, marker in zip(SECTIONS, SECTION_MARKERS):
        out.append(idx[marker])
        for item in getattr(state, name) if "acts" in name else order(getattr(state, name)):
            if isinstance(item, ActFrame):
                out.append(idx.get(item.act, unk))
                out.extend(idx.get(s, unk) for s in order(item.slots))
            else:
                out.append(idx.get(item, unk))
    return out


def kb_features(state: DialogueState, max_turn: int = MAX_TURN) -> np.ndarray:
    """``[log(1 + kb results), turn / max_turn]``, the second entry clipped to 1."""
    return np.array([math.log1p(state.kb_result_count), min(state.turn / max_turn, 1.0)])


@dataclass(frozen=True)
class EncodedState:
    """A state already serialized to token ids, plus its KB feature vector."""

    ids: tuple[int, ...]
    k: tuple[float, float] = (0.0, 0.0)


def encode_state_input(item, vocab: Vocabularies) -> EncodedState:
    if isinstance(item, EncodedState):
        return item
    state = item.state if isinstance(item, TurnRecord) else item
    return EncodedState(tuple(serialize_state(state, vocab)), tuple(kb_features(state)))


def tokens_to_state_input(tokens: Sequence[str], vocab: Vocabularies, turn: int = 0,
                          kb_result_count: int = 0) -> EncodedState:
    idx = vocab.state_tokens
    ids = tuple(idx.get(t, idx[UNK]) for t in tokens)
    k = kb_features(DialogueState(turn=turn, kb_result_count=kb_result_count))
    return EncodedState(ids, tuple(k))


def state_multihot(item, vocab: Vocabularies) -> np.ndarray:
    """Section-qualified bag of serialized state tokens, followed by the KB vector.

    The same slot in two sections maps to two different features.
    """
    enc = encode_state_input(item, vocab)
    n = len(vocab.state_tokens)
    markers = {vocab.state_tokens[m]: k for k, m in enumerate(SECTION_MARKERS)}
    x = np.zeros(len(SECTIONS) * n)
    section = 0
    for t in enc.ids:
        if t in markers:
            section = markers[t]
        else:
            x[section * n + t] = 1.0
    return np.concatenate([x, np.asarray(enc.k)])


def to_pair_targets(frames: Iterable[ActFrame], vocab: Vocabularies) -> np.ndarray:
    y = np.zeros(len(vocab.pairs))
    for f in frames:
        for p in frame_pairs(f):
            i = vocab.pair_index.get(p)
            if i is None:
                log.warning("act-slot pair %s not in vocabulary; dropped", p)
                continue
            y[i] = 1.0
    return y


def encode_cas_targets(frames: Sequence[ActFrame], vocab: Vocabularies) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index form of the CAS sequence: continue ids, act ids, slot multi-hot rows."""
    tuples = to_cas_sequence(frames)
    c = np.array([CONTINUE_VOCAB.index(t.cont) for t in tuples], dtype=np.int64)
    a = np.zeros(len(tuples), dtype=np.int64)
    s = np.zeros((len(tuples), len(vocab.slots)))
    for i, t in enumerate(tuples):
        act_id = vocab.act_index.get(t.act)
        if act_id is None:
            log.warning("act %s not in vocabulary; treated as <pad>", t.act)
            act_id = vocab.act_index[PAD]
        a[i] = act_id
        for slot in t.slots:
            j = vocab.slot_index.get(slot)
            if j is None:
                log.warning("slot %s not in vocabulary; dropped", slot)
                continue
            s[i, j] = 1.0
    return c, a, s


def encode_target_tokens(frames: Sequence[ActFrame], vocab: Vocabularies) -> list[int]:
    idx = vocab.target_tokens
    unk = idx[UNK]
    return [idx.get(t, unk) for t in to_token_sequence(canonical_frames(frames, vocab.slots))]


# ---------------------------------------------------------------- datasets


def load_dataset(path: str | Path) -> list[TurnRecord]:
    """Read and validate a JSONL dataset file.

    Records without a ``split`` field are assigned one per dialogue by
    :func:`assign_splits`.
    """
    records: list[TurnRecord] = []
    has_split: list[bool] = []
    last_turn: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                speaker = obj["speaker"]
                if speaker not in SPEAKERS:
                    raise DataError(f"unknown speaker {speaker!r}")
                split = obj.get("split", "train")
                if split not in SPLITS:
                    raise DataError(f"unknown split {split!r}")
                did = str(obj["dialogue_id"])
                turn = int(obj["turn_index"])
                if did in last_turn and turn <= last_turn[did]:
                    raise DataError(f"turn_index {turn} not increasing in dialogue {did}")
                last_turn[did] = turn
                state = DialogueState.from_json(obj["state"], turn=min(turn, MAX_TURN),
                                                kb_result_count=int(obj.get("kb_result_count", 0)))
                target = tuple(_frame_from_json(f) for f in obj.get("target_acts", []))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            records.append(TurnRecord(did, turn, speaker, state, target, split))
            has_split.append("split" in obj)
    if records and not all(has_split):
        records = assign_splits(records)
    return records


def save_dataset(path: str | Path, records: Iterable[TurnRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


def split_sizes(n_dialogues: int) -> tuple[int, int, int]:
    """(train, valid, test) sizes: valid = floor(15%), test = floor(35%), train the rest."""
    valid = math.floor(n_dialogues * 15 / 100)
    test = math.floor(n_dialogues * 35 / 100)
    return n_dialogues - valid - test, valid, test


def assign_splits(records: Sequence[TurnRecord]) -> list[TurnRecord]:
    order = list(dict.fromkeys(r.dialogue_id for r in records))
    n_train, n_valid, _ = split_sizes(len(order))
    which = {}
    for i, did in enumerate(order):
        which[did] = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
    return [TurnRecord(r.dialogue_id, r.turn_index, r.speaker, r.state, r.target_acts, which[r.dialogue_id])
            for r in records]


def group_dialogues(records: Iterable[TurnRecord]) -> dict[str, list[TurnRecord]]:
    out: dict[str, list[TurnRecord]] = defaultdict(list)
    for r in records:
        out[r.dialogue_id].append(r)
    for turns in out.values():
        turns.sort(key=lambda r: r.turn_index)
    return dict(out)


def select(records: Iterable[TurnRecord], split: str | None = None, speaker: str | None = "agent") -> list[TurnRecord]:
    return [r for r in records
            if (split is None or r.split == split) and (speaker is None or r.speaker == speaker)]


def dataset_stats(records: Sequence[TurnRecord]) -> dict:
    """Split counts, vocabulary sizes and acts-per-turn histograms per speaker."""
    dialogues = {}
    for r in records:
        dialogues.setdefault(r.dialogue_id, r.split)
    split_counts = Counter(dialogues.values())
    hist: dict[str, Counter] = {s: Counter() for s in SPEAKERS}
    for r in records:
        hist[r.speaker][len(r.target_acts)] += 1

    def multi_fraction(counters):
        total = sum(n for c in counters for k, n in c.items() if k >= 1)
        multi = sum(n for c in counters for k, n in c.items() if k >= 2)
        return multi / total if total else 0.0

    acts, slots, pairs = set(), set(), set()
    for r in records:
        if r.speaker == "agent" and r.split == "train":
            for f in r.target_acts:
                acts.add(f.act)
                slots.update(f.slots)
                pairs.update(pair_name(f.act, s) for s in f.slots)
    return {
        "dialogues": {"total": len(dialogues), **{s: split_counts.get(s, 0) for s in SPLITS}},
        "acts_per_turn": {sp: {str(k): hist[sp][k] for k in sorted(hist[sp])} for sp in SPEAKERS},
        "multi_act_fraction": {
            "all": multi_fraction(hist.values()),
            "agent": multi_fraction([hist["agent"]]),
            "user": multi_fraction([hist["user"]]),
        },
        "train_vocab": {"acts": len(acts), "slots": len(slots), "pairs": len(pairs)},
    }


def format_stats(stats: dict) -> str:
    d = stats["dialogues"]
    lines = [f"dialogues: total {d['total']}, train {d['train']}, valid {d['valid']}, test {d['test']}"]
    v = stats["train_vocab"]
    lines.append(f"train vocabulary: acts {v['acts']}, slots {v['slots']}, pairs {v['pairs']}")
    lines.append(f"{'speaker':<8} " + " ".join(f"{k + ' act' + ('s' if k != '1' else ''):>8}" for k in ("1", "2", "3", "4")))
    for sp in SPEAKERS:
        h = stats["acts_per_turn"][sp]
        lines.append(f"{sp:<8} " + " ".join(f"{h.get(k, 0):>8}" for k in ("1", "2", "3", "4")))
    m = stats["multi_act_fraction"]
    lines.append(f"multi-act turns: all {100 * m['all']:.2f}%, agent {100 * m['agent']:.2f}%, user {100 * m['user']:.2f}%")
    return "\n".join(lines)
