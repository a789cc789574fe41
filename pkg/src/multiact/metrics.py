"""Turn-level act/frame scores, dialogue-level Entity/Success F1, inform-slot breakdowns.

Counts are summed over turns (or dialogues) before precision and recall are
taken (micro averaging); per-turn macro averages are reported alongside for
acts and frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .data import ActFrame, TurnRecord, group_dialogues

CRITICAL, NON_CRITICAL = "critical", "non-critical"
FILTERS = ("all", CRITICAL, NON_CRITICAL)


@dataclass(frozen=True)
class PRF:
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0

    @property
    def precision(self) -> float:
        return self.tp / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.n_gold if self.n_gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.n_pred + other.n_pred, self.n_gold + other.n_gold)

    @classmethod
    def from_sets(cls, pred: set, gold: set) -> "PRF":
        return cls(len(pred & gold), len(pred), len(gold))

    def to_json(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "pred": self.n_pred, "gold": self.n_gold}


def _total(parts: Iterable[PRF]) -> PRF:
    out = PRF()
    for p in parts:
        out = out + p
    return out


@dataclass
class TurnEval:
    pred: Sequence[ActFrame]
    gold: Sequence[ActFrame]
    # slots the user had informed by this turn; decides criticality
    user_informed: frozenset = frozenset()


@dataclass
class DialogueEval:
    agent_requested: set = field(default_factory=set)
    user_informed_kb: set = field(default_factory=set)
    agent_informed: set = field(default_factory=set)
    user_requested: set = field(default_factory=set)


def act_prf(turns: Iterable[TurnEval]) -> PRF:
    return _total(PRF.from_sets({f.act for f in t.pred}, {f.act for f in t.gold}) for t in turns)


def frame_prf(turns: Iterable[TurnEval]) -> PRF:
    return _total(PRF.from_sets({f.key() for f in t.pred}, {f.key() for f in t.gold}) for t in turns)


def macro(turns: Sequence[TurnEval], level: str = "frame") -> dict:
    fn = frame_prf if level == "frame" else act_prf
    scores = [fn([t]) for t in turns]
    n = len(scores) or 1
    return {"precision": sum(s.precision for s in scores) / n,
            "recall": sum(s.recall for s in scores) / n,
            "f1": sum(s.f1 for s in scores) / n}


def entity_f1(dialogues: Iterable[DialogueEval]) -> PRF:
    return _total(PRF.from_sets(d.agent_requested, d.user_informed_kb) for d in dialogues)


def success_f1(dialogues: Iterable[DialogueEval]) -> PRF:
    return _total(PRF.from_sets(d.agent_informed, d.user_requested) for d in dialogues)


def _inform_slots(frames: Iterable[ActFrame], act: str = "inform") -> set:
    return {s for f in frames if f.act == act for s in f.slots}


def classify_slot_criticality(turns: Sequence[TurnRecord]) -> list[dict[str, str]]:
    """Criticality of every gold inform slot, one map per agent turn.

    A slot is non-critical when the user informed it (with a value) at an
    earlier point of the dialogue, including the user message the agent is
    answering; otherwise it is critical.
    """
    turns = sorted(turns, key=lambda r: r.turn_index)
    out = []
    for informed, rec in zip(user_informed_history(turns), (r for r in turns if r.speaker == "agent")):
        out.append({s: NON_CRITICAL if s in informed else CRITICAL for s in _inform_slots(rec.target_acts)})
    return out


def user_informed_history(turns: Sequence[TurnRecord]) -> list[frozenset]:
    """For each agent turn (in order), the slots the user had informed so far."""
    informed: set = set()
    out = []
    for r in sorted(turns, key=lambda r: r.turn_index):
        if r.speaker == "user":
            informed |= _inform_slots(r.target_acts)
            continue
        informed |= _inform_slots(r.state.user_acts)
        informed |= set(r.state.user_inform_slots)
        out.append(frozenset(informed))
    return out


def inform_slot_prf(turns: Iterable[TurnEval], criticality: str = "all") -> PRF:
    if criticality not in FILTERS:
        raise ValueError(f"criticality filter must be one of {FILTERS}")
    parts = []
    for t in turns:
        pred, gold = _inform_slots(t.pred), _inform_slots(t.gold)
        if criticality == CRITICAL:
            pred, gold = pred - t.user_informed, gold - t.user_informed
        elif criticality == NON_CRITICAL:
            pred, gold = pred & t.user_informed, gold & t.user_informed
        parts.append(PRF.from_sets(pred, gold))
    return _total(parts)


# ------------------------------------------------------------ whole corpus


def build_evals(records: Sequence[TurnRecord], predictions: dict[tuple[str, int], list[ActFrame]],
                success_acts: str = "inform") -> tuple[list[TurnEval], list[DialogueEval]]:
    """Pair gold agent turns with predictions keyed by (dialogue id, turn index).

    ``success_acts`` is ``"inform"`` (slots of predicted inform acts count as
    provided) or ``"all"`` (slots of every predicted act).
    """
    turns: list[TurnEval] = []
    dialogues: list[DialogueEval] = []
    for did, recs in group_dialogues(records).items():
        agent = [r for r in recs if r.speaker == "agent"]
        if not agent:
            continue
        history = user_informed_history(recs)
        d = DialogueEval()
        informed_kb: set = set()
        for rec, informed in zip(agent, history):
            pred = predictions.get((did, rec.turn_index), [])
            turns.append(TurnEval(pred, rec.target_acts, informed))
            d.agent_requested |= {s for f in pred if f.act == "request" for s in f.slots}
            if success_acts == "all":
                d.agent_informed |= {s for f in pred for s in f.slots}
            else:
                d.agent_informed |= _inform_slots(pred)
            d.user_requested |= set(rec.state.user_request_slots)
            d.user_requested |= {s for f in rec.state.user_acts if f.act == "request" for s in f.slots}
            if rec.state.kb_result_count > 0:
                informed_kb |= set(rec.state.user_inform_slots)
        # no KB result recorded: fall back to everything the user informed
        d.user_informed_kb = informed_kb if informed_kb else set(history[-1])
        dialogues.append(d)
    return turns, dialogues


def metrics_report(turns: Sequence[TurnEval], dialogues: Sequence[DialogueEval]) -> dict:
    return {
        "act": act_prf(turns).to_json(),
        "frame": frame_prf(turns).to_json(),
        "act_macro": macro(turns, "act"),
        "frame_macro": macro(turns, "frame"),
        "entity_f1": entity_f1(dialogues).to_json(),
        "success_f1": success_f1(dialogues).to_json(),
        "inform_all": inform_slot_prf(turns, "all").to_json(),
        "inform_critical": inform_slot_prf(turns, CRITICAL).to_json(),
        "inform_non_critical": inform_slot_prf(turns, NON_CRITICAL).to_json(),
        "turns": len(turns),
        "dialogues": len(dialogues),
    }


def format_report(report: dict, name: str = "model") -> str:
    """Aligned plain-text tables: task completion, then act/frame PRF, then inform-slot PRF."""

    def prf_cells(key):
        r = report[key]
        return [f"{100 * r['precision']:6.2f}", f"{100 * r['recall']:6.2f}", f"{100 * r['f1']:6.2f}"]

    w = max(len(name), 8)
    lines = [f"{'':<{w}} | {'Entity F1':>9} | {'Success F1':>10}",
             f"{name:<{w}} | {100 * report['entity_f1']['f1']:9.2f} | {100 * report['success_f1']['f1']:10.2f}",
             ""]
    for title, keys in (("Act / Frame", ("act", "frame")),
                        ("Inform slots", ("inform_all", "inform_non_critical", "inform_critical"))):
        header = " | ".join(f"{k:^22}" for k in keys)
        sub = " | ".join(f"{'P':>6} {'R':>6} {'F1':>6}  " for _ in keys)
        row = " | ".join(" ".join(prf_cells(k)) + "  " for k in keys)
        lines += [title, f"{'':<{w}} | {header}", f"{'':<{w}} | {sub}", f"{name:<{w}} | {row}", ""]
    return "\n".join(lines).rstrip() + "\n"
