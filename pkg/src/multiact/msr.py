"""Convert the MSR e2e dialogue challenge TSV files into the JSONL dataset schema.

Input: ``<domain>_all.tsv`` with columns ``session.ID, Message.ID,
Message.Timestamp, Message.from, Message.Text`` followed by one or more act
annotation columns.  An optional ``kb_result_count`` column, when present in
the header, is copied onto the records.

The dialogue state handed to each turn is accumulated from the annotated
acts of the earlier turns.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .data import (ActFrame, DialogueState, MAX_TURN, ParseError, TurnRecord, assign_splits, frame_from_parsed,
                   parse_annotation)

log = logging.getLogger(__name__)

DOMAINS = ("movie", "taxi", "restaurant")


@dataclass
class _Turn:
    speaker: str
    acts: list = field(default_factory=list)  # [(act, [(slot, value or None)])]
    kb: int | None = None


def source_path(msr_dir: str | Path, domain: str) -> Path:
    return Path(msr_dir) / f"{domain}_all.tsv"


def _read_sessions(path: Path) -> dict[str, list[_Turn]]:
    sessions: dict[str, list[_Turn]] = {}
    kb_col = None
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE), 1):
            if not row or not row[0].strip():
                continue
            if lineno == 1 and not row[0].strip().isdigit():
                lowered = [c.strip().lower() for c in row]
                kb_col = lowered.index("kb_result_count") if "kb_result_count" in lowered else None
                continue
            if len(row) < 4:
                log.warning("%s:%d: short row skipped", path, lineno)
                continue
            sid, speaker = row[0].strip(), row[3].strip().lower()
            if speaker not in ("user", "agent"):
                log.warning("%s:%d: unknown speaker %r skipped", path, lineno, speaker)
                continue
            extra = [c for j, c in enumerate(row[5:], 5) if j != kb_col]
            try:
                acts = parse_annotation(" ".join(c.strip() for c in extra if c.strip()))
            except ParseError as exc:
                log.warning("%s:%d: unparseable acts skipped (%s)", path, lineno, exc)
                acts = []
            kb = None
            if kb_col is not None and kb_col < len(row) and row[kb_col].strip():
                kb = int(float(row[kb_col]))
            turns = sessions.setdefault(sid, [])
            # consecutive messages from one speaker form one turn
            if turns and turns[-1].speaker == speaker:
                turns[-1].acts += acts
                turns[-1].kb = kb if kb is not None else turns[-1].kb
            else:
                turns.append(_Turn(speaker, acts, kb))
    return sessions


def _frames(acts) -> tuple[ActFrame, ...]:
    return tuple(frame_from_parsed(a, slots) for a, slots in acts)


def _dialogue_records(sid: str, turns: list[_Turn]) -> list[TurnRecord]:
    records = []
    prev_agent: tuple = ()
    last_user: tuple = ()
    user_req: dict[str, None] = {}
    user_inf: dict[str, None] = {}
    agent_req: dict[str, None] = {}
    agent_prop: dict[str, None] = {}
    for i, turn in enumerate(turns):
        frames = _frames(turn.acts)
        state = DialogueState(
            prev_agent_acts=prev_agent,
            user_acts=last_user if turn.speaker == "agent" else (),
            user_request_slots=tuple(user_req),
            user_inform_slots=tuple(user_inf),
            agent_request_slots=tuple(agent_req),
            agent_proposed_slots=tuple(agent_prop),
            turn=min(i, MAX_TURN),
            kb_result_count=max(turn.kb or 0, 0),
        )
        records.append(TurnRecord(sid, i, turn.speaker, state, frames))
        for act, slots in turn.acts:
            for slot, value in slots:
                if turn.speaker == "user":
                    if value is not None:
                        user_inf[slot] = None
                        agent_req.pop(slot, None)
                    elif act == "request":
                        user_req[slot] = None
                else:
                    if act == "request" and value is None:
                        agent_req[slot] = None
                    elif value is not None or act in ("inform", "multiple_choice"):
                        agent_prop[slot] = None
                        user_req.pop(slot, None)
        if turn.speaker == "agent":
            prev_agent = frames
        else:
            last_user = frames
    return records


def convert(msr_dir: str | Path, domain: str) -> list[TurnRecord]:
    """Read ``<domain>_all.tsv`` and return split-assigned records in session order."""
    path = source_path(msr_dir, domain)
    if not path.is_file():
        raise FileNotFoundError(path)
    sessions = _read_sessions(path)
    order = sorted(sessions, key=lambda s: (0, int(s)) if s.isdigit() else (1, s))
    records = [r for sid in order for r in _dialogue_records(sid, sessions[sid])]
    return assign_splits(records)
