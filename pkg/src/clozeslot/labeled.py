"""Labeled slot data: one record per (utterance, slot) with an optional value span."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator


@dataclass(frozen=True)
class LabeledExample:
    text: str
    slot: str
    span: tuple[int, int] | None
    requested: bool = False
    source_id: str = ""

    def __post_init__(self):
        if self.span is not None:
            s, e = self.span
            if not 0 <= s < e <= len(self.text):
                raise ValueError(f"span {self.span} is empty or outside text of length {len(self.text)}")

    @property
    def value(self) -> str | None:
        return None if self.span is None else self.text[self.span[0] : self.span[1]]

    def to_json(self) -> str:
        obj = {
            "text": self.text,
            "slot": self.slot,
            "span": list(self.span) if self.span is not None else None,
            "requested": self.requested,
            "id": self.source_id,
        }
        return json.dumps(obj, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_obj(cls, obj: dict) -> "LabeledExample":
        span = obj.get("span")
        return cls(
            obj["text"], obj["slot"], tuple(span) if span is not None else None, bool(obj.get("requested", False)),
            str(obj.get("id", "")),
        )


def write_labeled(examples: Iterable[LabeledExample], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")
            n += 1
    return n


def read_labeled(path: str | Path) -> list[LabeledExample]:
    with open(path, encoding="utf-8") as fh:
        return [LabeledExample.from_obj(json.loads(line)) for line in fh if line.strip()]


def import_nested(records: Iterable[dict], slots: Iterable[str] | None = None, prefix: str = "") -> list[LabeledExample]:
    """Convert restaurants-8k-style records into one example per (utterance, slot).

    Each record looks like::

        {"userInput": {"text": "..."},
         "context": {"requestedSlots": ["time"]},
         "labels": [{"slot": "time", "valueSpan": {"startIndex": 4, "endIndex": 7}}]}

    A missing ``startIndex`` means 0. Slots with no label in a record become
    negative examples. ``slots`` defaults to every slot seen in ``records``.
    """
    records = list(records)
    if slots is None:
        slots = sorted({lab["slot"] for rec in records for lab in rec.get("labels", [])})
    slots = list(slots)
    out = []
    for n, rec in enumerate(records):
        text = rec["userInput"]["text"]
        requested = set(rec.get("context", {}).get("requestedSlots", []))
        spans = {}
        for lab in rec.get("labels", []):
            vs = lab.get("valueSpan", {})
            spans[lab["slot"]] = (int(vs.get("startIndex", 0)), int(vs["endIndex"]))
        for slot in slots:
            out.append(LabeledExample(text, slot, spans.get(slot), slot in requested, f"{prefix}{n}"))
    return out


def read_nested(path: str | Path, slots: Iterable[str] | None = None) -> list[LabeledExample]:
    """Load a nested-format file: a JSON list, or JSONL with one record per line."""
    raw = Path(path).read_text(encoding="utf-8").strip()
    records = json.loads(raw) if raw.startswith("[") else [json.loads(l) for l in raw.splitlines() if l.strip()]
    return import_nested(records, slots)


def iter_slot(examples: Iterable[LabeledExample], slot: str) -> Iterator[LabeledExample]:
    return (ex for ex in examples if ex.slot == slot)
