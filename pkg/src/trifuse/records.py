"""Dataset records: one query with its three generated texts and a label.

The on-disk format is UTF-8 line-delimited JSON with the exact keys
``id, question, answer_direct, answer_cot, question_reverse, label,
label_status, split``. ``label`` is 0, 1, or null and must be present exactly
when ``label_status`` is ``confirmed``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DuplicateId, MalformedLine, MissingField
from .ioutil import iter_jsonl, write_jsonl

RECORD_FIELDS = (
    "id",
    "question",
    "answer_direct",
    "answer_cot",
    "question_reverse",
    "label",
    "label_status",
    "split",
)

LABEL_STATUSES = ("confirmed", "needs_review", "unlabeled")
SPLITS = ("train", "val", "test")


@dataclass
class Record:
    id: str
    question: str
    answer_direct: str = ""
    answer_cot: str = ""
    question_reverse: str = ""
    label: int | None = None
    label_status: str = "unlabeled"
    split: str = "train"

    def check(self, line_number: int | None = None) -> "Record":
        """Validate field invariants; raises MalformedLine on violation."""
        def bad(reason: str) -> MalformedLine:
            return MalformedLine(line_number if line_number is not None else 0, reason)

        if not isinstance(self.id, str) or not self.id:
            raise bad("record id must be a nonempty string")
        if not isinstance(self.question, str) or not self.question.strip():
            raise bad(f"record {self.id!r}: question must be nonempty")
        if self.label_status not in LABEL_STATUSES:
            raise bad(f"record {self.id!r}: bad label_status {self.label_status!r}")
        if self.split not in SPLITS:
            raise bad(f"record {self.id!r}: bad split {self.split!r}")
        if self.label_status == "confirmed":
            if self.label not in (0, 1):
                raise bad(f"record {self.id!r}: confirmed records need label 0 or 1")
        elif self.label is not None:
            raise bad(f"record {self.id!r}: label requires label_status=confirmed")
        return self

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in RECORD_FIELDS}

    @classmethod
    def from_dict(cls, obj: dict, line_number: int | None = None) -> "Record":
        if not isinstance(obj, dict):
            raise MalformedLine(line_number or 0, "record must be a JSON object")
        for name in RECORD_FIELDS:
            if name not in obj:
                raise MissingField(name, line_number)
        label = obj["label"]
        if label is not None:
            if label not in (0, 1):
                raise MalformedLine(line_number or 0, f"label must be 0, 1, or null, got {label!r}")
            label = int(label)
        return cls(
            id=obj["id"],
            question=obj["question"],
            answer_direct=obj["answer_direct"],
            answer_cot=obj["answer_cot"],
            question_reverse=obj["question_reverse"],
            label=label,
            label_status=obj["label_status"],
            split=obj["split"],
        ).check(line_number)


def load_dataset(path: str | Path) -> list[Record]:
    """Load records in file order; rejects duplicate ids."""
    records: list[Record] = []
    seen: set[str] = set()
    for lineno, obj in iter_jsonl(path):
        record = Record.from_dict(obj, line_number=lineno)
        if record.id in seen:
            raise DuplicateId(record.id)
        seen.add(record.id)
        records.append(record)
    return records


def save_dataset(records: Iterable[Record], path: str | Path) -> None:
    """Write records atomically, one JSON object per line, in order."""
    write_jsonl(path, (record.check().to_dict() for record in records))


def confirmed_split(
    records: Iterable[Record], split: str, include_unconfirmed: bool = False
) -> list[Record]:
    """Records of one split; by default only ones with a confirmed label."""
    out = []
    for record in records:
        if record.split != split:
            continue
        if record.label_status == "confirmed" or include_unconfirmed:
            out.append(record)
    return out
