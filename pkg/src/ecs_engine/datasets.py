"""Task samples: JSONL loading, validation, serialization, synthetic corpora."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DatasetError, RecordError, SchemaError

MULTIPLE_CHOICE = "multiple_choice"
FREE_FORM_MATH = "free_form_math"
KINDS = (MULTIPLE_CHOICE, FREE_FORM_MATH)
LABELS = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class TaskSample:
    id: str
    kind: str
    question: str
    gold: str
    options: tuple[tuple[str, str], ...] = ()
    context: str | None = None
    rationale: str | None = None
    category: str | None = None

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.options]

    def validate(self) -> None:
        if not self.id:
            raise SchemaError("sample id is empty")
        if self.kind not in KINDS:
            raise SchemaError(f"{self.id}: unknown kind {self.kind!r}")
        if not self.question:
            raise SchemaError(f"{self.id}: question is empty")
        if self.kind == MULTIPLE_CHOICE:
            if not 3 <= len(self.options) <= 5:
                raise SchemaError(f"{self.id}: {len(self.options)} options, expected 3-5")
            labels = self.labels
            if list(labels) != list(LABELS[: len(labels)]):
                raise SchemaError(f"{self.id}: option labels {labels} must run A, B, C, ...")
            if self.gold not in labels:
                raise SchemaError(f"{self.id}: gold {self.gold!r} is not among labels {labels}")
        else:
            if self.options:
                raise SchemaError(f"{self.id}: free-form samples carry no options")
            if not str(self.gold).strip():
                raise SchemaError(f"{self.id}: gold answer is empty")

    def to_record(self) -> dict:
        record: dict = {"id": self.id, "kind": self.kind}
        if self.context is not None:
            record["context"] = self.context
        record["question"] = self.question
        if self.options:
            record["options"] = [{"label": label, "text": text} for label, text in self.options]
        record["gold"] = self.gold
        if self.rationale is not None:
            record["rationale"] = self.rationale
        if self.category is not None:
            record["category"] = self.category
        return record


def sample_from_record(record: dict, kind: str | None = None) -> TaskSample:
    if not isinstance(record, dict):
        raise SchemaError("record is not an object")
    rec_kind = record.get("kind", kind)
    if kind is not None and rec_kind != kind:
        raise SchemaError(f"record kind {rec_kind!r} does not match requested {kind!r}")
    try:
        options = tuple((str(o["label"]), str(o["text"])) for o in record.get("options") or ())
        sample = TaskSample(
            id=str(record["id"]),
            kind=rec_kind,
            question=str(record["question"]),
            gold=str(record["gold"]),
            options=options,
            context=record.get("context"),
            rationale=record.get("rationale"),
            category=record.get("category"),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"missing or malformed field: {exc}") from None
    sample.validate()
    return sample


@dataclass
class LoadReport:
    samples: list[TaskSample] = field(default_factory=list)
    errors: list[DatasetError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def read_samples(path: str | Path, kind: str | None = None) -> LoadReport:
    """Parse every line, collecting valid samples and per-line errors."""
    report = LoadReport()
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                report.errors.append(RecordError(f"unparseable record ({exc.msg})", line=lineno))
                continue
            try:
                sample = sample_from_record(record, kind)
            except SchemaError as exc:
                report.errors.append(SchemaError(str(exc), line=lineno))
                continue
            if sample.id in seen:
                report.errors.append(SchemaError(f"duplicate id {sample.id!r}", line=lineno))
                continue
            seen.add(sample.id)
            report.samples.append(sample)
    return report


def load_samples(path: str | Path, kind: str | None = None) -> list[TaskSample]:
    """Load and validate a JSONL file; raises the first error if any record is bad."""
    report = read_samples(path, kind)
    if report.errors:
        first = report.errors[0]
        if len(report.errors) > 1:
            first.args = (f"{first.args[0]} (and {len(report.errors) - 1} more errors)",)
        raise first
    return report.samples


def dump_samples(samples: Iterable[TaskSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_record(), ensure_ascii=False) + "\n")


def generate_synthetic(seed: int, n: int, kind: str = MULTIPLE_CHOICE) -> list[TaskSample]:
    """Trivially solvable arithmetic items; a pure function of (seed, n, kind)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    rng = random.Random(f"{kind}:{seed}")
    tag = "mc" if kind == MULTIPLE_CHOICE else "math"
    samples = []
    for i in range(n):
        a, b = rng.randint(1, 20), rng.randint(1, 20)
        total = a + b
        sid = f"syn-{tag}-{seed}-{i:05d}"
        if kind == MULTIPLE_CHOICE:
            n_options = rng.choice((3, 4, 4, 4, 5))
            values = {total}
            while len(values) < n_options:
                values.add(max(0, total + rng.randint(-6, 6)))
            values.discard(total)
            ordered = sorted(values)
            rng.shuffle(ordered)
            gold_index = rng.randrange(n_options)
            ordered.insert(gold_index, total)
            options = tuple((LABELS[j], str(v)) for j, v in enumerate(ordered))
            samples.append(TaskSample(
                id=sid, kind=kind, question=f"Which option equals {a}+{b}?",
                gold=LABELS[gold_index], options=options, category="synthetic",
            ))
        else:
            samples.append(TaskSample(
                id=sid, kind=kind, question=f"What is {a} plus {b}?",
                gold=str(total), rationale=f"{a} plus {b} equals {total}.", category="synthetic",
            ))
    return samples
