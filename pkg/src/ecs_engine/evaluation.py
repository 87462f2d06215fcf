"""Scoring, math answer extraction, run records and accuracy aggregation."""

from __future__ import annotations

import csv
import json
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .datasets import LABELS
from .errors import ConfigError, MissingBaseline

PRECISION = 3


def score_multiple_choice(
    logits: np.ndarray, option_ids: Sequence[int], labels: Sequence[str] | None = None
) -> tuple[np.ndarray, str]:
    """Softmax over the option-token logits only; ties go to the earliest label."""
    option_ids = [int(i) for i in option_ids]
    if not 3 <= len(option_ids) <= 5:
        raise ConfigError(f"expected 3-5 option ids, got {len(option_ids)}")
    if len(set(option_ids)) != len(option_ids):
        raise ConfigError(f"duplicate option ids {option_ids}")
    logits = np.asarray(logits, dtype=np.float64)
    if any(not 0 <= i < logits.shape[-1] for i in option_ids):
        raise ConfigError(f"option ids {option_ids} outside logits of size {logits.shape[-1]}")
    labels = list(labels) if labels is not None else list(LABELS[: len(option_ids)])
    if len(labels) != len(option_ids):
        raise ConfigError("labels and option ids differ in length")
    restricted = logits[option_ids]
    exp = np.exp(restricted - restricted.max())
    probs = exp / exp.sum()
    # argmax on logits, not probabilities: the shift-free comparison is exact
    return probs, labels[int(np.argmax(restricted))]


# --- math answers ---------------------------------------------------------

_NUMBER = re.compile(r"(?<![\w.])-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:/\d+)?")
_ANSWER_IS = re.compile(r"answer\s+is\s*:?\s*", re.IGNORECASE)
_HASHES = re.compile(r"####\s*")
_FRAC = re.compile(r"\\frac\{(-?[\w.]+)\}\{(-?[\w.]+)\}")
_DIGIT_COMMA = re.compile(r"(?<=\d),(?=\d{3}(?!\d))")
_DECIMAL = re.compile(r"-?\d+\.\d+")


def _last_boxed(text: str) -> str | None:
    start = max(text.rfind("\\boxed{"), text.rfind("\\fbox{"))
    if start < 0:
        return None
    i = text.index("{", start) + 1
    depth, j = 1, i
    while j < len(text) and depth:
        if text[j] == "{":
            depth += 1
        elif text[j] == "}":
            depth -= 1
        j += 1
    if depth:
        return None
    return text[i : j - 1]


def normalize_answer(answer: str) -> str:
    """Canonical string form used for exact-match comparison.

    Removes whitespace, dollar signs, ``\\text{...}`` units, percent and degree
    marks, thousands separators, braces around the whole answer and trailing
    periods; rewrites ``\\frac{a}{b}`` as ``a/b`` and drops trailing zeros of
    decimals. Fractions ``a/b`` are kept as written.
    """
    s = answer.strip()
    s = s.replace("\\$", "").replace("$", "")
    s = s.replace("\\left", "").replace("\\right", "").replace("\\!", "").replace("\\,", "")
    s = s.replace("\\dfrac", "\\frac").replace("\\tfrac", "\\frac")
    stripped = re.sub(r"\\text\{[^}]*\}", "", s).strip()
    if stripped:
        s = stripped
    s = s.replace("^{\\circ}", "").replace("^\\circ", "")
    s = s.replace("\\%", "").rstrip("%")
    s = re.sub(r"\s+", "", s)
    s = _FRAC.sub(r"\1/\2", s)
    s = _DIGIT_COMMA.sub("", s)
    s = s.rstrip(".")
    while s.startswith("{") and s.endswith("}") and _balanced(s[1:-1]):
        s = s[1:-1]
    if _DECIMAL.fullmatch(s):
        s = s.rstrip("0").rstrip(".")
    if s == "-0":
        s = "0"
    return s


def _balanced(s: str) -> bool:
    depth = 0
    for ch in s:
        depth += ch == "{"
        depth -= ch == "}"
        if depth < 0:
            return False
    return depth == 0


def _answer_tail(tail: str) -> str | None:
    tail = tail.split("\n", 1)[0].strip()
    lead = re.match(r"(?:\\?\$\s*)?", tail)
    rest = tail[lead.end():]
    number = _NUMBER.match(rest)
    if number:
        return number.group(0)
    sentence = re.split(r"\.(?:\s|$)", tail, maxsplit=1)[0]
    return sentence or None


def extract_math_answer(generated: str) -> str | None:
    """Pull the final answer out of free-form text.

    Rules in priority order: last ``\\boxed{}``/``\\fbox{}``; last ``#### x``;
    last ``answer is x``; last number anywhere. The match is normalized with
    :func:`normalize_answer`; ``None`` when nothing is extractable.
    """
    candidate = _last_boxed(generated)
    if candidate is None:
        for pattern in (_HASHES, _ANSWER_IS):
            matches = list(pattern.finditer(generated))
            if matches:
                candidate = _answer_tail(generated[matches[-1].end():])
                if candidate:
                    break
    if candidate is None:
        numbers = _NUMBER.findall(generated)
        candidate = numbers[-1] if numbers else None
    if candidate is None:
        return None
    normalized = normalize_answer(candidate)
    return normalized or None


def answers_match(predicted: str | None, gold: str) -> bool:
    return predicted is not None and predicted == normalize_answer(gold)


# --- records and aggregation ----------------------------------------------

@dataclass
class RunRecord:
    sample_id: str
    filler_kind: str
    count: int
    position: str
    seed: int
    predicted: str | None
    gold: str
    correct: bool
    probabilities: dict[str, float] | None = None
    checkpoint: str = ""
    task_kind: str = "multiple_choice"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


@dataclass
class AggregateRow:
    kind: str
    count: int
    position: str
    seed_count: int
    accuracy: float
    baseline: float
    delta_pp: float
    improved: bool
    checkpoint: str = ""


@dataclass
class AggregateReport:
    rows: list[AggregateRow] = field(default_factory=list)

    def row(self, kind: str, count: int, position: str | None = None, checkpoint: str = "") -> AggregateRow:
        for r in self.rows:
            if (r.kind, r.count, r.checkpoint) == (kind, count, checkpoint) and position in (None, r.position):
                return r
        raise KeyError((kind, count, position, checkpoint))


def accuracy_pct(correct: int, total: int) -> float:
    return 100.0 * correct / total


def _round(x: float) -> float:
    return round(x, PRECISION)


def aggregate(records: Iterable[RunRecord]) -> AggregateReport:
    """Mean accuracy over seeds per (checkpoint, kind, M, position) with deltas vs M=0."""
    tallies: dict[tuple, dict[int, list[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    for rec in records:
        key = (rec.checkpoint, rec.filler_kind, rec.count, rec.position)
        tally = tallies[key][rec.seed]
        tally[0] += bool(rec.correct)
        tally[1] += 1
    if not tallies:
        return AggregateReport()

    accuracies = {}
    seed_sets = {}
    for key, per_seed in tallies.items():
        accuracies[key] = float(np.mean([accuracy_pct(c, n) for c, n in per_seed.values()]))
        seed_sets[key] = frozenset(per_seed)

    rows = []
    for key in sorted(tallies, key=lambda k: (k[0], k[1], k[3], k[2])):
        checkpoint, kind, count, position = key
        base_key = _baseline_key(key, accuracies)
        if seed_sets[key] != seed_sets[base_key]:
            raise ConfigError(
                f"group {kind}:{count}:{position} has seeds {sorted(seed_sets[key])}, "
                f"baseline has {sorted(seed_sets[base_key])}"
            )
        acc, base = _round(accuracies[key]), _round(accuracies[base_key])
        delta = _round(acc - base)
        rows.append(AggregateRow(
            kind=kind, count=count, position=position, seed_count=len(seed_sets[key]),
            accuracy=acc, baseline=base, delta_pp=delta, improved=delta > 0, checkpoint=checkpoint,
        ))
    return AggregateReport(rows)


def _baseline_key(key: tuple, accuracies: dict) -> tuple:
    checkpoint, kind, _, position = key
    preferred = (checkpoint, kind, 0, position)
    if preferred in accuracies:
        return preferred
    fallbacks = sorted(k for k in accuracies if k[0] == checkpoint and k[2] == 0)
    if not fallbacks:
        raise MissingBaseline(f"no M=0 group for checkpoint {checkpoint!r}")
    return fallbacks[0]


AGGREGATE_COLUMNS = ["kind", "M", "position", "seed_count", "accuracy", "baseline", "delta_pp", "improved"]


def write_aggregate_csv(report: AggregateReport, path: str | Path, with_checkpoint: bool = False) -> None:
    columns = (["checkpoint"] if with_checkpoint else []) + AGGREGATE_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in report.rows:
            row = [r.kind, r.count, r.position, r.seed_count,
                   f"{r.accuracy:.3f}", f"{r.baseline:.3f}", f"{r.delta_pp:+.3f}", str(r.improved).lower()]
            writer.writerow(([r.checkpoint] if with_checkpoint else []) + row)


def read_aggregate_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["M"] = int(row["M"])
        for col in ("accuracy", "baseline", "delta_pp"):
            row[col] = float(row[col])
        row["seed_count"] = int(row["seed_count"])
        row["improved"] = row["improved"] == "true"
    return rows


def write_records(records: Iterable[RunRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path: str | Path) -> list[RunRecord]:
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_json(line) for line in fh if line.strip()]
