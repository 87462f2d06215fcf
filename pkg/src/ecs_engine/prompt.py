"""Prompt assembly with filler insertion, and extraction of the filler-induced hidden states."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .datasets import MULTIPLE_CHOICE, TaskSample
from .errors import CaptureMissing, ContextOverflow, TemplateError
from .model import ForwardResult
from .tokenizer import FillerKind, Vocabulary, filler_ids

SEGMENTS = (
    "chat", "instruction", "context", "question", "options", "rationale", "chat_end", "answer_cue",
)


class Position(str, Enum):
    before_answer_cue = "before_answer_cue"
    after_answer_cue = "after_answer_cue"


@dataclass(frozen=True)
class FillerSpec:
    kind: FillerKind
    count: int
    position: Position = Position.before_answer_cue

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FillerKind(self.kind))
        object.__setattr__(self, "position", Position(self.position))
        if not isinstance(self.count, int) or self.count < 0:
            raise ValueError(f"filler count must be a non-negative integer, got {self.count!r}")

    @classmethod
    def parse(cls, text: str) -> "FillerSpec":
        """Parse ``kind:M[:position]``, e.g. ``space:16:before_answer_cue``."""
        parts = text.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"filler spec {text!r} is not kind:M[:position]")
        position = parts[2] if len(parts) == 3 else Position.before_answer_cue
        return cls(FillerKind(parts[0]), int(parts[1]), Position(position))

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.count}:{self.position.value}"


@dataclass(frozen=True)
class PromptTemplate:
    order: tuple[str, ...] = SEGMENTS
    separator: str = "\n"
    chat_prefix: str = "<|user|>"
    chat_end: str = "<eot>\n<|assistant|>"
    instruction_multiple_choice: str = (
        "This is a multiple-choice question. Choose the correct option letter."
    )
    instruction_math: str = "Solve the problem step by step."
    context_prefix: str = "Context: "
    question_prefix: str = "Question: "
    option_prefix: str = "{label}. "
    option_separator: str = "\n"
    rationale_prefix: str = ""

    def __post_init__(self) -> None:
        order = tuple(self.order)
        object.__setattr__(self, "order", order)
        unknown = [s for s in order if s not in SEGMENTS]
        if unknown:
            raise TemplateError(f"unknown segments {unknown}")
        if len(set(order)) != len(order):
            raise TemplateError("segments repeat in template order")
        if "question" not in order or "answer_cue" not in order:
            raise TemplateError("template must contain question and answer_cue")
        if order[-1] != "answer_cue":
            raise TemplateError("answer_cue must be the final segment")
        ranks = [SEGMENTS.index(s) for s in order]
        if ranks != sorted(ranks):
            raise TemplateError(f"segments must follow the order {' -> '.join(SEGMENTS)}")

    @classmethod
    def load(cls, path: str | Path) -> "PromptTemplate":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise TemplateError(f"{path}: template must be a mapping")
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise TemplateError(f"{path}: unknown template keys {sorted(extra)}")
        if "order" in data:
            data["order"] = tuple(data["order"])
        return cls(**data)


@dataclass(frozen=True)
class PromptTokens:
    tokens: tuple[int, ...]
    base_length: int
    ecs_range: range
    answer_cue_index: int
    spans: dict[str, range] = field(default_factory=dict)
    filler: FillerSpec | None = None
    sample_id: str = ""

    @property
    def filler_count(self) -> int:
        return len(self.ecs_range)

    def __len__(self) -> int:
        return len(self.tokens)

    def option_spans(self) -> dict[str, range]:
        return {k.split(":", 1)[1]: v for k, v in self.spans.items() if k.startswith("option:")}


@dataclass(frozen=True)
class EcsTensor:
    layers: tuple[np.ndarray, ...]
    ecs_range: range

    @property
    def num_vectors(self) -> int:
        return len(self.ecs_range)


def _segment_pieces(sample: TaskSample, template: PromptTemplate) -> list[list[tuple[str | None, str | None]]]:
    """(span name or None, text) pieces, grouped by non-empty segment."""
    segments = []
    for name in template.order:
        pieces: list[tuple[str | None, str]] = []
        if name == "chat":
            if template.chat_prefix:
                pieces.append(("chat", template.chat_prefix))
        elif name == "instruction":
            text = (
                template.instruction_multiple_choice
                if sample.kind == MULTIPLE_CHOICE
                else template.instruction_math
            )
            if text:
                pieces.append(("instruction", text))
        elif name == "context":
            if sample.context:
                pieces += [(None, template.context_prefix), ("context", sample.context)]
        elif name == "question":
            pieces += [(None, template.question_prefix), ("question", sample.question)]
        elif name == "options":
            for i, (label, text) in enumerate(sample.options):
                if i:
                    pieces.append((None, template.option_separator))
                pieces += [(None, template.option_prefix.format(label=label)), (f"option:{label}", text)]
        elif name == "rationale":
            if sample.rationale:
                pieces += [(None, template.rationale_prefix), ("rationale", sample.rationale)]
        elif name == "chat_end":
            if template.chat_end:
                pieces.append(("chat_end", template.chat_end))
        elif name == "answer_cue":
            pieces.append(("answer_cue", None))
        if pieces:
            segments.append(pieces)
    return segments


def assemble(
    sample: TaskSample,
    filler: FillerSpec | None,
    template: PromptTemplate,
    vocab: Vocabulary,
    max_context: int | None = None,
) -> PromptTokens:
    """Build the token sequence for ``sample`` with fillers placed around the answer cue.

    Indices are 0-based and intervals half-open. With fillers before the cue
    the cue is the final token; after the cue the fillers are the last M tokens.
    ``filler=None`` is the plain no-filler path.
    """
    tokens: list[int] = []
    spans: dict[str, range] = {}
    count = filler.count if filler is not None else 0
    fill = filler_ids(vocab, filler.kind, count) if filler is not None else []
    ecs = range(0, 0)
    cue_index = -1
    for seg_index, pieces in enumerate(_segment_pieces(sample, template)):
        if seg_index:
            tokens += vocab.encode(template.separator)
        for name, text in pieces:
            if name == "answer_cue":
                if fill and filler.position is Position.before_answer_cue:
                    ecs = range(len(tokens), len(tokens) + count)
                    tokens += fill
                cue_index = len(tokens)
                tokens.append(vocab.answer_cue_id)
                spans["answer_cue"] = range(cue_index, cue_index + 1)
                if fill and filler.position is Position.after_answer_cue:
                    ecs = range(len(tokens), len(tokens) + count)
                    tokens += fill
                continue
            start = len(tokens)
            tokens += vocab.encode(text)
            if name is not None:
                spans[name] = range(start, len(tokens))
    base_length = len(tokens) - count
    if count:
        spans["fillers"] = ecs
    if max_context is not None and len(tokens) > max_context:
        raise ContextOverflow(
            f"sample {sample.id}: assembled length {len(tokens)} exceeds max_context {max_context}"
        )
    return PromptTokens(
        tokens=tuple(tokens),
        base_length=base_length,
        ecs_range=ecs,
        answer_cue_index=cue_index,
        spans=spans,
        filler=filler,
        sample_id=sample.id,
    )


def extract_ecs(result: ForwardResult, prompt: PromptTokens) -> EcsTensor:
    """Per-layer hidden-state rows at the filler positions (embedding layer included)."""
    if result.hidden_states is None:
        raise CaptureMissing("forward pass did not capture hidden states")
    length = len(prompt.tokens)
    for layer, states in enumerate(result.hidden_states):
        if states.shape[0] != length:
            raise CaptureMissing(
                f"layer {layer} has {states.shape[0]} positions but the prompt has {length}"
            )
    sl = slice(prompt.ecs_range.start, prompt.ecs_range.stop)
    return EcsTensor(
        layers=tuple(np.array(states[sl]) for states in result.hidden_states),
        ecs_range=prompt.ecs_range,
    )


def baseline_position_map(prompt: PromptTokens) -> list[int]:
    """For each position of ``prompt``, the matching index in the M=0 assembly, or -1 for fillers."""
    out = []
    shift = 0
    for i in range(len(prompt.tokens)):
        if i in prompt.ecs_range:
            out.append(-1)
            shift += 1
        else:
            out.append(i - shift)
    return out


def without_fillers(spec: FillerSpec) -> FillerSpec:
    return replace(spec, count=0)
