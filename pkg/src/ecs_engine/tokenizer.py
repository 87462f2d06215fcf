"""Declared word/char vocabulary with longest-match encoding.

Every filler kind maps to exactly one token id, so inserting M fillers always
lengthens a prompt by exactly M positions.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MissingFiller, UnknownToken, VocabularyError


class FillerKind(str, Enum):
    space = "space"
    enter = "enter"
    tab = "tab"
    period = "period"
    pad = "pad"
    dash = "dash"


FILLER_SURFACES = {
    FillerKind.space: " ",
    FillerKind.enter: "\n",
    FillerKind.tab: "\t",
    FillerKind.period: ".",
    FillerKind.pad: "<pad>",
    FillerKind.dash: "-",
}

SPECIAL_STRINGS = {"pad": "<pad>", "eos": "<eos>", "eot": "<eot>", "unknown": "<unk>"}
OPTION_LETTERS = ("A", "B", "C", "D", "E")
ANSWER_CUE = "Answer:"

_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\t": "\\t"}
_UNESCAPES = {"\\": "\\", "n": "\n", "t": "\t"}


def escape(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def unescape(text: str) -> str:
    out = []
    chars = iter(text)
    for ch in chars:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(chars, None)
        if nxt not in _UNESCAPES:
            raise VocabularyError(f"bad escape sequence in {text!r}")
        out.append(_UNESCAPES[nxt])
    return "".join(out)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    classes: tuple[frozenset[str], ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)
    _max_len: int = field(init=False, repr=False, compare=False)
    _by_class: dict[str, list[int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.classes):
            raise VocabularyError("tokens and classes differ in length")
        index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok == "":
                raise VocabularyError(f"id {i} has an empty string")
            if tok in index:
                raise VocabularyError(f"string {tok!r} appears under ids {index[tok]} and {i}")
            index[tok] = i
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_max_len", max((len(t) for t in self.tokens), default=1))
        by_class: dict[str, list[int]] = {}
        for i, cls in enumerate(self.classes):
            for c in cls:
                by_class.setdefault(c, []).append(i)
        object.__setattr__(self, "_by_class", by_class)
        for name, surface in SPECIAL_STRINGS.items():
            if surface not in index:
                raise VocabularyError(f"missing special token {surface}")
        for kind in FillerKind:
            if not self._ids_with_class(f"filler:{kind.value}"):
                raise VocabularyError(f"no token registered for filler kind {kind.value}")
            if len(self._ids_with_class(f"filler:{kind.value}")) > 1:
                raise VocabularyError(f"filler kind {kind.value} registered more than once")
        for letter in OPTION_LETTERS:
            if len(self._ids_with_class(f"option:{letter}")) != 1:
                raise VocabularyError(f"option letter {letter} must be registered exactly once")
        if len(self._ids_with_class("answer_cue")) != 1:
            raise VocabularyError("exactly one answer_cue entry is required")

    def _ids_with_class(self, cls: str) -> list[int]:
        return self._by_class.get(cls, [])

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._index["<pad>"]

    @property
    def eos_id(self) -> int:
        return self._index["<eos>"]

    @property
    def eot_id(self) -> int:
        return self._index["<eot>"]

    @property
    def unknown_id(self) -> int:
        return self._index["<unk>"]

    @property
    def answer_cue_id(self) -> int:
        return self._ids_with_class("answer_cue")[0]

    def option_id(self, letter: str) -> int:
        ids = self._ids_with_class(f"option:{letter}")
        if not ids:
            raise VocabularyError(f"no option token for {letter!r}")
        return ids[0]

    def option_ids(self, letters: Sequence[str]) -> list[int]:
        return [self.option_id(letter) for letter in letters]

    def filler_id(self, kind: FillerKind | str) -> int:
        try:
            kind = FillerKind(kind)
        except ValueError:
            raise MissingFiller(f"unknown filler kind {kind!r}") from None
        ids = self._ids_with_class(f"filler:{kind.value}")
        if not ids:
            raise MissingFiller(f"filler kind {kind.value} is not registered")
        return ids[0]

    def token_id(self, text: str) -> int:
        try:
            return self._index[text]
        except KeyError:
            raise UnknownToken(f"{text!r} is not a vocabulary entry") from None

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        pos, n = 0, len(text)
        while pos < n:
            for length in range(min(self._max_len, n - pos), 0, -1):
                tid = self._index.get(text[pos : pos + length])
                if tid is not None:
                    ids.append(tid)
                    pos += length
                    break
            else:
                ids.append(self.unknown_id)
                pos += 1
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise UnknownToken(f"id {i} outside vocabulary of {len(self.tokens)}")
            out.append(self.tokens[i])
        return "".join(out)

    def with_filler_alias(self, kind: FillerKind | str, target_id: int) -> "Vocabulary":
        """Copy with ``kind`` resolving to ``target_id`` (e.g. pad aliased to eos)."""
        kind = FillerKind(kind)
        cls = f"filler:{kind.value}"
        classes = [set(c) - {cls} for c in self.classes]
        classes[target_id].add(cls)
        return Vocabulary(self.tokens, tuple(frozenset(c) for c in classes))

    def save(self, path: str | Path) -> None:
        lines = []
        for i, (tok, cls) in enumerate(zip(self.tokens, self.classes)):
            for c in sorted(cls) or ["normal"]:
                lines.append(f"{i}\t{escape(tok)}\t{c}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        """Parse ``<id>\\t<escaped-string>\\t<class>`` lines.

        An id may appear on several lines with the same string; the classes
        accumulate, which is how aliases such as ``2\\t<eos>\\tfiller:pad``
        are declared.
        """
        tokens: dict[int, str] = {}
        classes: dict[int, set[str]] = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
            if not raw.strip():
                continue
            parts = raw.split("\t")
            if len(parts) != 3:
                raise VocabularyError(f"line {lineno}: expected 3 tab-separated fields")
            try:
                tid = int(parts[0])
            except ValueError:
                raise VocabularyError(f"line {lineno}: bad id {parts[0]!r}") from None
            tok = unescape(parts[1])
            if tid in tokens and tokens[tid] != tok:
                raise VocabularyError(f"line {lineno}: id {tid} redeclared with a different string")
            _check_class(parts[2], lineno)
            tokens[tid] = tok
            classes.setdefault(tid, set())
            if parts[2] != "normal":
                classes[tid].add(parts[2])
        if sorted(tokens) != list(range(len(tokens))):
            raise VocabularyError("ids must be contiguous from 0")
        return cls(
            tuple(tokens[i] for i in range(len(tokens))),
            tuple(frozenset(classes[i]) for i in range(len(tokens))),
        )


def _check_class(cls: str, lineno: int) -> None:
    if cls in ("normal", "special", "answer_cue"):
        return
    if cls.startswith("filler:") and cls[7:] in FillerKind.__members__:
        return
    if cls.startswith("option:") and cls[7:] in OPTION_LETTERS:
        return
    raise VocabularyError(f"line {lineno}: unknown class {cls!r}")


CHAT_MARKERS = ("<|system|>", "<|user|>", "<|assistant|>")

COMMON_WORDS = (
    "Question:", "Options:", "Context:", "Rationale:", "The", "the", "answer", "is", "of",
    "and", "to", "in", "a", "an", "what", "What", "Which", "which", "option", "equals",
    "equal", "plus", "minus", "times", "sum", "total", "number", "value", "following",
    "correct", "choose", "Choose", "letter", "multiple-choice", "question", "You", "are",
    "helpful", "assistant", "This", "Solve", "problem", "step", "by", "so", "has", "have",
    "how", "many", "much", "each", "cost", "costs", "dollars", "apples", "books", "more",
    "less", "than", "after", "before", "there", "with", "for", "on", "at", "from", "that",
    "it", "be", "as", "not", "or", "if", "then", "else", "true", "false", "first", "second",
)


def build_default_vocabulary(size: int = 512) -> Vocabulary:
    """Specials, chat markers, the answer cue, printable ASCII, and filler words up to ``size``."""
    entries: list[tuple[str, set[str]]] = [
        ("<pad>", {"special", "filler:pad"}),
        ("<eos>", {"special"}),
        ("<eot>", {"special"}),
        ("<unk>", {"special"}),
    ]
    entries += [(m, {"special"}) for m in CHAT_MARKERS]
    entries.append((ANSWER_CUE, {"answer_cue"}))
    surface_class = {s: f"filler:{k.value}" for k, s in FILLER_SURFACES.items() if k is not FillerKind.pad}
    for ch in [chr(c) for c in range(32, 127)] + ["\n", "\t"]:
        cls = set()
        if ch in surface_class:
            cls.add(surface_class[ch])
        if ch in OPTION_LETTERS:
            cls.add(f"option:{ch}")
        entries.append((ch, cls))
    seen = {e[0] for e in entries}
    for word in COMMON_WORDS:
        if word not in seen:
            entries.append((word, set()))
            seen.add(word)
    for n in range(10, 100):
        if len(entries) >= size:
            break
        entries.append((str(n), set()))
    k = 0
    while len(entries) < size:
        entries.append((f"<reserved_{k}>", {"special"}))
        k += 1
    if len(entries) > size:
        raise VocabularyError(f"default vocabulary needs at least {len(entries)} ids")
    return Vocabulary(tuple(e[0] for e in entries), tuple(frozenset(e[1]) for e in entries))


def filler_ids(vocab: Vocabulary, kind: FillerKind | str, count: int) -> list[int]:
    if count < 0:
        raise ValueError("filler count must be non-negative")
    return [vocab.filler_id(kind)] * count


def tokenizable_characters() -> str:
    """Characters guaranteed to be single entries of the default vocabulary."""
    return string.printable.replace("\r", "").replace("\x0b", "").replace("\x0c", "")
