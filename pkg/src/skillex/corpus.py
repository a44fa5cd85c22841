"""CoNLL-style corpus ingestion, domain types, and dataset statistics."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union


class CorpusError(Exception):
    """Base class for corpus ingestion failures."""


class MalformedLine(CorpusError):
    def __init__(self, lineno: int, line: str):
        super().__init__(f"line {lineno}: expected 'token<SEP>tag', got {line!r}")
        self.lineno = lineno
        self.line = line


class IllegalTagString(CorpusError):
    def __init__(self, lineno: int, tag: str):
        super().__init__(f"line {lineno}: unparseable tag {tag!r}")
        self.lineno = lineno
        self.tag = tag


class IllegalSequence(CorpusError):
    def __init__(self, source_id: str, position: int, reason: str):
        super().__init__(f"{source_id}: illegal BIO at position {position}: {reason}")
        self.source_id = source_id
        self.position = position
        self.reason = reason


@dataclass(frozen=True)
class Token:
    """A single pre-tokenized word with its 0-based position."""

    text: str
    index: int

    def __post_init__(self):
        if not self.text or any(c in self.text for c in "\t\n "):
            raise ValueError(f"bad token text {self.text!r}")
        if self.index < 0:
            raise ValueError(f"negative token index {self.index}")


@dataclass(frozen=True)
class BioTag:
    """One BIO tag; label is present exactly for B and I kinds."""

    kind: str  # "B" | "I" | "O"
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("B", "I", "O"):
            raise ValueError(f"bad tag kind {self.kind!r}")
        if self.kind == "O" and self.label is not None:
            raise ValueError("O tag must not carry a label")
        if self.kind in ("B", "I") and not self.label:
            raise ValueError(f"{self.kind} tag requires a label")

    @classmethod
    def parse(cls, s: str) -> "BioTag":
        if s == "O":
            return cls("O")
        if len(s) > 2 and s[0] in ("B", "I") and s[1] == "-":
            return cls(s[0], s[2:])
        raise ValueError(f"unparseable tag {s!r}")

    def __str__(self) -> str:
        return "O" if self.kind == "O" else f"{self.kind}-{self.label}"


def tag_sequence_problems(tags: Sequence[Union[BioTag, str]]):
    """Enumerate BIO legality problems as (position, reason) pairs.

    reason is one of "i-at-start", "i-after-o", "label-switch".
    Works on BioTag objects or raw tag strings; unparseable strings are
    the caller's problem and raise ValueError.
    """
    parsed = [t if isinstance(t, BioTag) else BioTag.parse(t) for t in tags]
    problems = []
    for i, tag in enumerate(parsed):
        if tag.kind != "I":
            continue
        if i == 0:
            problems.append((i, "i-at-start"))
        elif parsed[i - 1].kind == "O":
            problems.append((i, "i-after-o"))
        elif parsed[i - 1].label != tag.label:
            problems.append((i, "label-switch"))
    return problems


@dataclass(frozen=True)
class TaggedSentence:
    """Tokens with aligned, BIO-legal tags; the gold and prediction unit."""

    tokens: tuple
    tags: tuple
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) == 0 or len(self.tokens) != len(self.tags):
            raise ValueError(
                f"{self.source_id}: {len(self.tokens)} tokens vs {len(self.tags)} tags"
            )
        for i, tok in enumerate(self.tokens):
            if tok.index != i:
                raise ValueError(f"{self.source_id}: token index {tok.index} at position {i}")
        problems = tag_sequence_problems(self.tags)
        if problems:
            pos, reason = problems[0]
            raise IllegalSequence(self.source_id, pos, reason)

    @classmethod
    def from_strings(cls, words: Sequence[str], tags: Sequence[str], source_id: str = "") -> "TaggedSentence":
        return cls(
            tokens=tuple(Token(w, i) for i, w in enumerate(words)),
            tags=tuple(BioTag.parse(t) for t in tags),
            source_id=source_id,
        )

    @property
    def text(self) -> str:
        return " ".join(t.text for t in self.tokens)

    @property
    def words(self):
        return [t.text for t in self.tokens]

    @property
    def tag_strings(self):
        return [str(t) for t in self.tags]

    def spans(self):
        return spans_of(self)

    def is_all_o(self) -> bool:
        return all(t.kind == "O" for t in self.tags)


@dataclass(frozen=True)
class Span:
    """Half-open token range [start, end) with an entity label."""

    start: int
    end: int
    label: str

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span bounds ({self.start}, {self.end})")

    def surface(self, sentence: TaggedSentence) -> str:
        return " ".join(t.text for t in sentence.tokens[self.start : self.end])


def spans_of(sentence: TaggedSentence):
    """Maximal B(I)* runs as Spans, sorted by start, non-overlapping."""
    spans = []
    start = None
    label = None
    for i, tag in enumerate(sentence.tags):
        if tag.kind == "B":
            if start is not None:
                spans.append(Span(start, i, label))
            start, label = i, tag.label
        elif tag.kind == "O":
            if start is not None:
                spans.append(Span(start, i, label))
                start = None
    if start is not None:
        spans.append(Span(start, len(sentence.tags), label))
    return spans


def all_o_sentence(words: Sequence[str], source_id: str = "") -> TaggedSentence:
    return TaggedSentence.from_strings(words, ["O"] * len(words), source_id)


# --- CoNLL I/O ---------------------------------------------------------------

def read_conll(
    source: Union[str, Path, TextIO],
    sep: str = "\t",
    on_illegal: str = "reject",
    source_prefix: Optional[str] = None,
):
    """Parse a CoNLL-style `token<sep>tag` stream into TaggedSentences.

    Blank lines separate sentences. on_illegal controls handling of
    BIO-illegal input sequences: "reject" raises IllegalSequence, "skip"
    drops the offending sentence, "repair" rewrites I-after-O / I-at-start
    / label-switch I tags to B.
    """
    if on_illegal not in ("reject", "skip", "repair"):
        raise ValueError(f"bad on_illegal policy {on_illegal!r}")

    close = False
    if isinstance(source, (str, Path)):
        if source_prefix is None:
            source_prefix = Path(source).stem
        fh = open(source, "r", encoding="utf-8")
        close = True
    else:
        fh = source
        if source_prefix is None:
            source_prefix = getattr(source, "name", "stream")

    try:
        sentences = []
        words, tags = [], []
        n_sent = 0

        def flush():
            nonlocal words, tags, n_sent
            if not words:
                return
            sid = f"{source_prefix}:{n_sent}"
            n_sent += 1
            fixed = tags
            problems = tag_sequence_problems(tags)
            if problems:
                if on_illegal == "reject":
                    pos, reason = problems[0]
                    raise IllegalSequence(sid, pos, reason)
                if on_illegal == "skip":
                    words, tags = [], []
                    return
                fixed = list(tags)
                for pos, _reason in problems:
                    fixed[pos] = BioTag("B", tags[pos].label)
            sentences.append(
                TaggedSentence(
                    tokens=tuple(Token(w, i) for i, w in enumerate(words)),
                    tags=tuple(fixed),
                    source_id=sid,
                )
            )
            words, tags = [], []

        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                flush()
                continue
            parts = line.split(sep)
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise MalformedLine(lineno, line)
            word, tag_str = parts
            try:
                tag = BioTag.parse(tag_str)
            except ValueError:
                raise IllegalTagString(lineno, tag_str)
            words.append(word)
            tags.append(tag)
        flush()
        return sentences
    finally:
        if close:
            fh.close()


def write_conll(sentences: Iterable[TaggedSentence], sep: str = "\t") -> str:
    """Serialize sentences back to CoNLL text (blank-line separated)."""
    blocks = []
    for sent in sentences:
        blocks.append(
            "\n".join(f"{tok.text}{sep}{tag}" for tok, tag in zip(sent.tokens, sent.tags))
        )
    return "\n\n".join(blocks) + "\n"


def read_conll_string(text: str, **kwargs):
    return read_conll(io.StringIO(text), **kwargs)


# --- Statistics --------------------------------------------------------------

@dataclass(frozen=True)
class DatasetStats:
    n_train: int
    n_test: int
    n_train_skills: int
    n_test_skills: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_train": self.n_train,
                "n_test": self.n_test,
                "n_train_skills": self.n_train_skills,
                "n_test_skills": self.n_test_skills,
            }
        )


def distinct_surfaces(sentences: Iterable[TaggedSentence], case_fold: bool = False):
    """Set of distinct gold-span surface forms (exact match by default)."""
    surfaces = set()
    for sent in sentences:
        for span in spans_of(sent):
            s = span.surface(sent)
            surfaces.add(s.lower() if case_fold else s)
    return surfaces


def compute_stats(train, test, case_fold: bool = False) -> DatasetStats:
    """Sentence counts and distinct span-surface counts for train/test."""
    return DatasetStats(
        n_train=len(train),
        n_test=len(test),
        n_train_skills=len(distinct_surfaces(train, case_fold)),
        n_test_skills=len(distinct_surfaces(test, case_fold)),
    )
