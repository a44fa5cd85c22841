"""Loss-free conversion between BIO-tagged sentences and `@@ ... ##` anchored text."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .corpus import BioTag, TaggedSentence, Token, spans_of

OPEN = "@@"
CLOSE = "##"

DEFAULT_LABEL = "SKILL"


class CodecError(Exception):
    """Base class for anchored-text decoding failures."""

    position: Optional[int] = None


class UnbalancedMarkers(CodecError):
    def __init__(self, detail: str, position: Optional[int] = None):
        super().__init__(detail)
        self.position = position


class NestedMarkers(CodecError):
    def __init__(self, position: int):
        super().__init__(f"'@@' opened again before '##' (marker pair {position})")
        self.position = position


class EmptySpan(CodecError):
    def __init__(self, position: int):
        super().__init__(f"empty '@@ ##' pair (marker pair {position})")
        self.position = position


class TokenMismatch(CodecError):
    def __init__(self, got: Sequence[str], expected: Sequence[str]):
        super().__init__(
            f"output tokens {' '.join(got)!r} do not match source {' '.join(expected)!r}"
        )
        self.got = list(got)
        self.expected = list(expected)


@dataclass(frozen=True)
class AnchoredText:
    """Sentence text with `@@ ... ##` span markers; labels ride in a sidecar
    list aligned to marker pairs (left to right)."""

    text: str
    labels: tuple = ()


def encode(sentence: TaggedSentence) -> AnchoredText:
    """Wrap each maximal B(I)* run in `@@ tokens ##`, canonical single spacing."""
    spans = spans_of(sentence)
    starts = {s.start: s for s in spans}
    ends = {s.end for s in spans}
    parts = []
    for i, tok in enumerate(sentence.tokens):
        if i in starts:
            parts.append(OPEN)
        parts.append(tok.text)
        if i + 1 in ends:
            parts.append(CLOSE)
    return AnchoredText(" ".join(parts), tuple(s.label for s in spans))


# Splits glued markers off tokens so the lenient `@@Python##` form parses too.
_MARKER_SPLIT = re.compile(r"(@@|##)")


def _lex(text: str):
    symbols = []
    for chunk in text.split():
        for piece in _MARKER_SPLIT.split(chunk):
            if piece:
                symbols.append(piece)
    return symbols


def decode(
    anchored: str,
    source: Sequence[Token],
    labels: Optional[Sequence[str]] = None,
    default_label: str = DEFAULT_LABEL,
    source_id: str = "",
) -> TaggedSentence:
    """Parse anchored text back into a BIO-legal TaggedSentence over `source`.

    Raises UnbalancedMarkers / NestedMarkers / EmptySpan on marker grammar
    violations and TokenMismatch when the marker-stripped tokens differ from
    the source sentence (the hallucination signal).
    """
    if isinstance(anchored, AnchoredText):
        if labels is None and anchored.labels:
            labels = anchored.labels
        anchored = anchored.text

    words = []
    tags = []
    in_span = False
    first_in_span = False
    span_had_token = False
    pair_index = 0

    for sym in _lex(anchored):
        if sym == OPEN:
            if in_span:
                raise NestedMarkers(pair_index)
            in_span = True
            first_in_span = True
            span_had_token = False
        elif sym == CLOSE:
            if not in_span:
                raise UnbalancedMarkers("'##' without a preceding '@@'", pair_index)
            if not span_had_token:
                raise EmptySpan(pair_index)
            in_span = False
            pair_index += 1
        else:
            words.append(sym)
            if in_span:
                label = default_label
                if labels is not None and pair_index < len(labels):
                    label = labels[pair_index]
                tags.append(BioTag("B" if first_in_span else "I", label))
                first_in_span = False
                span_had_token = True
            else:
                tags.append(BioTag("O"))
    if in_span:
        raise UnbalancedMarkers("'@@' never closed by '##'", pair_index)

    source_words = [t.text for t in source]
    if words != source_words:
        raise TokenMismatch(words, source_words)

    return TaggedSentence(
        tokens=tuple(source),
        tags=tuple(tags),
        source_id=source_id,
    )
