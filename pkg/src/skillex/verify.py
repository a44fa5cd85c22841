"""Deterministic output verification and the bounded targeted-retry loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

from . import anchors
from .corpus import BioTag, TaggedSentence, Token, all_o_sentence, tag_sequence_problems
from .generation import Backend, GenerationRequest, GenerationResponse, ParseFailure, parse_output
from .prompts import Mode, PromptBundle, PromptTemplate, build_prompt, retry_prompt

STANDARD_BUDGETS = (0, 1, 3)


class ViolationKind(str, Enum):
    I_AFTER_O = "i_after_o"
    I_AT_START = "i_at_start"
    LABEL_SWITCH_INSIDE_SPAN = "label_switch_inside_span"
    UNBALANCED_MARKERS = "unbalanced_markers"
    NESTED_MARKERS = "nested_markers"
    OVERLAP_OR_CROSSING = "overlap_or_crossing"
    TOKEN_MISMATCH = "token_mismatch"
    LENGTH_MISMATCH = "length_mismatch"
    UNKNOWN_TAG = "unknown_tag"
    EMPTY_OUTPUT = "empty_output"
    EMPTY_SPAN = "empty_span"


LEGALITY_KINDS = {
    ViolationKind.I_AFTER_O,
    ViolationKind.I_AT_START,
    ViolationKind.LABEL_SWITCH_INSIDE_SPAN,
    ViolationKind.UNBALANCED_MARKERS,
    ViolationKind.NESTED_MARKERS,
    ViolationKind.OVERLAP_OR_CROSSING,
    ViolationKind.LENGTH_MISMATCH,
    ViolationKind.UNKNOWN_TAG,
    ViolationKind.EMPTY_OUTPUT,
    ViolationKind.EMPTY_SPAN,
}


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    position: Optional[int] = None
    detail: str = ""


@dataclass(frozen=True)
class VerifierReport:
    violations: Tuple[Violation, ...]

    @property
    def verdict(self) -> str:
        return "pass" if not self.violations else "fail"

    @property
    def passed(self) -> bool:
        return not self.violations

    def has_kind(self, kind: ViolationKind) -> bool:
        return any(v.kind == kind for v in self.violations)

    def has_legality_violation(self) -> bool:
        return any(v.kind in LEGALITY_KINDS for v in self.violations)

    def to_record(self) -> dict:
        return {
            "verdict": self.verdict,
            "violations": [
                {"kind": v.kind.value, "position": v.position, "detail": v.detail}
                for v in self.violations
            ],
        }


PASS = VerifierReport(())


@dataclass
class RetryPolicy:
    budget: int = 1
    on_exhaustion: str = "emit_all_o"  # or "emit_best_effort"

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("retry budget must be >= 0")
        if self.on_exhaustion not in ("emit_all_o", "emit_best_effort"):
            raise ValueError(f"bad on_exhaustion {self.on_exhaustion!r}")
        self.standard = self.budget in STANDARD_BUDGETS


_REASON_KIND = {
    "i-after-o": ViolationKind.I_AFTER_O,
    "i-at-start": ViolationKind.I_AT_START,
    "label-switch": ViolationKind.LABEL_SWITCH_INSIDE_SPAN,
}


def legality_violations(tags: Sequence[Union[BioTag, str]]) -> List[Violation]:
    """All positional BIO-legality violations in a raw tag sequence."""
    out = []
    for pos, reason in tag_sequence_problems(tags):
        out.append(Violation(_REASON_KIND[reason], pos, reason))
    return out


def check(result: Union[TaggedSentence, ParseFailure], source: Sequence[Token]) -> VerifierReport:
    """Enumerate every violation in a parsed result, left to right."""
    if isinstance(result, ParseFailure):
        if result.tags is not None and len(result.tags) == len(source):
            try:
                violations = legality_violations(result.tags)
            except ValueError:
                violations = [Violation(ViolationKind(result.kind), result.position, result.detail)]
            if violations:
                return VerifierReport(tuple(violations))
        return VerifierReport(
            (Violation(ViolationKind(result.kind), result.position, result.detail),)
        )

    violations: List[Violation] = []
    if [t.text for t in result.tokens] != [t.text for t in source]:
        violations.append(
            Violation(ViolationKind.TOKEN_MISMATCH, detail="output tokens differ from source")
        )
    # TaggedSentence construction already guarantees BIO legality and
    # non-overlap; re-check defensively so check() stands alone.
    violations.extend(legality_violations(result.tags))
    spans = result.spans()
    for a, b in zip(spans, spans[1:]):
        if b.start < a.end:
            violations.append(
                Violation(ViolationKind.OVERLAP_OR_CROSSING, b.start, f"{a} overlaps {b}")
            )
    violations.sort(key=lambda v: (v.position if v.position is not None else -1))
    return VerifierReport(tuple(violations))


def repair_tags(tags: Sequence[str]) -> List[str]:
    """Minimal deterministic repair: any illegally-placed I becomes B."""
    fixed = list(tags)
    while True:
        problems = tag_sequence_problems(fixed)
        if not problems:
            return fixed
        pos, _reason = problems[0]
        fixed[pos] = "B" + fixed[pos][1:]


def _best_effort(
    audit: List[Tuple[int, str, VerifierReport]],
    attempts: List[Union[TaggedSentence, ParseFailure]],
    source: Sequence[Token],
    source_id: str,
) -> TaggedSentence:
    """Repair the attempt with the fewest violations; unusable attempts
    (mismatched tokens / lengths) fall back to all-O."""
    order = sorted(range(len(attempts)), key=lambda i: len(audit[i][2].violations))
    words = [t.text for t in source]
    for i in order:
        result = attempts[i]
        if isinstance(result, TaggedSentence):
            if [t.text for t in result.tokens] == words:
                return TaggedSentence(tuple(source), result.tags, source_id)
            continue
        if result.tags is not None and len(result.tags) == len(source):
            try:
                return TaggedSentence.from_strings(words, repair_tags(result.tags), source_id)
            except ValueError:
                continue
    return all_o_sentence(words, source_id)


def run_with_retry(
    tokens: Sequence[Token],
    template: PromptTemplate,
    evidence,
    backend: Backend,
    policy: RetryPolicy,
    mode: Mode = Mode.ANCHORED,
    source_id: str = "",
    model_id: str = "default",
    max_tokens: int = 256,
):
    """Generate, verify, and retry with targeted hints under the budget.

    Returns (sentence, audit) where audit is one (attempt, raw_text, report)
    per backend call. The emitted sentence is always BIO-legal over the
    source tokens, whatever the backend did.
    """
    bundle = build_prompt(template, tokens, evidence, mode)
    audit: List[Tuple[int, str, VerifierReport]] = []
    attempts: List[Union[TaggedSentence, ParseFailure]] = []
    for attempt in range(policy.budget + 1):
        response = backend.generate(
            GenerationRequest(bundle=bundle, model_id=model_id, max_tokens=max_tokens)
        )
        parsed = parse_output(response.text, mode, tokens)
        report = check(parsed, tokens)
        audit.append((attempt, response.text, report))
        attempts.append(parsed)
        if report.passed:
            assert isinstance(parsed, TaggedSentence)
            return TaggedSentence(tuple(tokens), parsed.tags, source_id), audit
        if attempt < policy.budget:
            bundle = retry_prompt(bundle, report, response.text)

    if policy.on_exhaustion == "emit_all_o":
        return all_o_sentence([t.text for t in tokens], source_id), audit
    return _best_effort(audit, attempts, tokens, source_id), audit
