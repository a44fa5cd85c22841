"""Modular chat-prompt assembly: persona + task definition + format binder +
retrieved definitions, demonstrations as exemplar turn pairs, targeted retry."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import anchors
from .corpus import Token
from .retrieval import RetrievalDoc, Source

DEFAULT_DEFINITION_BUDGET = 400


class Mode(str, Enum):
    ANCHORED = "anchored"
    BIO_ONLY = "bio_only"


class TemplateError(Exception):
    pass


class TemplateRenderError(TemplateError):
    pass


class ModeMismatch(Exception):
    pass


_TEMPLATE_KEYS = {
    "dataset_id",
    "language",
    "persona",
    "task_definition",
    "format_binder_anchored",
    "format_binder_bio_only",
    "demo_user_format",
    "demo_assistant_format",
    "definition_slot_format",
}

_ALLOWED_PLACEHOLDERS = {
    "demo_user_format": {"sentence"},
    "demo_assistant_format": {"target"},
    "definition_slot_format": {"label", "text"},
}


@dataclass(frozen=True)
class PromptTemplate:
    dataset_id: str
    persona: str
    task_definition: str
    format_binder_anchored: str
    format_binder_bio_only: str
    language: str = "en"
    demo_user_format: str = "Sentence: {sentence}"
    demo_assistant_format: str = "{target}"
    definition_slot_format: str = "- {label}: {text}"

    def format_binder(self, mode: Mode) -> str:
        return (
            self.format_binder_anchored
            if mode == Mode.ANCHORED
            else self.format_binder_bio_only
        )

    def content_hash(self) -> str:
        blob = json.dumps(
            {f.name: getattr(self, f.name) for f in fields(self)}, sort_keys=True
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_template(path: Union[str, Path]) -> PromptTemplate:
    """Load a template JSON file; unknown keys are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    unknown = set(data) - _TEMPLATE_KEYS
    if unknown:
        raise TemplateError(f"{path}: unknown template keys {sorted(unknown)}")
    try:
        template = PromptTemplate(**data)
    except TypeError as exc:
        raise TemplateError(f"{path}: {exc}") from exc
    for key, allowed in _ALLOWED_PLACEHOLDERS.items():
        _check_placeholders(getattr(template, key), allowed, key)
    return template


def _check_placeholders(fmt: str, allowed: set, where: str):
    import string

    for _lit, name, _spec, _conv in string.Formatter().parse(fmt):
        if name is not None and name not in allowed:
            raise TemplateError(f"{where}: unknown placeholder {{{name}}}")


def builtin_template(dataset_id: str) -> PromptTemplate:
    """Load one of the shipped per-dataset templates (or 'generic')."""
    from importlib import resources

    ref = resources.files("skillex") / "templates" / f"{dataset_id}.json"
    if not ref.is_file():
        raise TemplateError(f"no built-in template for {dataset_id!r}")
    with resources.as_file(ref) as p:
        return load_template(p)


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


@dataclass
class PromptBundle:
    messages: List[Message]
    meta: Dict[str, object] = field(default_factory=dict)

    def to_wire(self):
        return [{"role": m.role, "content": m.content} for m in self.messages]

    def dump_jsonl(self) -> str:
        return "\n".join(json.dumps(m, ensure_ascii=False) for m in self.to_wire()) + "\n"


def render_sentence(tokens: Sequence[Token], mode: Mode) -> str:
    if mode == Mode.ANCHORED:
        return " ".join(t.text for t in tokens)
    return "\n".join(f"{t.index}: {t.text}" for t in tokens)


def _render(fmt: str, **bindings) -> str:
    try:
        out = fmt.format(**bindings)
    except (KeyError, IndexError) as exc:
        raise TemplateRenderError(f"unbound placeholder in {fmt!r}: {exc}") from exc
    return out


def build_prompt(
    template: PromptTemplate,
    tokens: Sequence[Token],
    evidence: Sequence[Tuple[RetrievalDoc, float, float]] = (),
    mode: Mode = Mode.ANCHORED,
    definition_budget: int = DEFAULT_DEFINITION_BUDGET,
) -> PromptBundle:
    """Assemble the ordered message list.

    System message: persona, task definition, mode-specific format binder,
    then any retrieved definitions. Demo evidence becomes user/assistant
    exemplar pairs in retrieval order; the final user message carries the
    target sentence.
    """
    definitions = []
    demos = []
    for doc, _score, _weight in evidence:
        if doc.source == Source.DEMO:
            demos.append(doc)
        else:
            definitions.append(doc)

    system_parts = [template.persona, template.task_definition, template.format_binder(mode)]
    if definitions:
        lines = ["Reference definitions:"]
        for doc in definitions:
            text = doc.text
            if len(text) > definition_budget:
                text = text[: definition_budget - 1] + "…"
            label, _, body = text.partition(": ")
            lines.append(_render(template.definition_slot_format, label=label, text=body or label))
        system_parts.append("\n".join(lines))

    messages = [Message("system", "\n\n".join(p for p in system_parts if p))]

    for doc in demos:
        demo = doc.payload
        if demo is None:
            raise ModeMismatch(f"demo doc {doc.id} has no payload to render")
        messages.append(
            Message("user", _render(template.demo_user_format, sentence=render_sentence(demo.tokens, mode)))
        )
        if mode == Mode.ANCHORED:
            target = anchors.encode(demo).text
        else:
            target = " ".join(demo.tag_strings)
        messages.append(Message("assistant", _render(template.demo_assistant_format, target=target)))

    sentence_message = _render(template.demo_user_format, sentence=render_sentence(tokens, mode))
    messages.append(Message("user", sentence_message))

    return PromptBundle(
        messages=messages,
        meta={
            "dataset_id": template.dataset_id,
            "n_demos": len(demos),
            "n_definitions": len(definitions),
            "template_hash": template.content_hash(),
            "mode": mode.value,
            "retry": 0,
            "sentence_message": sentence_message,
        },
    )


# One fixed hint per violation kind; retry turns quote the first offending
# position when the checker recorded one.
HINTS = {
    "i_after_o": "An I tag may only continue a span opened by a B tag; never place I directly after O.",
    "i_at_start": "A sentence cannot begin with an I tag; a span must open with B.",
    "label_switch_inside_span": "All I tags in a span must repeat the label of the opening B tag.",
    "unbalanced_markers": "Every '@@' must be closed by exactly one '##' before any new '@@' opens.",
    "nested_markers": "Marker pairs must not nest or overlap; close '##' before opening another '@@'.",
    "overlap_or_crossing": "Spans must not overlap or cross; emit disjoint marker pairs only.",
    "token_mismatch": "Reproduce the input tokens exactly; do not add, drop, reorder, or rewrite any word.",
    "length_mismatch": "Emit exactly one tag per input token, in input order.",
    "unknown_tag": "Use only the tags O, B-<LABEL>, and I-<LABEL>.",
    "empty_output": "The reply was empty; emit the required output for the sentence.",
    "empty_span": "Remove empty '@@ ##' pairs; markers must enclose at least one token.",
}


def retry_prompt(previous: PromptBundle, report, failed_output: str) -> PromptBundle:
    """Extend a bundle with the failed reply and one hint line per violation
    kind (first occurrence order), then restate the target sentence."""
    if not report.violations:
        raise ValueError("retry_prompt requires a non-empty report")
    seen = []
    lines = []
    for v in report.violations:
        kind = v.kind.value if hasattr(v.kind, "value") else str(v.kind)
        if kind in seen:
            continue
        seen.append(kind)
        hint = HINTS[kind]
        if v.position is not None:
            hint = f"(position {v.position}) {hint}"
        lines.append(f"- {hint}")
    user_turn = (
        "Your previous answer was rejected for these reasons:\n"
        + "\n".join(lines)
        + "\n\nAnswer again in the required format for this input:\n"
        + str(previous.meta.get("sentence_message", ""))
    )
    messages = list(previous.messages) + [
        Message("assistant", failed_output),
        Message("user", user_turn),
    ]
    meta = dict(previous.meta)
    meta["retry"] = int(meta.get("retry", 0)) + 1
    return PromptBundle(messages=messages, meta=meta)
