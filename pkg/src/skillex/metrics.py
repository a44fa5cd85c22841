"""STRICT / RELAX span scoring, reliability rates, and report emission."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .corpus import Span, TaggedSentence, spans_of
from .verify import VerifierReport, ViolationKind


class Misaligned(Exception):
    def __init__(self, index: int):
        super().__init__(f"gold/pred token mismatch in sentence {index}")
        self.index = index


@dataclass(frozen=True)
class Prf:
    precision: float
    recall: float
    f1: float
    # True when both sides had zero spans and the 1.0 convention applied.
    degenerate: bool = False

    def as_tuple(self):
        return (self.precision, self.recall, self.f1)


def _prf(tp: int, n_pred: int, n_gold: int, empty_convention: str) -> Prf:
    if n_pred == 0 and n_gold == 0:
        if empty_convention == "one":
            return Prf(1.0, 1.0, 1.0, degenerate=True)
        return Prf(0.0, 0.0, 0.0, degenerate=True)
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return Prf(p, r, f1)


def _check_alignment(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]):
    if len(gold) != len(pred):
        raise Misaligned(min(len(gold), len(pred)))
    for i, (g, p) in enumerate(zip(gold, pred)):
        if [t.text for t in g.tokens] != [t.text for t in p.tokens]:
            raise Misaligned(i)


def score_strict(
    gold: Sequence[TaggedSentence],
    pred: Sequence[TaggedSentence],
    empty_convention: str = "one",
) -> Prf:
    """Exact (start, end, label) span matching."""
    _check_alignment(gold, pred)
    tp = n_gold = n_pred = 0
    for g, p in zip(gold, pred):
        gold_spans = set(spans_of(g))
        pred_spans = set(spans_of(p))
        tp += len(gold_spans & pred_spans)
        n_gold += len(gold_spans)
        n_pred += len(pred_spans)
    return _prf(tp, n_pred, n_gold, empty_convention)


def _overlap_matches(a: List[Span], b: List[Span]) -> int:
    """Greedy left-to-right one-to-one matching of same-label overlapping
    spans; both lists are disjoint and sorted, so this is maximal."""
    matched_b = set()
    count = 0
    for sa in a:
        for j, sb in enumerate(b):
            if j in matched_b or sb.label != sa.label:
                continue
            if sa.start < sb.end and sb.start < sa.end:
                matched_b.add(j)
                count += 1
                break
    return count


def score_relax(
    gold: Sequence[TaggedSentence],
    pred: Sequence[TaggedSentence],
    empty_convention: str = "one",
) -> Prf:
    """Partial credit: a prediction matches a gold span of the same label if
    they share at least one token position (one-to-one)."""
    _check_alignment(gold, pred)
    tp = n_gold = n_pred = 0
    for g, p in zip(gold, pred):
        gold_spans = spans_of(g)
        pred_spans = spans_of(p)
        tp += _overlap_matches(pred_spans, gold_spans)
        n_gold += len(gold_spans)
        n_pred += len(pred_spans)
    return _prf(tp, n_pred, n_gold, empty_convention)


def score_token(
    gold: Sequence[TaggedSentence],
    pred: Sequence[TaggedSentence],
    empty_convention: str = "one",
) -> Prf:
    """Auxiliary per-token metric over non-O tags (exact tag equality)."""
    _check_alignment(gold, pred)
    tp = n_gold = n_pred = 0
    for g, p in zip(gold, pred):
        for tg, tp_tag in zip(g.tags, p.tags):
            if tg.kind != "O":
                n_gold += 1
            if tp_tag.kind != "O":
                n_pred += 1
            if tg.kind != "O" and tg == tp_tag:
                tp += 1
    return _prf(tp, n_pred, n_gold, empty_convention)


def reliability_rates(audits: Sequence[Sequence[Tuple[int, str, VerifierReport]]]):
    """(illegal_rate, hallucination_rate, mean_attempts), measured at
    attempt 0 so retries cannot hide base-model behavior."""
    if not audits:
        return (0.0, 0.0, 0.0)
    n = len(audits)
    illegal = hallucinated = 0
    total_attempts = 0
    for audit in audits:
        total_attempts += len(audit)
        first_report = audit[0][2]
        if first_report.has_legality_violation():
            illegal += 1
        if first_report.has_kind(ViolationKind.TOKEN_MISMATCH):
            hallucinated += 1
    return (illegal / n, hallucinated / n, total_attempts / n)


def final_illegal_rate(audits: Sequence[Sequence[Tuple[int, str, VerifierReport]]]) -> float:
    """Fraction of sentences whose *last* attempt still had a legality
    violation (what escapes when the verifier is off or exhausted)."""
    if not audits:
        return 0.0
    bad = sum(1 for audit in audits if audit[-1][2].has_legality_violation())
    return bad / len(audits)


@dataclass
class DatasetResult:
    strict: Prf
    relax: Prf
    illegal_rate: float = 0.0
    hallucination_rate: float = 0.0
    n_sentences: int = 0
    n_gold_spans: int = 0
    n_pred_spans: int = 0


METRIC_FIELDS = [
    "strict_p",
    "strict_r",
    "strict_f1",
    "relax_p",
    "relax_r",
    "relax_f1",
    "illegal_rate",
    "hallucination_rate",
]


def _flatten(result: DatasetResult) -> Dict[str, float]:
    sp, sr, sf = result.strict.as_tuple()
    rp, rr, rf = result.relax.as_tuple()
    return {
        "strict_p": sp,
        "strict_r": sr,
        "strict_f1": sf,
        "relax_p": rp,
        "relax_r": rr,
        "relax_f1": rf,
        "illegal_rate": result.illegal_rate,
        "hallucination_rate": result.hallucination_rate,
    }


@dataclass
class EvalReport:
    per_dataset: Dict[str, DatasetResult]

    @property
    def average(self) -> Dict[str, float]:
        """Unweighted macro average of every metric over datasets."""
        if not self.per_dataset:
            return {k: 0.0 for k in METRIC_FIELDS}
        rows = [_flatten(r) for r in self.per_dataset.values()]
        return {k: sum(row[k] for row in rows) / len(rows) for k in METRIC_FIELDS}

    def to_dict(self) -> dict:
        out = {"per_dataset": {}, "average": self.average}
        for name, r in self.per_dataset.items():
            out["per_dataset"][name] = dict(
                _flatten(r),
                strict_degenerate=r.strict.degenerate,
                relax_degenerate=r.relax.degenerate,
                n_sentences=r.n_sentences,
                n_gold_spans=r.n_gold_spans,
                n_pred_spans=r.n_pred_spans,
            )
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        per = {}
        for name, row in data["per_dataset"].items():
            per[name] = DatasetResult(
                strict=Prf(
                    row["strict_p"], row["strict_r"], row["strict_f1"],
                    row.get("strict_degenerate", False),
                ),
                relax=Prf(
                    row["relax_p"], row["relax_r"], row["relax_f1"],
                    row.get("relax_degenerate", False),
                ),
                illegal_rate=row["illegal_rate"],
                hallucination_rate=row["hallucination_rate"],
                n_sentences=row["n_sentences"],
                n_gold_spans=row["n_gold_spans"],
                n_pred_spans=row["n_pred_spans"],
            )
        return cls(per)


def evaluate_datasets(
    datasets: Dict[str, Tuple[Sequence[TaggedSentence], Sequence[TaggedSentence]]],
    audits: Optional[Dict[str, Sequence]] = None,
    empty_convention: str = "one",
) -> EvalReport:
    """Score {name: (gold, pred)} pairs, with optional per-dataset audits."""
    per = {}
    for name, (gold, pred) in datasets.items():
        illegal = halluc = 0.0
        if audits and name in audits:
            illegal, halluc, _ = reliability_rates(audits[name])
        per[name] = DatasetResult(
            strict=score_strict(gold, pred, empty_convention),
            relax=score_relax(gold, pred, empty_convention),
            illegal_rate=illegal,
            hallucination_rate=halluc,
            n_sentences=len(gold),
            n_gold_spans=sum(len(spans_of(s)) for s in gold),
            n_pred_spans=sum(len(spans_of(s)) for s in pred),
        )
    return EvalReport(per)


def emit_report(report: EvalReport, fmt: str = "json") -> bytes:
    """Serialize a report as canonical JSON, CSV, or a Markdown table."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True).encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["dataset"] + METRIC_FIELDS)
        for name, r in report.per_dataset.items():
            row = _flatten(r)
            writer.writerow([name] + [f"{row[k]:.6f}" for k in METRIC_FIELDS])
        avg = report.average
        writer.writerow(["AVG"] + [f"{avg[k]:.6f}" for k in METRIC_FIELDS])
        return buf.getvalue().encode("utf-8")
    if fmt == "markdown":
        header = "| Dataset | " + " | ".join(METRIC_FIELDS) + " |"
        sep = "|" + "---|" * (len(METRIC_FIELDS) + 1)
        lines = [header, sep]
        for name, r in report.per_dataset.items():
            row = _flatten(r)
            lines.append(
                "| " + name + " | " + " | ".join(f"{row[k]:.4f}" for k in METRIC_FIELDS) + " |"
            )
        avg = report.average
        lines.append(
            "| AVG | " + " | ".join(f"{avg[k]:.4f}" for k in METRIC_FIELDS) + " |"
        )
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(blob: bytes) -> EvalReport:
    return EvalReport.from_dict(json.loads(blob.decode("utf-8")))
