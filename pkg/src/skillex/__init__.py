"""Verification-aware span-level skill extraction pipeline."""

__version__ = "0.1.0"

from .corpus import (
    BioTag,
    DatasetStats,
    Span,
    TaggedSentence,
    Token,
    compute_stats,
    read_conll,
    spans_of,
    write_conll,
)
from .anchors import AnchoredText, decode, encode
from .metrics import score_relax, score_strict
from .verify import RetryPolicy, VerifierReport, Violation, ViolationKind, check, run_with_retry

__all__ = [
    "AnchoredText",
    "BioTag",
    "DatasetStats",
    "RetryPolicy",
    "Span",
    "TaggedSentence",
    "Token",
    "VerifierReport",
    "Violation",
    "ViolationKind",
    "check",
    "compute_stats",
    "decode",
    "encode",
    "read_conll",
    "run_with_retry",
    "score_relax",
    "score_strict",
    "spans_of",
    "write_conll",
]
