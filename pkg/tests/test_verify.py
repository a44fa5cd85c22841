from itertools import product

import pytest

from skillex.corpus import TaggedSentence, Token
from skillex.generation import ParseFailure, ScriptedBackend, parse_output
from skillex.prompts import Mode, builtin_template
from skillex.verify import (
    RetryPolicy,
    ViolationKind,
    check,
    legality_violations,
    repair_tags,
    run_with_retry,
)
from conftest import oracle_is_legal


def toks(words):
    return [Token(w, i) for i, w in enumerate(words)]


class TestCheck:
    def test_legal_sentence_passes(self):
        s = TaggedSentence.from_strings(["a", "b", "c"], ["B-SKILL", "I-SKILL", "O"])
        report = check(s, s.tokens)
        assert report.passed
        assert report.verdict == "pass"

    def test_i_after_o(self):
        failure = parse_output("O I-SKILL", Mode.BIO_ONLY, toks(["a", "b"]))
        report = check(failure, toks(["a", "b"]))
        assert not report.passed
        assert [v.kind for v in report.violations] == [ViolationKind.I_AFTER_O]
        assert report.violations[0].position == 1

    def test_token_mismatch_detail_names_strings(self):
        failure = parse_output("@@ Rust ##", Mode.ANCHORED, toks(["Python"]))
        report = check(failure, toks(["Python"]))
        assert report.has_kind(ViolationKind.TOKEN_MISMATCH)
        detail = report.violations[0].detail
        assert "Rust" in detail and "Python" in detail

    def test_enumerates_all_violations_in_order(self):
        failure = parse_output(
            "I-SKILL O I-SKILL O I-SKILL", Mode.BIO_ONLY, toks(list("abcde"))
        )
        report = check(failure, toks(list("abcde")))
        kinds = [v.kind for v in report.violations]
        assert kinds == [
            ViolationKind.I_AT_START,
            ViolationKind.I_AFTER_O,
            ViolationKind.I_AFTER_O,
        ]
        assert [v.position for v in report.violations] == [0, 2, 4]

    def test_idempotent(self):
        failure = ParseFailure("empty_output")
        source = toks(["a"])
        assert check(failure, source) == check(failure, source)

    def test_oracle_equivalence_small(self):
        # Full 3^8 enumeration lives in the acceptance suite; spot-check
        # length 5 here.
        for combo in product(["B-S", "I-S", "O"], repeat=5):
            got_legal = not legality_violations(list(combo))
            assert got_legal == oracle_is_legal(list(combo)), combo


class TestRepair:
    def test_i_after_o_becomes_b(self):
        assert repair_tags(["O", "I-SKILL"]) == ["O", "B-SKILL"]

    def test_i_at_start(self):
        assert repair_tags(["I-SKILL", "I-SKILL"]) == ["B-SKILL", "I-SKILL"]

    def test_label_switch(self):
        assert repair_tags(["B-X", "I-Y"]) == ["B-X", "B-Y"]

    def test_legal_untouched(self):
        tags = ["B-S", "I-S", "O"]
        assert repair_tags(tags) == tags


class TestRetryPolicy:
    def test_standard_budgets(self):
        for k in (0, 1, 3):
            assert RetryPolicy(k).standard
        assert not RetryPolicy(2).standard

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            RetryPolicy(-1)


class TestRunWithRetry:
    template = builtin_template("generic")

    def run(self, backend, policy, words=("We", "need", "Python"), mode=Mode.ANCHORED):
        return run_with_retry(
            toks(list(words)), self.template, [], backend, policy, mode=mode, source_id="t:0"
        )

    def test_pass_on_first_attempt(self):
        backend = ScriptedBackend({"Python": ["We need @@ Python ##"]})
        sentence, audit = self.run(backend, RetryPolicy(3))
        assert len(audit) == 1
        assert audit[0][2].passed
        assert sentence.tag_strings == ["O", "O", "B-SKILL"]
        assert backend.calls == 1

    def test_illegal_then_legal(self):
        backend = ScriptedBackend({"Python": ["@@ We need Python", "We need @@ Python ##"]})
        sentence, audit = self.run(backend, RetryPolicy(1))
        assert len(audit) == 2
        assert not audit[0][2].passed
        assert audit[1][2].passed
        assert sentence.tag_strings == ["O", "O", "B-SKILL"]

    def test_exhaustion_emits_all_o(self):
        backend = ScriptedBackend({}, default="@@ broken")
        sentence, audit = self.run(backend, RetryPolicy(3, "emit_all_o"))
        assert len(audit) == 4
        assert backend.calls == 4
        assert not audit[-1][2].passed
        assert sentence.is_all_o()

    def test_exhaustion_best_effort_repairs(self):
        backend = ScriptedBackend({"Python": ["O I-SKILL I-SKILL"]})
        sentence, audit = self.run(backend, RetryPolicy(0, "emit_best_effort"), mode=Mode.BIO_ONLY)
        assert sentence.tag_strings == ["O", "B-SKILL", "I-SKILL"]

    def test_best_effort_token_mismatch_falls_back_to_all_o(self):
        backend = ScriptedBackend({"Python": ["@@ Rust ## is great"]})
        sentence, _audit = self.run(backend, RetryPolicy(0, "emit_best_effort"))
        assert sentence.is_all_o()

    def test_budget_zero_single_attempt(self):
        backend = ScriptedBackend({}, default="garbage output")
        _sentence, audit = self.run(backend, RetryPolicy(0))
        assert len(audit) == 1
        assert backend.calls == 1

    def test_emitted_sentence_always_legal(self):
        for raw in ["@@ @@", "##", "I-SKILL O O", "", "@@ Wrong ##", "O O"]:
            backend = ScriptedBackend({}, default=raw)
            sentence, _audit = self.run(backend, RetryPolicy(1, "emit_best_effort"))
            assert isinstance(sentence, TaggedSentence)  # construction proves legality
