"""Training-file preparation: anchored targets, span-balanced sampling,
connector normalization, and hard-negative retention."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

from . import anchors
from .corpus import BioTag, TaggedSentence, Token, spans_of


class EmptyCorpus(Exception):
    pass


@dataclass
class SftPrepConfig:
    balance_exponent: float = 1.0
    negative_ratio: float = 1.0  # fraction of all-O sentences to retain
    normalize: bool = True
    split_slash: bool = True  # "A/B" -> "A / B"
    comma_and: bool = True  # "X , Y and Z" -> "X , Y , Z"
    sample_size: Optional[int] = None  # None keeps every positive sentence
    seed: int = 0


@dataclass(frozen=True)
class SftRecord:
    sentence: str
    target: str
    source_id: str

    def to_json(self) -> str:
        return json.dumps(
            {"sentence": self.sentence, "target": self.target, "source_id": self.source_id},
            ensure_ascii=False,
        )


def _split_slash(sentence: TaggedSentence) -> TaggedSentence:
    """Rewrite tokens like "A/B" into "A / B", extending span tags positionally."""
    words, tags = [], []
    changed = False
    for tok, tag in zip(sentence.tokens, sentence.tags):
        parts = tok.text.split("/")
        if len(parts) >= 2 and all(parts):
            changed = True
            for j, part in enumerate(parts):
                if j > 0:
                    words.append("/")
                    tags.append(BioTag("O") if tag.kind == "O" else BioTag("I", tag.label))
                words.append(part)
                if tag.kind == "O":
                    tags.append(BioTag("O"))
                elif j == 0:
                    tags.append(tag)
                else:
                    tags.append(BioTag("I", tag.label))
        else:
            words.append(tok.text)
            tags.append(tag)
    if not changed:
        return sentence
    return TaggedSentence.from_strings(words, [str(t) for t in tags], sentence.source_id)


def _comma_and(sentence: TaggedSentence) -> TaggedSentence:
    """Normalize "and" list connectors to commas: drop an O-tagged "and" right
    after a comma, replace an O-tagged "and" sitting between two span tokens
    with a comma."""
    words = [t.text for t in sentence.tokens]
    tags = list(sentence.tags)
    out_w, out_t = [], []
    for i, (w, tag) in enumerate(zip(words, tags)):
        if tag.kind == "O" and w.lower() == "and":
            if out_w and out_w[-1] == ",":
                continue  # ", and" -> ","
            prev_in_span = i > 0 and tags[i - 1].kind != "O"
            next_in_span = i + 1 < len(tags) and tags[i + 1].kind != "O"
            if prev_in_span and next_in_span:
                out_w.append(",")
                out_t.append(BioTag("O"))
                continue
        out_w.append(w)
        out_t.append(tag)
    if out_w == words:
        return sentence
    return TaggedSentence.from_strings(out_w, [str(t) for t in out_t], sentence.source_id)


def normalize_connectors(sentence: TaggedSentence, config: SftPrepConfig) -> TaggedSentence:
    if config.split_slash:
        sentence = _split_slash(sentence)
    if config.comma_and:
        sentence = _comma_and(sentence)
    return sentence


def _balanced_sample(positives: List[TaggedSentence], config: SftPrepConfig, rng: random.Random):
    """Weighted sampling without replacement; a sentence's weight is the mean
    of freq(surface)^(-exponent) over its spans, so tail skills surface as
    often as head skills."""
    freq = Counter()
    for sent in positives:
        for span in spans_of(sent):
            freq[span.surface(sent)] += 1

    def weight(sent):
        ws = [freq[s.surface(sent)] ** (-config.balance_exponent) for s in spans_of(sent)]
        return sum(ws) / len(ws)

    n = config.sample_size
    if n is None or n >= len(positives):
        return list(positives)
    # Efraimidis-Spirakis reservoir keys: top-n by u^(1/w).
    keyed = [(rng.random() ** (1.0 / weight(s)), s.source_id, s) for s in positives]
    keyed.sort(key=lambda t: (-t[0], t[1]))
    return [s for _, _, s in keyed[:n]]


def prepare_sft(corpus: List[TaggedSentence], config: SftPrepConfig) -> List[SftRecord]:
    """Build (sentence, anchored target) SFT records.

    Positives are span-balance sampled; all-O hard negatives are retained at
    exactly config.negative_ratio; output order is deterministic for a fixed
    seed (sampled positives first, then retained negatives, each in corpus
    order).
    """
    if not corpus:
        raise EmptyCorpus("no sentences to prepare")
    rng = random.Random(config.seed)

    positives = [s for s in corpus if not s.is_all_o()]
    negatives = [s for s in corpus if s.is_all_o()]

    chosen_pos = _balanced_sample(positives, config, rng)

    n_neg = int(round(config.negative_ratio * len(negatives)))
    shuffled_neg = list(negatives)
    rng.shuffle(shuffled_neg)
    chosen_neg = shuffled_neg[:n_neg]

    order = {s.source_id: i for i, s in enumerate(corpus)}
    chosen_pos.sort(key=lambda s: order[s.source_id])
    chosen_neg.sort(key=lambda s: order[s.source_id])

    records = []
    for sent in chosen_pos + chosen_neg:
        if config.normalize:
            sent = normalize_connectors(sent, config)
        records.append(
            SftRecord(
                sentence=sent.text,
                target=anchors.encode(sent).text,
                source_id=sent.source_id,
            )
        )
    return records


def write_jsonl(records: List[SftRecord]) -> str:
    return "\n".join(r.to_json() for r in records) + "\n"
