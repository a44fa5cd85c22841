import random

import pytest

from skillex.corpus import TaggedSentence


def random_legal_tag_strings(rng: random.Random, length: int, labels=("SKILL",)):
    """Generate a random BIO-legal tag string sequence."""
    tags = []
    prev_kind = "O"
    prev_label = None
    for _ in range(length):
        choices = ["O", "B"]
        if prev_kind in ("B", "I"):
            choices.append("I")
        kind = rng.choice(choices)
        if kind == "O":
            tags.append("O")
            prev_kind, prev_label = "O", None
        elif kind == "B":
            label = rng.choice(labels)
            tags.append(f"B-{label}")
            prev_kind, prev_label = "B", label
        else:
            tags.append(f"I-{prev_label}")
            prev_kind = "I"
    return tags


def random_sentence(rng: random.Random, length: int, labels=("SKILL",), source_id=""):
    words = [f"w{rng.randrange(1000)}x{i}" for i in range(length)]
    tags = random_legal_tag_strings(rng, length, labels)
    return TaggedSentence.from_strings(words, tags, source_id)


def brute_force_spans(tag_strings):
    """Independent run-length enumeration of spans from tag strings."""
    spans = []
    i = 0
    n = len(tag_strings)
    while i < n:
        if tag_strings[i].startswith("B-"):
            label = tag_strings[i][2:]
            j = i + 1
            while j < n and tag_strings[j] == f"I-{label}":
                j += 1
            spans.append((i, j, label))
            i = j
        else:
            i += 1
    return spans


def oracle_is_legal(tag_strings):
    """Independent legality oracle: decode spans leniently, re-encode, and
    demand the reconstruction reproduces the input exactly."""
    rebuilt = ["O"] * len(tag_strings)
    for start, end, label in brute_force_spans(tag_strings):
        rebuilt[start] = f"B-{label}"
        for k in range(start + 1, end):
            rebuilt[k] = f"I-{label}"
    return rebuilt == list(tag_strings)


@pytest.fixture
def rng():
    return random.Random(1234)
