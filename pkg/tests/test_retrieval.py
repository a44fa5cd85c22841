import json
import random

import numpy as np
import pytest

from skillex.corpus import TaggedSentence
from skillex.retrieval import (
    DimensionMismatch,
    DuplicateId,
    EmbedderFailure,
    HashEmbedder,
    RetrievalConfig,
    RetrievalDoc,
    Source,
    build_index,
    demos_from_corpus,
    load_definitions,
    load_snapshot,
    normalize,
    retrieve,
    save_snapshot,
    similarity,
)


def make_doc(doc_id, vec, source=Source.KB, text="doc"):
    return RetrievalDoc(id=doc_id, source=source, text=text, embedding=normalize(vec))


def random_docs(rng, n, dim, source=Source.KB):
    return [
        make_doc(f"d{i:04d}", [rng.gauss(0, 1) for _ in range(dim)], source)
        for i in range(n)
    ]


def brute_force_top_k(docs, q, k, min_similarity=-1.0):
    scored = []
    for doc in docs:
        s = sum(float(a) * float(b) for a, b in zip(q, doc.embedding))
        if s >= min_similarity:
            scored.append((s, doc.id, doc))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(doc, s) for s, _id, doc in scored[:k]]


class FixedEmbedder:
    def __init__(self, vec):
        self.vec = normalize(vec)
        self.dim = len(self.vec)

    def embed(self, text):
        return self.vec


class TestSimilarity:
    def test_identity(self):
        v = normalize([1.0, 2.0, 3.0])
        assert similarity(v, v) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal(self):
        assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0, abs=1e-6)

    def test_matches_scalar_recomputation(self, rng):
        a = normalize([rng.gauss(0, 1) for _ in range(16)])
        b = normalize([rng.gauss(0, 1) for _ in range(16)])
        expected = sum(float(x) * float(y) for x, y in zip(a, b))
        assert similarity(a, b) == pytest.approx(expected, abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            similarity(np.array([1.0]), np.array([1.0, 0.0]))


class TestIndex:
    def test_empty_index(self):
        index = build_index([])
        cfg = RetrievalConfig({Source.KB: 3}, {Source.KB: 1.0})
        assert retrieve(index, "anything", HashEmbedder(8), cfg) == []

    def test_per_source_counts(self, rng):
        demo_sent = TaggedSentence.from_strings(["Python"], ["B-SKILL"], "t:0")
        docs = [
            RetrievalDoc("a", Source.DEMO, "Python", normalize([1, 0]), demo_sent),
            make_doc("b", [0, 1], Source.DEFINITION),
            make_doc("c", [1, 1], Source.KB),
        ]
        index = build_index(docs)
        assert index.counts() == {Source.DEMO: 1, Source.DEFINITION: 1, Source.KB: 1}

    def test_duplicate_id(self):
        docs = [make_doc("x", [1, 0]), make_doc("x", [0, 1])]
        with pytest.raises(DuplicateId):
            build_index(docs)

    def test_dim_mismatch(self):
        docs = [make_doc("a", [1, 0]), make_doc("b", [1, 0, 0])]
        with pytest.raises(DimensionMismatch):
            build_index(docs)

    def test_exactness_against_brute_force(self, rng):
        docs = random_docs(rng, 1000, 16)
        index = build_index(docs)
        for _ in range(20):
            q = normalize([rng.gauss(0, 1) for _ in range(16)])
            for k in (1, 5, 20):
                got = index.top_k(Source.KB, q, k)
                expected = brute_force_top_k(docs, q, k)
                assert [d.id for d, _ in got] == [d.id for d, _ in expected]


class TestRetrieve:
    def setup_method(self):
        self.rng = random.Random(99)
        self.docs = random_docs(self.rng, 50, 8)
        self.index = build_index(self.docs)
        self.embedder = HashEmbedder(8)

    def test_all_k_zero(self):
        cfg = RetrievalConfig({Source.KB: 0}, {})
        assert retrieve(self.index, "query text", self.embedder, cfg) == []

    def test_min_similarity_one_filters_everything(self):
        cfg = RetrievalConfig({Source.KB: 5}, {Source.KB: 1.0}, min_similarity=1.0)
        assert retrieve(self.index, "no exact duplicate", self.embedder, cfg) == []

    def test_matches_brute_force(self):
        cfg = RetrievalConfig({Source.KB: 3}, {Source.KB: 1.0})
        got = retrieve(self.index, "python developer", self.embedder, cfg)
        q = self.embedder.embed("python developer")
        expected = brute_force_top_k(self.docs, q, 3)
        assert [d.id for d, _s, _w in got] == [d.id for d, _s in expected]

    def test_weight_zero_disables_source(self):
        cfg = RetrievalConfig(
            {Source.KB: 3, Source.DEFINITION: 3}, {Source.KB: 1.0, Source.DEFINITION: 0.0}
        )
        got = retrieve(self.index, "query", self.embedder, cfg)
        assert all(doc.source == Source.KB for doc, _s, _w in got)

    def test_k_monotonicity(self):
        prev_ids = []
        for k in range(1, 8):
            cfg = RetrievalConfig({Source.KB: k}, {Source.KB: 1.0})
            ids = [d.id for d, _s, _w in retrieve(self.index, "query", self.embedder, cfg)]
            assert ids[: len(prev_ids)] == prev_ids
            prev_ids = ids

    def test_bad_weights_rejected(self):
        cfg = RetrievalConfig({Source.KB: 3}, {Source.KB: 0.5})
        with pytest.raises(ValueError):
            retrieve(self.index, "query", self.embedder, cfg)

    def test_embedder_failure_propagates(self):
        class Broken:
            def embed(self, text):
                raise RuntimeError("boom")

        cfg = RetrievalConfig({Source.KB: 3}, {Source.KB: 1.0})
        with pytest.raises(EmbedderFailure):
            retrieve(self.index, "query", Broken(), cfg)


class TestHashEmbedder:
    def test_deterministic(self):
        e = HashEmbedder(32)
        assert np.array_equal(e.embed("python developer"), e.embed("python developer"))

    def test_normalized(self):
        e = HashEmbedder(32)
        assert float(np.linalg.norm(e.embed("some text"))) == pytest.approx(1.0, abs=1e-6)

    def test_shared_tokens_raise_similarity(self):
        e = HashEmbedder(64)
        near = similarity(e.embed("python developer"), e.embed("python engineer"))
        far = similarity(e.embed("python developer"), e.embed("accounts payable"))
        assert near > far

    def test_empty_text_fails(self):
        with pytest.raises(EmbedderFailure):
            HashEmbedder(8).embed("")


class TestPersistence:
    def test_snapshot_roundtrip(self, rng, tmp_path):
        demo = TaggedSentence.from_strings(["Python"], ["B-SKILL"], "t:0")
        docs = random_docs(rng, 5, 8) + [
            RetrievalDoc("demo0", Source.DEMO, "Python", normalize([1] * 8), demo)
        ]
        path = tmp_path / "index.jsonl"
        save_snapshot(docs, path)
        loaded = load_snapshot(path)
        assert [d.id for d in loaded] == [d.id for d in docs]
        assert loaded[-1].payload == demo

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format_version": 99}\n')
        with pytest.raises(Exception):
            load_snapshot(path)

    def test_load_definitions(self, tmp_path):
        path = tmp_path / "defs.jsonl"
        rows = [
            {"id": "esco:1", "label": "Python", "text": "A programming language."},
            {"id": "esco:2", "label": "Welding", "text": "Joining metals."},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        docs = load_definitions(path, HashEmbedder(16))
        assert [d.id for d in docs] == ["esco:1", "esco:2"]
        assert all(d.source == Source.DEFINITION for d in docs)

    def test_demos_from_corpus(self):
        corpus = [TaggedSentence.from_strings(["Python"], ["B-SKILL"], "t:0")]
        docs = demos_from_corpus(corpus, HashEmbedder(16))
        assert docs[0].source == Source.DEMO
        assert docs[0].payload == corpus[0]
