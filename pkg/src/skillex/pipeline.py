"""Run orchestration: extraction runs, run directories, ablations, k sweeps."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import corpus, metrics, prompts, retrieval
from .corpus import TaggedSentence, read_conll, write_conll
from .generation import (
    Backend,
    EchoGoldBackend,
    HttpChatBackend,
    MockBackend,
)
from .prompts import Mode, PromptTemplate, builtin_template, load_template
from .retrieval import HashEmbedder, RetrievalConfig, Source, build_index, retrieve
from .verify import RetryPolicy, run_with_retry

AUDIT_SCHEMA_VERSION = 1


class ConfigError(Exception):
    pass


@dataclass
class BackendConfig:
    kind: str = "mock"  # mock | http | echo-gold
    endpoint: str = ""
    model_id: str = "default"
    responses_path: str = ""  # mock: JSONL of {"message"|"digest", "response"}
    api_key_env: str = "SKILLEX_API_KEY"


@dataclass
class RunConfig:
    dataset_id: str = "generic"
    train_path: str = ""
    test_path: str = ""
    template_path: str = ""  # empty: built-in template for dataset_id
    definitions_path: str = ""
    kb_path: str = ""
    k_demo: int = 3
    k_definition: int = 0
    k_kb: int = 0
    gate_weights: Dict[str, float] = field(default_factory=dict)
    min_similarity: float = -1.0
    backend: BackendConfig = field(default_factory=BackendConfig)
    retry_budget: int = 1
    on_exhaustion: str = "emit_all_o"
    mode: str = "anchored"
    output_dir: str = "runs"
    seed: int = 0
    workers: int = 1
    embedder_dim: int = 64
    tag_separator: str = "\t"

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        backend = BackendConfig(**data.pop("backend", {}))
        try:
            cfg = cls(backend=backend, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def validate(self):
        for name in ("train_path", "test_path", "template_path", "definitions_path", "kb_path"):
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name}: no such file {value!r}")
        if self.mode not in ("anchored", "bio_only"):
            raise ConfigError(f"mode: expected anchored|bio_only, got {self.mode!r}")
        if self.backend.kind not in ("mock", "http", "echo-gold"):
            raise ConfigError(f"backend.kind: unknown kind {self.backend.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def retrieval_config(self) -> RetrievalConfig:
        k = {
            Source.DEMO: self.k_demo,
            Source.DEFINITION: self.k_definition,
            Source.KB: self.k_kb,
        }
        if self.gate_weights:
            weights = {Source(name): w for name, w in self.gate_weights.items()}
        else:
            enabled = [s for s in Source if k[s] > 0]
            weights = {s: 1.0 / len(enabled) for s in enabled} if enabled else {}
        return RetrievalConfig(k_per_source=k, gate_weights=weights, min_similarity=self.min_similarity)


def make_backend(config: RunConfig) -> Backend:
    kind = config.backend.kind
    if kind == "mock":
        backend = MockBackend()
        if config.backend.responses_path:
            with open(config.backend.responses_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    if "digest" in rec:
                        backend.register_digest(rec["digest"], rec["response"])
                    else:
                        backend.register(rec["message"], rec["response"])
        return backend
    if kind == "echo-gold":
        gold = read_conll(config.test_path, sep=config.tag_separator)
        return EchoGoldBackend(gold)
    if kind == "http":
        return HttpChatBackend(
            config.backend.endpoint,
            model_id=config.backend.model_id,
            api_key_env=config.backend.api_key_env,
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def load_run_template(config: RunConfig) -> PromptTemplate:
    if config.template_path:
        return load_template(config.template_path)
    return builtin_template(config.dataset_id)


def build_run_index(config: RunConfig, embedder) -> retrieval.Index:
    docs = []
    if config.train_path and config.k_demo > 0:
        train = read_conll(config.train_path, sep=config.tag_separator, on_illegal="repair")
        docs.extend(retrieval.demos_from_corpus(train, embedder))
    if config.definitions_path:
        docs.extend(retrieval.load_definitions(config.definitions_path, embedder))
    if config.kb_path:
        docs.extend(retrieval.load_definitions(config.kb_path, embedder, source=Source.KB))
    return build_index(docs)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunResult:
    run_dir: Path
    predictions: List[TaggedSentence]
    audits: List[List]
    mean_latency_s: float = 0.0


def extract_run(
    config: RunConfig,
    backend: Optional[Backend] = None,
    sentences: Optional[Sequence[TaggedSentence]] = None,
    run_name: str = "run",
) -> RunResult:
    """Run extraction over the test corpus and write a self-describing run
    directory: predictions.conll, audit.jsonl, config.json, manifest.json."""
    config.validate()
    if backend is None:
        backend = make_backend(config)
    if sentences is None:
        sentences = read_conll(config.test_path, sep=config.tag_separator)

    template = load_run_template(config)
    embedder = HashEmbedder(config.embedder_dim)
    index = build_run_index(config, embedder)
    rconfig = config.retrieval_config()
    policy = RetryPolicy(config.retry_budget, config.on_exhaustion)
    mode = Mode(config.mode)

    def process(sent: TaggedSentence):
        started = time.monotonic()
        evidence = (
            retrieve(index, sent.text, embedder, rconfig) if rconfig.enabled_sources() else []
        )
        prediction, audit = run_with_retry(
            sent.tokens,
            template,
            evidence,
            backend,
            policy,
            mode=mode,
            source_id=sent.source_id,
            model_id=config.backend.model_id,
        )
        return prediction, audit, time.monotonic() - started

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(process, sentences))
    else:
        results = [process(s) for s in sentences]

    predictions = [r[0] for r in results]
    audits = [r[1] for r in results]
    latencies = [r[2] for r in results]

    run_dir = Path(config.output_dir) / run_name
    run_dir.mkdir(parents=True, exist_ok=True)

    (run_dir / "predictions.conll").write_text(
        write_conll(predictions, sep=config.tag_separator), encoding="utf-8"
    )
    with open(run_dir / "audit.jsonl", "w", encoding="utf-8") as fh:
        for sent, audit in zip(sentences, audits):
            rec = {
                "schema_version": AUDIT_SCHEMA_VERSION,
                "source_id": sent.source_id,
                "sentence": sent.text,
                "attempts": [
                    {"attempt": a, "raw": raw, "report": rep.to_record()}
                    for a, raw, rep in audit
                ],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    manifest = {
        "template_hash": template.content_hash(),
        "config_hash": hashlib.sha256(
            json.dumps(config.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16],
        "index_version": retrieval.SNAPSHOT_VERSION,
        "index_counts": {s.value: n for s, n in index.counts().items()},
        "n_sentences": len(predictions),
        "predictions_sha256": _sha256_file(run_dir / "predictions.conll"),
        "audit_sha256": _sha256_file(run_dir / "audit.jsonl"),
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )

    mean_latency = sum(latencies) / len(latencies) if latencies else 0.0
    return RunResult(run_dir, predictions, audits, mean_latency)


def evaluate_run(
    gold: Sequence[TaggedSentence],
    result: RunResult,
    dataset_id: str = "dataset",
    empty_convention: str = "one",
) -> metrics.EvalReport:
    return metrics.evaluate_datasets(
        {dataset_id: (gold, result.predictions)},
        audits={dataset_id: result.audits},
        empty_convention=empty_convention,
    )


ABLATION_TOGGLES = ("no_rag", "no_specific_prompt", "no_verifier")


def apply_toggles(config: RunConfig, toggles) -> RunConfig:
    data = config.to_dict()
    cfg = RunConfig(backend=BackendConfig(**data.pop("backend")), **data)
    for toggle in toggles:
        if toggle == "no_rag":
            cfg.k_demo = cfg.k_definition = cfg.k_kb = 0
            cfg.gate_weights = {}
        elif toggle == "no_specific_prompt":
            cfg.dataset_id = "generic"
            cfg.template_path = ""
        elif toggle == "no_verifier":
            cfg.retry_budget = 0
        else:
            raise ConfigError(f"unknown ablation toggle {toggle!r}")
    return cfg


def _toggle_subsets(toggles: Sequence[str]):
    # Base config first, then every non-empty combination in a stable order.
    from itertools import combinations

    out = [()]
    for r in range(1, len(toggles) + 1):
        out.extend(combinations(toggles, r))
    return out


def ablate(
    config: RunConfig,
    toggles: Sequence[str],
    backend: Optional[Backend] = None,
) -> List[dict]:
    """Run the base config plus every toggle combination; report each row's
    strict F1, its delta versus base, and reliability rates."""
    config.validate()
    for toggle in toggles:
        if toggle not in ABLATION_TOGGLES:
            raise ConfigError(f"unknown ablation toggle {toggle!r}")
    gold = read_conll(config.test_path, sep=config.tag_separator)
    rows = []
    base_f1 = None
    for combo in _toggle_subsets(list(toggles)):
        cfg = apply_toggles(config, combo)
        name = "+".join(combo) if combo else "base"
        result = extract_run(cfg, backend=backend, sentences=gold, run_name=f"ablate_{name}")
        report = evaluate_run(gold, result, cfg.dataset_id)
        row_metrics = next(iter(report.per_dataset.values()))
        f1 = row_metrics.strict.f1
        if base_f1 is None:
            base_f1 = f1
        rows.append(
            {
                "toggles": name,
                "strict_f1": f1,
                "delta_f1": f1 - base_f1,
                "illegal_rate": row_metrics.illegal_rate,
                "hallucination_rate": row_metrics.hallucination_rate,
                "final_illegal_rate": metrics.final_illegal_rate(result.audits),
            }
        )
    return rows


def sweep_k(
    config: RunConfig,
    k_values: Sequence[int],
    backend: Optional[Backend] = None,
) -> List[dict]:
    """One extraction + evaluation per demo-retrieval k value."""
    config.validate()
    gold = read_conll(config.test_path, sep=config.tag_separator)
    rows = []
    for k in k_values:
        if k < 0:
            raise ConfigError(f"negative k {k}")
        cfg = apply_toggles(config, ())
        cfg.k_demo = k
        if k == 0:
            cfg.gate_weights = {}
        result = extract_run(cfg, backend=backend, sentences=gold, run_name=f"sweep_k{k}")
        report = evaluate_run(gold, result, cfg.dataset_id)
        row = next(iter(report.per_dataset.values()))
        rows.append(
            {
                "k": k,
                "precision": row.strict.precision,
                "recall": row.strict.recall,
                "f1": row.strict.f1,
                "mean_latency_s": result.mean_latency_s,
            }
        )
    return rows
