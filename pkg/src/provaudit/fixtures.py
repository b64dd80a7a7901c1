"""Access to the bundled fixture data.

The fixtures make the whole toolkit exercisable offline: twenty saved
government-style pages (the target material), constitutional-law text (the
safe material), nineteen evaluation queries with ground truths, seven
statistic records with year histories, hand-filled prevalence scores, and a
paper-shaped differences table. The fixture model is rebuilt deterministically
from the corpora using the parameters in manifest.json, which also records
the calibration backing the ablation acceptance thresholds.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from .coding import Annotation, load_annotations
from .corpus import Corpus, CorpusRole, Document, build_corpus, load_documents
from .correlation import PrevalenceScore, load_prevalence
from .evaluation import Query, load_queries
from .html_clean import clean_html
from .leakage import StatisticRecord, load_records
from .models import ModelHandle
from .tinylm import TinyEmbeddingLM, trainable_handle


def fixtures_dir() -> Path:
    return Path(resources.files("provaudit") / "fixtures")  # type: ignore[arg-type]


def load_manifest() -> dict:
    return json.loads((fixtures_dir() / "manifest.json").read_text(encoding="utf-8"))


def ingest_local_pages(pages_dir: Path | str, retrieved_at: datetime | None = None) -> list[Document]:
    """Build documents from saved HTML pages listed in a manifest.jsonl with
    (file, url, topic) records. crawl_id stays empty for local files."""
    pages_dir = Path(pages_dir)
    retrieved_at = retrieved_at or datetime.now(timezone.utc)
    docs = []
    with (pages_dir / "manifest.jsonl").open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            raw_html = (pages_dir / entry["file"]).read_text(encoding="utf-8")
            docs.append(
                Document(
                    url=entry["url"],
                    retrieved_at=retrieved_at,
                    crawl_id="",
                    raw_html=raw_html,
                    text=clean_html(raw_html),
                    topic=entry.get("topic", ""),
                )
            )
    return docs


def load_target_documents() -> list[Document]:
    return ingest_local_pages(
        fixtures_dir() / "target_pages",
        retrieved_at=datetime(2024, 3, 1, tzinfo=timezone.utc),
    )


def load_safe_documents() -> list[Document]:
    return load_documents(fixtures_dir() / "safe_documents.jsonl")


def build_fixture_corpora(
    n_target_docs: int | None = None, chunk_len_tokens: int | None = None
) -> tuple[Corpus, Corpus]:
    manifest = load_manifest()
    chunk_len = chunk_len_tokens or manifest["fixture_model"]["chunk_len_tokens"]
    target_docs = load_target_documents()
    if n_target_docs is not None:
        target_docs = target_docs[:n_target_docs]
    target = build_corpus(target_docs, CorpusRole.TARGET, chunk_len, name="fixture-target")
    safe = build_corpus(load_safe_documents(), CorpusRole.SAFE, chunk_len, name="fixture-safe")
    return target, safe


def build_fixture_model(target: Corpus, safe: Corpus) -> TinyEmbeddingLM:
    """The shipped trainable fixture: deterministic given the corpora and the
    manifest parameters."""
    params = load_manifest()["fixture_model"]
    return TinyEmbeddingLM.fit_corpus(
        target.chunk_texts() + safe.chunk_texts(),
        dim=params["dim"],
        gain=params["gain"],
        smoothing=params["smoothing"],
    )


def fixture_model_handle(target: Corpus, safe: Corpus, model_id: str = "fixture-lm") -> ModelHandle:
    return trainable_handle(build_fixture_model(target, safe), model_id)


def load_fixture_queries() -> list[Query]:
    return load_queries(fixtures_dir() / "queries.jsonl")


def load_fixture_records() -> list[StatisticRecord]:
    return load_records(fixtures_dir() / "records.jsonl")


def load_fixture_prevalence() -> list[PrevalenceScore]:
    return load_prevalence(fixtures_dir() / "prevalence.csv")


def load_fixture_differences() -> dict[int, int]:
    import csv

    out: dict[int, int] = {}
    with (fixtures_dir() / "ablation_differences.csv").open(encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "query_id":
                continue
            out[int(row[0])] = int(row[1])
    return out


def load_paired_example_annotations() -> list[Annotation]:
    return load_annotations(fixtures_dir() / "paired_example_annotations.jsonl")
