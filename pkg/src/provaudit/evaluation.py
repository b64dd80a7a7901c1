"""Citizen-query evaluation: fixtures, pre/post response capture, ground truths.

The same queries are put to a model before and after ablation; the paired
responses are later hand-coded and tallied. Exactly one query in a shipped
evaluation set is a control on a topic outside the ablated material, used to
detect an over-intrusive ablation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Corpus
from .models import GenerationParams, ModelHandle, generate


class Phase(Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class Query:
    id: int
    text: str
    topic: str
    is_control: bool
    ground_truth: str
    source_urls: tuple[str, ...] = ()


class QuerySetError(ValueError):
    pass


def validate_query_set(queries: Sequence[Query], target_urls: set[str] | None = None) -> None:
    """Exactly one control; non-control sources must come from the target corpus."""
    controls = [q for q in queries if q.is_control]
    if len(controls) != 1:
        raise QuerySetError(f"expected exactly one control query, found {len(controls)}")
    ids = [q.id for q in queries]
    if len(set(ids)) != len(ids):
        raise QuerySetError("query ids must be unique")
    if target_urls is not None:
        for q in queries:
            if q.is_control:
                continue
            stray = set(q.source_urls) - target_urls
            if stray:
                raise QuerySetError(
                    f"query {q.id} cites URLs outside the target corpus: {sorted(stray)[:3]}"
                )


@dataclass
class ResponseRecord:
    query_id: int
    model_id: str
    phase: Phase
    response_text: str
    params: GenerationParams
    created_at: datetime
    error: str | None = None

    def key(self) -> tuple[int, str, Phase]:
        return (self.query_id, self.model_id, self.phase)


def run_evaluation(
    model: ModelHandle,
    queries: Sequence[Query],
    phase: Phase,
    params: GenerationParams = GenerationParams(),
    system_prompt: str | None = None,
) -> list[ResponseRecord]:
    """Ask every query once; a per-query generation failure is recorded on the
    record and the run continues."""
    records = []
    for query in queries:
        created = datetime.now(timezone.utc)
        try:
            text = generate(model, system_prompt, query.text, params)
            error = None
        except Exception as exc:  # recorded, not raised: one bad query must not sink the run
            text = ""
            error = f"{type(exc).__name__}: {exc}"
        records.append(
            ResponseRecord(
                query_id=query.id,
                model_id=model.model_id,
                phase=phase,
                response_text=text,
                params=params,
                created_at=created,
                error=error,
            )
        )
    return records


def compose_ground_truth(query: Query, target: Corpus) -> str:
    """Concatenate the target-corpus documents the query cites. The result is
    a starting point for hand editing, stored with its provenance."""
    by_url = {doc.url: doc for doc in target.documents}
    missing = [u for u in query.source_urls if u not in by_url]
    if missing:
        raise QuerySetError(f"query {query.id} cites URLs not in the corpus: {missing[:3]}")
    return "\n\n".join(by_url[u].text for u in query.source_urls)


# ---------------------------------------------------------------------------
# File formats: queries.jsonl and responses.jsonl
# ---------------------------------------------------------------------------

def save_queries(queries: Iterable[Query], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(
                json.dumps(
                    {
                        "id": q.id,
                        "text": q.text,
                        "topic": q.topic,
                        "is_control": q.is_control,
                        "ground_truth": q.ground_truth,
                        "source_urls": list(q.source_urls),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_queries(path: Path | str) -> list[Query]:
    queries = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            queries.append(
                Query(
                    id=int(rec["id"]),
                    text=rec["text"],
                    topic=rec.get("topic", ""),
                    is_control=bool(rec.get("is_control", False)),
                    ground_truth=rec.get("ground_truth", ""),
                    source_urls=tuple(rec.get("source_urls", [])),
                )
            )
    return queries


def save_responses(records: Iterable[ResponseRecord], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seen: set[tuple[int, str, Phase]] = set()
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            if r.key() in seen:
                raise ValueError(f"duplicate response for {r.key()}")
            seen.add(r.key())
            fh.write(
                json.dumps(
                    {
                        "query_id": r.query_id,
                        "model_id": r.model_id,
                        "phase": r.phase.value,
                        "response_text": r.response_text,
                        "max_new_tokens": r.params.max_new_tokens,
                        "temperature": r.params.temperature,
                        "seed": r.params.seed,
                        "created_at": r.created_at.isoformat(),
                        "error": r.error,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_responses(path: Path | str) -> list[ResponseRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            records.append(
                ResponseRecord(
                    query_id=int(rec["query_id"]),
                    model_id=rec["model_id"],
                    phase=Phase(rec["phase"]),
                    response_text=rec["response_text"],
                    params=GenerationParams(
                        max_new_tokens=int(rec.get("max_new_tokens", 256)),
                        temperature=float(rec.get("temperature", 0.0)),
                        seed=int(rec.get("seed", 0)),
                    ),
                    created_at=datetime.fromisoformat(rec["created_at"]),
                    error=rec.get("error"),
                )
            )
    keys = [r.key() for r in records]
    if len(set(keys)) != len(keys):
        raise ValueError("response file contains duplicate (query, model, phase) records")
    return records
