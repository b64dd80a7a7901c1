"""Documents, corpora, and deterministic token-bounded chunking.

A corpus plays one of two roles in an ablation run: the target material the
model should forget, or the safe material whose modelling must be preserved.
Chunks are exact contiguous substrings of a single document, split at
whitespace boundaries, and partition the document text so that concatenating
them reproduces it byte for byte.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence
from urllib.parse import urlparse

_TAGLIKE = re.compile(r"<[a-zA-Z/]")
_WORD = re.compile(r"\S+")


class CorpusError(ValueError):
    pass


class CorpusRole(Enum):
    TARGET = "target"
    SAFE = "safe"


def whitespace_tokenize(text: str) -> list[str]:
    """Default tokenizer: whitespace-delimited tokens."""
    return text.split()


Tokenizer = Callable[[str], list[str]]


@dataclass
class Document:
    url: str
    retrieved_at: datetime
    text: str
    topic: str = ""
    crawl_id: str = ""  # empty for local files
    raw_html: str | None = None

    def __post_init__(self) -> None:
        parsed = urlparse(self.url)
        if not parsed.scheme or not parsed.netloc:
            raise CorpusError(f"url must be absolute, got {self.url!r}")
        if not self.text.strip():
            raise CorpusError(f"document {self.url} has empty text")
        match = _TAGLIKE.search(self.text)
        if match:
            raise CorpusError(
                f"document {self.url} text contains tag-like markup at offset {match.start()}"
            )
        if self.retrieved_at.tzinfo is None:
            self.retrieved_at = self.retrieved_at.replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class Chunk:
    doc_url: str
    start: int
    end: int
    text: str
    token_count: int


@dataclass
class Corpus:
    name: str
    role: CorpusRole
    documents: list[Document]
    chunks: list[Chunk]
    chunk_len_tokens: int

    def chunk_texts(self) -> list[str]:
        return [c.text for c in self.chunks]

    def urls(self) -> set[str]:
        return {d.url for d in self.documents}


def chunk_document(doc: Document, chunk_len_tokens: int, tokenizer: Tokenizer) -> list[Chunk]:
    """Greedily fill chunks up to chunk_len_tokens, backtracking to the
    nearest whitespace boundary. Chunks partition doc.text exactly."""
    spans = [(m.start(), m.end(), m.group()) for m in _WORD.finditer(doc.text)]
    if not spans:
        raise CorpusError(f"document {doc.url} has no tokens")

    try:
        costs = [len(tokenizer(word)) for _, _, word in spans]
    except Exception as exc:
        raise CorpusError(f"tokenizer failed on document {doc.url}: {exc}") from exc

    boundaries = [0]  # char offset where each chunk starts
    counts: list[int] = []
    current = 0
    for i, cost in enumerate(costs):
        if cost > chunk_len_tokens:
            raise CorpusError(
                f"document {doc.url}: single word of {cost} tokens exceeds "
                f"chunk length {chunk_len_tokens}"
            )
        if current + cost > chunk_len_tokens:
            boundaries.append(spans[i][0])
            counts.append(current)
            current = 0
        current += cost
    counts.append(current)

    chunks = []
    for k, start in enumerate(boundaries):
        end = boundaries[k + 1] if k + 1 < len(boundaries) else len(doc.text)
        text = doc.text[start:end]
        assert text, "chunk must be non-empty"
        chunks.append(Chunk(doc.url, start, end, text, counts[k]))
    return chunks


def build_corpus(
    documents: Sequence[Document],
    role: CorpusRole,
    chunk_len_tokens: int,
    tokenizer: Tokenizer = whitespace_tokenize,
    name: str = "",
) -> Corpus:
    if not documents:
        raise CorpusError("documents must be non-empty")
    if chunk_len_tokens < 16:
        raise CorpusError(f"chunk_len_tokens must be >= 16, got {chunk_len_tokens}")
    chunks: list[Chunk] = []
    for doc in documents:
        chunks.extend(chunk_document(doc, chunk_len_tokens, tokenizer))
    return Corpus(
        name=name or f"{role.value}-corpus",
        role=role,
        documents=list(documents),
        chunks=chunks,
        chunk_len_tokens=chunk_len_tokens,
    )


def reassemble(corpus: Corpus, url: str) -> str:
    """Concatenate a document's chunks back together (round-trip check)."""
    return "".join(c.text for c in corpus.chunks if c.doc_url == url)


def assert_disjoint(target: Corpus, safe: Corpus) -> None:
    shared = target.urls() & safe.urls()
    if shared:
        raise CorpusError(
            f"target and safe corpora share document URLs: {sorted(shared)[:3]}"
        )


# ---------------------------------------------------------------------------
# Persistence: UTF-8 line-delimited JSON, one document per line. A corpus
# file carries one meta line first so it can be rebuilt without extra flags.
# ---------------------------------------------------------------------------

def _doc_to_record(doc: Document) -> dict:
    return {
        "url": doc.url,
        "retrieved_at": doc.retrieved_at.isoformat(),
        "crawl_id": doc.crawl_id,
        "topic": doc.topic,
        "text": doc.text,
    }


def _doc_from_record(rec: dict) -> Document:
    return Document(
        url=rec["url"],
        retrieved_at=datetime.fromisoformat(rec["retrieved_at"]),
        crawl_id=rec.get("crawl_id", ""),
        topic=rec.get("topic", ""),
        text=rec["text"],
    )


def save_documents(documents: Iterable[Document], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(json.dumps(_doc_to_record(doc), ensure_ascii=False) + "\n")


def load_documents(path: Path | str) -> list[Document]:
    docs = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                docs.append(_doc_from_record(json.loads(line)))
    return docs


def save_corpus(corpus: Corpus, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "corpus": corpus.name,
        "role": corpus.role.value,
        "chunk_len_tokens": corpus.chunk_len_tokens,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, ensure_ascii=False) + "\n")
        for doc in corpus.documents:
            fh.write(json.dumps(_doc_to_record(doc), ensure_ascii=False) + "\n")


def load_corpus(path: Path | str, tokenizer: Tokenizer = whitespace_tokenize) -> Corpus:
    with Path(path).open(encoding="utf-8") as fh:
        lines = [line for line in (l.strip() for l in fh) if line]
    if not lines:
        raise CorpusError(f"{path}: empty corpus file")
    meta = json.loads(lines[0])
    if "corpus" not in meta:
        raise CorpusError(f"{path}: first line must be the corpus meta record")
    docs = [_doc_from_record(json.loads(line)) for line in lines[1:]]
    return build_corpus(
        docs,
        role=CorpusRole(meta["role"]),
        chunk_len_tokens=int(meta["chunk_len_tokens"]),
        tokenizer=tokenizer,
        name=meta["corpus"],
    )
