from __future__ import annotations

from datetime import datetime, timezone

import pytest

from provaudit.corpus import CorpusRole, Document, build_corpus

NOW = datetime(2024, 3, 1, tzinfo=timezone.utc)


def make_document(url: str, text: str, topic: str = "") -> Document:
    return Document(url=url, retrieved_at=NOW, text=text, topic=topic)


@pytest.fixture
def small_corpora():
    """A small, fast target/safe corpus pair for engine tests."""
    target_docs = [
        make_document(
            f"https://www.govsite.example/t-{i}",
            " ".join(
                f"benefit payment claim rule-{i} item-{j} amount allowance eligibility"
                for j in range(12)
            ),
            topic="welfare",
        )
        for i in range(4)
    ]
    safe_docs = [
        make_document(
            f"https://encyclopedia.example/s-{i}",
            " ".join(
                f"parliament statute court convention doctrine-{i} precedent assent crown"
                for j in range(12)
            ),
            topic="law",
        )
        for i in range(2)
    ]
    target = build_corpus(target_docs, CorpusRole.TARGET, 24, name="t")
    safe = build_corpus(safe_docs, CorpusRole.SAFE, 24, name="s")
    return target, safe
