"""Corpus pipeline walkthrough: saved pages -> cleaned documents -> chunked corpora.

Runs entirely offline on the bundled fixture pages.
"""

from provaudit.corpus import CorpusRole, build_corpus, reassemble
from provaudit.fixtures import fixtures_dir, ingest_local_pages, load_safe_documents
from provaudit.html_clean import clean_html

# A raw page is mostly chrome; the cleaner keeps the readable content.
raw = (fixtures_dir() / "target_pages" / "child-benefit-rates.html").read_text()
text = clean_html(raw)
print("=== cleaned page ===")
print(text)
print()

# Ingest all twenty fixture pages the same way.
docs = ingest_local_pages(fixtures_dir() / "target_pages")
print(f"ingested {len(docs)} documents across {len({d.topic for d in docs})} topics")

# Chunk into token-bounded pieces. Chunks are exact substrings, so the
# original text reassembles byte for byte.
target = build_corpus(docs, CorpusRole.TARGET, chunk_len_tokens=32, name="demo-target")
print(f"target corpus: {len(target.chunks)} chunks of <= {target.chunk_len_tokens} tokens")
sample = target.chunks[0]
print(f"first chunk ({sample.token_count} tokens): {sample.text[:70]!r}...")
assert reassemble(target, docs[0].url) == docs[0].text
print("round trip: chunk concatenation reproduces the document exactly")

safe = build_corpus(load_safe_documents(), CorpusRole.SAFE, 32, name="demo-safe")
print(f"safe corpus: {len(safe.documents)} documents, {len(safe.chunks)} chunks")
assert not (target.urls() & safe.urls())
print("target and safe corpora share no URLs")
