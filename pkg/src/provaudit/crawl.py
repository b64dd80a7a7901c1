"""CommonCrawl index lookups and capture fetching.

All network access for corpus construction lives here, behind two small
operations: look up captures of a URL in the public CDX index, and fetch one
capture's HTML via a ranged read of its WARC segment. Everything downstream
of this module runs offline from persisted documents.
"""

from __future__ import annotations

import gzip
import json
import threading
import time
from dataclasses import dataclass
from datetime import date, datetime, timezone
from concurrent.futures import ThreadPoolExecutor
from urllib.parse import urlparse

import requests

from .corpus import Document
from .html_clean import clean_html

DEFAULT_INDEX_BASE = "https://index.commoncrawl.org"
DEFAULT_DATA_BASE = "https://data.commoncrawl.org"
FIRST_CRAWL_YEAR = 2008


class RetriableFetchError(RuntimeError):
    """Transient network failure; the caller may retry the whole call."""


class EmptyCaptureError(RuntimeError):
    pass


@dataclass(frozen=True)
class Capture:
    url: str
    crawl_id: str
    timestamp: datetime
    status: str
    mime: str
    digest: str
    filename: str
    offset: int
    length: int


def _crawl_period_start(crawl_id: str) -> date | None:
    # Crawl labels look like CC-MAIN-2024-10 (ISO year-week).
    parts = crawl_id.split("-")
    if len(parts) != 4:
        return None
    try:
        year, week = int(parts[2]), int(parts[3])
        return date.fromisocalendar(year, week, 1)
    except ValueError:
        return None


class CrawlClient:
    def __init__(
        self,
        index_base: str = DEFAULT_INDEX_BASE,
        data_base: str = DEFAULT_DATA_BASE,
        session: requests.Session | None = None,
        timeout: float = 30.0,
        retries: int = 3,
        max_crawls: int = 4,
        parallelism: int = 4,
        per_host_delay: float = 1.0,
    ) -> None:
        self.index_base = index_base.rstrip("/")
        self.data_base = data_base.rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout
        self.retries = retries
        self.max_crawls = max_crawls
        self.parallelism = parallelism
        self.per_host_delay = per_host_delay
        self._crawls: list[dict] | None = None
        self._host_lock = threading.Lock()
        self._last_fetch: dict[str, float] = {}

    # -- low-level -----------------------------------------------------

    def _get(self, url: str, **kwargs) -> requests.Response:
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self.session.get(url, timeout=self.timeout, **kwargs)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code in (200, 206, 404):
                    return resp
                last_error = RuntimeError(f"HTTP {resp.status_code} from {url}")
            if attempt + 1 < self.retries:
                time.sleep(min(2.0**attempt, 8.0))
        raise RetriableFetchError(f"GET {url} failed after {self.retries} attempts: {last_error}")

    def _polite_wait(self, host: str) -> None:
        if self.per_host_delay <= 0:
            return
        while True:
            with self._host_lock:
                now = time.monotonic()
                last = self._last_fetch.get(host, 0.0)
                wait = self.per_host_delay - (now - last)
                if wait <= 0:
                    self._last_fetch[host] = now
                    return
            time.sleep(wait)

    # -- index ----------------------------------------------------------

    def list_crawls(self) -> list[dict]:
        if self._crawls is None:
            resp = self._get(f"{self.index_base}/collinfo.json")
            if resp.status_code == 404:
                raise RetriableFetchError(f"crawl listing not found at {self.index_base}")
            self._crawls = resp.json()
        return self._crawls

    def lookup_captures(self, url: str, before: date) -> list[Capture]:
        """Captures of `url` dated strictly before `before`, newest first.

        Queries the per-crawl CDX endpoints of the most recent crawls whose
        period starts before the cutoff (up to max_crawls of them). An
        unindexed URL yields an empty list, not an error.
        """
        parsed = urlparse(url)
        if not parsed.scheme or not parsed.netloc:
            raise ValueError(f"url must be absolute, got {url!r}")
        if before.year < FIRST_CRAWL_YEAR:
            return []

        eligible = []
        for crawl in self.list_crawls():
            start = _crawl_period_start(crawl.get("id", ""))
            if start is not None and start < before:
                eligible.append(crawl)
        eligible.sort(key=lambda c: _crawl_period_start(c["id"]), reverse=True)

        cutoff = datetime(before.year, before.month, before.day, tzinfo=timezone.utc)
        captures: list[Capture] = []
        for crawl in eligible[: self.max_crawls]:
            api = crawl.get("cdx-api") or f"{self.index_base}/{crawl['id']}-index"
            resp = self._get(
                api,
                params={"url": url, "output": "json", "filter": "status:200"},
            )
            if resp.status_code == 404:
                continue  # URL not in this crawl
            for line in resp.text.splitlines():
                line = line.strip()
                if not line or not line.startswith("{"):
                    continue
                rec = json.loads(line)
                ts = datetime.strptime(rec["timestamp"], "%Y%m%d%H%M%S").replace(
                    tzinfo=timezone.utc
                )
                if ts >= cutoff:
                    continue
                captures.append(
                    Capture(
                        url=rec.get("url", url),
                        crawl_id=crawl["id"],
                        timestamp=ts,
                        status=rec.get("status", ""),
                        mime=rec.get("mime", ""),
                        digest=rec.get("digest", ""),
                        filename=rec["filename"],
                        offset=int(rec["offset"]),
                        length=int(rec["length"]),
                    )
                )
        captures.sort(key=lambda c: c.timestamp, reverse=True)
        return captures

    # -- fetch ----------------------------------------------------------

    def fetch_document(self, capture: Capture, topic: str = "") -> Document:
        """Fetch one capture's WARC segment and clean it into a Document."""
        target = f"{self.data_base}/{capture.filename}"
        self._polite_wait(urlparse(target).netloc)
        headers = {"Range": f"bytes={capture.offset}-{capture.offset + capture.length - 1}"}
        resp = self._get(target, headers=headers)
        if resp.status_code == 404:
            raise RetriableFetchError(f"WARC segment missing: {capture.filename}")
        raw_html = _warc_payload(resp.content)
        if not raw_html.strip():
            raise EmptyCaptureError(f"empty capture for {capture.url}")
        return Document(
            url=capture.url,
            retrieved_at=datetime.now(timezone.utc),
            crawl_id=capture.crawl_id,
            raw_html=raw_html,
            text=clean_html(raw_html),
            topic=topic,
        )

    def fetch_documents(
        self, captures: list[Capture], topics: list[str] | None = None
    ) -> list[Document]:
        """Fetch several captures concurrently (politeness delay per host)."""
        topics = topics or [""] * len(captures)
        with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
            return list(pool.map(self.fetch_document, captures, topics))


def _warc_payload(body: bytes) -> str:
    """Extract the HTTP payload from a (possibly gzipped) WARC record."""
    if body[:2] == b"\x1f\x8b":
        body = gzip.decompress(body)
    if not body.strip():
        raise EmptyCaptureError("empty capture")
    # WARC record: WARC headers, HTTP headers, payload, each block separated
    # by a blank line.
    blocks = body.split(b"\r\n\r\n", 2)
    if len(blocks) == 3 and blocks[0].startswith(b"WARC/"):
        payload = blocks[2]
    elif len(blocks) >= 2 and blocks[0].startswith(b"WARC/"):
        payload = blocks[-1]
    else:
        payload = body
    return payload.decode("utf-8", errors="replace").strip("\r\n")
