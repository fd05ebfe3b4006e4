"""Focused-crawl frontier: link discovery, filtering, queueing, liveness.

The crawl stays inside a single scope host and never queues image URLs.
Anchor hrefs are the only link source; image sources and image-extension
paths are dropped before they can reach the queue, so nothing downstream
ever requests picture content. Listing pages are told apart from
navigation pages purely by URL length, which is how markets with random
URL ids end up being filterable at all.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable
from urllib.parse import urldefrag, urljoin, urlparse

from bs4 import BeautifulSoup

from .dndo import format_timestamp
from .errors import MiningError

IMAGE_EXTENSIONS = frozenset(
    {".png", ".jpg", ".jpeg", ".gif", ".webp", ".bmp", ".svg"}
)


class EntryState(str, Enum):
    QUEUED = "Queued"
    ACTIVE = "Active"
    DEAD = "Dead"


class FetchTransportError(MiningError):
    """A liveness probe failed below the HTTP layer."""


@dataclass(frozen=True)
class LinkFilterPolicy:
    """What may enter the frontier for one market."""

    scope_host: str
    min_url_len: int = 0
    max_url_len: int = 10_000
    excluded_extensions: frozenset[str] = IMAGE_EXTENSIONS
    exclude_image_embedded: bool = True

    def __post_init__(self) -> None:
        if not self.scope_host:
            raise ValueError("scope_host must be non-empty")
        if self.min_url_len > self.max_url_len:
            raise ValueError("min_url_len must not exceed max_url_len")

    def is_image_url(self, url: str) -> bool:
        path = urlparse(url).path.lower()
        return any(path.endswith(ext) for ext in self.excluded_extensions)

    def in_scope(self, url: str) -> bool:
        return urlparse(url).netloc == self.scope_host


@dataclass
class QueueEntry:
    url: str
    discovered_from: str
    state: EntryState = EntryState.QUEUED
    enqueued_at: str = field(default_factory=format_timestamp)
    probe_attempts: int = 0


def extract_links(html: str, base_url: str, policy: LinkFilterPolicy) -> list[str]:
    """Absolute, deduplicated in-scope anchor URLs from one page.

    Image sources are never candidates; anchors that merely wrap an image
    are dropped too when the policy says so. Off-host and image-extension
    URLs never appear in the result. Malformed HTML is parsed tolerantly.
    """
    soup = BeautifulSoup(html, "html.parser")
    seen: set[str] = set()
    links: list[str] = []
    for anchor in soup.find_all("a", href=True):
        href = anchor["href"].strip()
        if not href or href.startswith(("#", "javascript:", "mailto:")):
            continue
        if policy.exclude_image_embedded and anchor.find("img") is not None:
            continue
        absolute = urldefrag(urljoin(base_url, href)).url
        scheme = urlparse(absolute).scheme
        if scheme not in ("http", "https"):
            continue
        if not policy.in_scope(absolute):
            continue
        if policy.is_image_url(absolute):
            continue
        if absolute not in seen:
            seen.add(absolute)
            links.append(absolute)
    return links


def filter_listing_urls(urls: Iterable[str], policy: LinkFilterPolicy) -> list[str]:
    """Keep URLs whose total length fits the market's listing-URL shape."""
    return [u for u in urls if policy.min_url_len <= len(u) <= policy.max_url_len]


class Frontier:
    """Shared crawl queue; enqueue and probe operations are linearizable.

    Dead entries leave the working queue but stay in an audit list so a
    deletion is always recoverable.
    """

    def __init__(self, retry_budget: int = 2, retry_delay: float = 1.0):
        self._lock = threading.Lock()
        self._entries: dict[str, QueueEntry] = {}
        self._audit: list[QueueEntry] = []
        self._claimed: set[str] = set()
        self.retry_budget = retry_budget
        self.retry_delay = retry_delay

    def enqueue(self, url: str, discovered_from: str = "") -> bool:
        """Add once; re-adding a known URL is a no-op returning False."""
        with self._lock:
            if url in self._entries:
                return False
            self._entries[url] = QueueEntry(url=url, discovered_from=discovered_from)
            return True

    def queued(self) -> list[str]:
        with self._lock:
            return [u for u, e in self._entries.items() if e.state is EntryState.QUEUED]

    def active(self) -> list[str]:
        with self._lock:
            return [u for u, e in self._entries.items() if e.state is EntryState.ACTIVE]

    def dead_audit(self) -> list[QueueEntry]:
        with self._lock:
            return list(self._audit)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries) + len(self._audit)

    def __contains__(self, url: str) -> bool:
        with self._lock:
            return url in self._entries or any(e.url == url for e in self._audit)

    def _claim_queued(self) -> QueueEntry | None:
        with self._lock:
            for entry in self._entries.values():
                if entry.state is EntryState.QUEUED and entry.url not in self._claimed:
                    self._claimed.add(entry.url)
                    return entry
        return None

    def probe_liveness(
        self, fetch_fn: Callable[[str], int], workers: int = 1
    ) -> dict[str, int]:
        """Settle every queued entry: 200 activates, anything else deletes.

        ``fetch_fn`` returns an HTTP status code; transport-level failures
        (raised exceptions) are retried on a budget before the entry is
        declared dead. Dead entries move to the audit list.
        """

        counts = {"activated": 0, "deleted": 0}
        counts_lock = threading.Lock()

        def settle(entry: QueueEntry) -> None:
            status: int | None = None
            for attempt in range(1 + self.retry_budget):
                entry.probe_attempts += 1
                try:
                    status = fetch_fn(entry.url)
                    break
                except Exception:
                    if attempt < self.retry_budget and self.retry_delay > 0:
                        time.sleep(self.retry_delay)
            with self._lock:
                if status == 200:
                    entry.state = EntryState.ACTIVE
                    bucket = "activated"
                else:
                    entry.state = EntryState.DEAD
                    del self._entries[entry.url]
                    self._audit.append(entry)
                    bucket = "deleted"
                self._claimed.discard(entry.url)
            with counts_lock:
                counts[bucket] += 1

        def worker() -> None:
            while True:
                entry = self._claim_queued()
                if entry is None:
                    return
                settle(entry)

        if workers <= 1:
            worker()
        else:
            threads = [threading.Thread(target=worker) for _ in range(workers)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        return counts

    def save_log(self, path, audit_path=None) -> None:
        """Persist state as tab-separated (timestamp, url, state, discovered_from)."""

        def line(e: QueueEntry) -> str:
            return f"{e.enqueued_at}\t{e.url}\t{e.state.value}\t{e.discovered_from}\n"

        with self._lock:
            live = [line(e) for e in self._entries.values()]
            dead = [line(e) for e in self._audit]
        Path(path).write_text("".join(live), encoding="utf-8")
        if audit_path is not None:
            Path(audit_path).write_text("".join(dead), encoding="utf-8")

    @classmethod
    def load_log(cls, path, audit_path=None, **kwargs) -> "Frontier":
        frontier = cls(**kwargs)
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            ts, url, state, discovered_from = raw.split("\t")
            frontier._entries[url] = QueueEntry(
                url=url,
                discovered_from=discovered_from,
                state=EntryState(state),
                enqueued_at=ts,
            )
        if audit_path is not None and Path(audit_path).exists():
            for raw in Path(audit_path).read_text(encoding="utf-8").splitlines():
                ts, url, state, discovered_from = raw.split("\t")
                frontier._audit.append(
                    QueueEntry(
                        url=url,
                        discovered_from=discovered_from,
                        state=EntryState(state),
                        enqueued_at=ts,
                    )
                )
        return frontier
