"""Page harvester: polite fetching, defense handling, snapshot inbox.

Fetching is governed by one market-wide rate limiter whose delay adapts
to what the market tolerates: any throttle signal (HTTP 429 or a silent
throttle page) multiplies the delay; the delay only decays back toward
the configured base after a full window of clean responses, so steady
state sits just above the market's real limit instead of oscillating
through it. Multiple transport circuits may share the limiter; the
market-wide spacing floor still holds.

A CAPTCHA challenge stops the run cold: the harvester has no business
solving challenges, it records progress in the inbox manifest so a human
can renew the session and the next run resumes exactly where it stopped.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence
from urllib.parse import urlparse

import requests

from .dndo import format_timestamp
from .errors import MiningError
from .frontier import IMAGE_EXTENSIONS, FetchTransportError

logger = logging.getLogger(__name__)


class CaptchaRequired(MiningError):
    """The market answered with a challenge page; a human must renew the session."""


class SessionExpired(MiningError):
    """The market redirected to its login page; the session token is stale."""


class ExhaustedRetries(MiningError):
    """The page kept throttling or failing past the attempt budget."""


class TransportError(FetchTransportError):
    """Connection-level failure talking to the market."""


class FetchFailed(MiningError):
    """The market answered with a definitive non-success status."""

    def __init__(self, url: str, status: int):
        super().__init__(f"{url} -> HTTP {status}")
        self.status = status


class ScopeViolation(MiningError):
    """Refused to request a URL outside scope or with an image extension."""


class RateMode(str, Enum):
    HTTP_429 = "Http429"
    SILENT = "Silent"
    NONE = "None"


@dataclass(frozen=True)
class RatePolicy:
    """Adaptive delay settings for one market.

    ``current_delay_ms`` is the live operating delay and always stays
    within [base_delay_ms, max_delay_ms].
    """

    base_delay_ms: float = 500.0
    backoff_multiplier: float = 1.6
    max_delay_ms: float = 30_000.0
    jitter_fraction: float = 0.1
    mode_hint: RateMode = RateMode.NONE
    current_delay_ms: float | None = None

    def __post_init__(self) -> None:
        if self.base_delay_ms > self.max_delay_ms:
            raise ValueError("base_delay_ms must not exceed max_delay_ms")
        if self.backoff_multiplier <= 1:
            raise ValueError("backoff_multiplier must exceed 1")
        if not 0 <= self.jitter_fraction < 1:
            raise ValueError("jitter_fraction must be in [0, 1)")
        if self.current_delay_ms is None:
            object.__setattr__(self, "current_delay_ms", self.base_delay_ms)
        elif not self.base_delay_ms <= self.current_delay_ms <= self.max_delay_ms:
            raise ValueError("current_delay_ms must lie in [base, max]")

    @classmethod
    def from_dict(cls, data: dict) -> "RatePolicy":
        return cls(
            base_delay_ms=float(data.get("base_delay_ms", 500.0)),
            backoff_multiplier=float(data.get("backoff_multiplier", 1.6)),
            max_delay_ms=float(data.get("max_delay_ms", 30_000.0)),
            jitter_fraction=float(data.get("jitter_fraction", 0.1)),
            mode_hint=RateMode(data.get("mode_hint", "None")),
        )


def tune_rate(
    policy: RatePolicy, observations: Sequence[tuple[int, float]]
) -> RatePolicy:
    """One tuning step from a window of (status, latency) observations.

    Any throttle status in the window multiplies the operating delay
    (capped); an all-clean window decays it one multiplier step back
    toward base. The returned policy carries the updated delay.
    """
    delay = policy.current_delay_ms
    if any(status == 429 for status, _ in observations):
        delay = min(delay * policy.backoff_multiplier, policy.max_delay_ms)
    else:
        delay = max(delay / policy.backoff_multiplier, policy.base_delay_ms)
    return replace(policy, current_delay_ms=delay)


@dataclass(frozen=True)
class Session:
    """Credential for one market's gated pages."""

    market_id: str
    token: str
    obtained_at: str = field(default_factory=format_timestamp)
    source: str = "Config"

    def __post_init__(self) -> None:
        if not self.token:
            raise ValueError("session token must be non-empty")

    @classmethod
    def from_token_file(cls, market_id: str, path) -> "Session | None":
        file = Path(path)
        if not file.exists():
            return None
        token = file.read_text(encoding="utf-8").strip()
        return cls(market_id, token, source="HumanHandoff") if token else None


@dataclass(frozen=True)
class Snapshot:
    url: str
    fetched_at: str
    body_path: Path
    status: int


class RateLimiter:
    """Market-wide pacing shared by every worker and circuit.

    The gap between any two requests to the market is the current delay
    (jittered), never below base * (1 - jitter). Throttle signals multiply
    the delay immediately; the decay step back toward base happens only
    after ``decay_window`` consecutive clean responses, so the limiter
    probes the market's real limit rarely instead of bouncing off it.
    """

    def __init__(self, policy: RatePolicy, decay_window: int = 25, rng=None):
        self.policy = policy
        self.decay_window = decay_window
        self._delay_ms = policy.current_delay_ms
        self._clean_streak = 0
        self._next_allowed = 0.0
        self._lock = threading.Lock()
        self._rng = rng or random.Random()
        self.throttle_signals = 0
        self.requests_made = 0

    @property
    def current_delay_ms(self) -> float:
        with self._lock:
            return self._delay_ms

    def acquire(self) -> None:
        """Block until the next request slot, then reserve the one after it."""
        with self._lock:
            now = time.monotonic()
            wait = self._next_allowed - now
            jitter = 1.0 + self._rng.uniform(
                -self.policy.jitter_fraction, self.policy.jitter_fraction
            )
            start = max(now, self._next_allowed)
            self._next_allowed = start + (self._delay_ms / 1000.0) * jitter
            self.requests_made += 1
        if wait > 0:
            time.sleep(wait)

    def on_throttle(self) -> None:
        with self._lock:
            self._delay_ms = min(
                self._delay_ms * self.policy.backoff_multiplier, self.policy.max_delay_ms
            )
            self._clean_streak = 0
            self.throttle_signals += 1

    def on_success(self) -> None:
        with self._lock:
            self._clean_streak += 1
            if self._clean_streak >= self.decay_window:
                self._delay_ms = max(
                    self._delay_ms / self.policy.backoff_multiplier,
                    self.policy.base_delay_ms,
                )
                self._clean_streak = 0


class Transport:
    """HTTP access with the safety guard at the lowest level.

    Refuses image URLs and anything off the scope host no matter what the
    caller asks for; the frontier should never hand us one, but the guard
    makes the guarantee unconditional. Redirects are never followed (a
    redirect to a login page is a signal, not a destination).
    """

    def __init__(
        self,
        scope_host: str,
        proxy: str | None = None,
        timeout: float = 30.0,
        circuits: int = 1,
    ):
        self.scope_host = scope_host
        self.timeout = timeout
        self.circuits = max(1, circuits)
        self.refused_urls = 0
        self._counter = 0
        self._counter_lock = threading.Lock()
        self._session = requests.Session()
        if proxy:
            self._session.proxies = {"http": proxy, "https": proxy}

    def _guard(self, url: str) -> None:
        parsed = urlparse(url)
        path = parsed.path.lower()
        if any(path.endswith(ext) for ext in IMAGE_EXTENSIONS):
            self.refused_urls += 1
            raise ScopeViolation(f"refusing image URL {url}")
        if parsed.netloc != self.scope_host:
            self.refused_urls += 1
            raise ScopeViolation(f"refusing off-scope URL {url} (scope {self.scope_host})")

    def _next_circuit(self) -> str:
        with self._counter_lock:
            self._counter += 1
            return f"c{self._counter % self.circuits}"

    def request(
        self, url: str, token: str | None = None, method: str = "GET"
    ) -> tuple[int, str, dict]:
        self._guard(url)
        headers = {"X-Circuit": self._next_circuit()}
        cookies = {"session": token} if token else None
        try:
            resp = self._session.request(
                method,
                url,
                headers=headers,
                cookies=cookies,
                timeout=self.timeout,
                allow_redirects=False,
            )
        except requests.RequestException as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc
        return resp.status_code, resp.text, dict(resp.headers)


@dataclass(frozen=True)
class FetchProfile:
    """The per-market signals fetching needs: challenge and silence detection."""

    challenge_signature: str
    listing_marker: str
    min_body_bytes: int = 512


def detect_silent_block(html: str, profile) -> bool:
    """True when a 200 response is a throttle page, not real content."""
    if len(html.encode("utf-8")) < profile.min_body_bytes:
        return True
    return re.search(profile.listing_marker, html) is None


class HarvestClient:
    """Fetching facade for one market: transport + limiter + defense handling."""

    def __init__(
        self,
        transport: Transport,
        limiter: RateLimiter,
        profile,
        session: Session | None = None,
        max_attempts: int = 6,
    ):
        self.transport = transport
        self.limiter = limiter
        self.profile = profile
        self.session = session
        self.max_attempts = max_attempts

    def _token(self) -> str | None:
        return self.session.token if self.session else None

    def fetch_page(self, url: str) -> str:
        """Fetch one page body, riding out throttles within the attempt budget."""
        last_error: MiningError | None = None
        for _ in range(self.max_attempts):
            self.limiter.acquire()
            try:
                status, body, headers = self.transport.request(url, self._token())
            except TransportError as exc:
                last_error = exc
                continue
            if status == 429:
                self.limiter.on_throttle()
                last_error = ExhaustedRetries(f"{url}: still throttled (429)")
                continue
            if status in (301, 302, 303, 307, 308):
                location = headers.get("Location", "")
                if "login" in location.lower():
                    raise SessionExpired(f"{url} redirected to {location}")
                raise FetchFailed(url, status)
            if status != 200:
                raise FetchFailed(url, status)
            if re.search(self.profile.challenge_signature, body):
                raise CaptchaRequired(f"{url} served a challenge page")
            if detect_silent_block(body, self.profile):
                self.limiter.on_throttle()
                last_error = ExhaustedRetries(f"{url}: silent throttle page")
                continue
            self.limiter.on_success()
            return body
        if isinstance(last_error, TransportError):
            raise last_error
        raise last_error or ExhaustedRetries(f"{url}: no attempts made")

    def probe_status(self, url: str) -> int:
        """Liveness probe via HEAD; waits out throttles so 429 never kills a URL."""
        for _ in range(self.max_attempts):
            self.limiter.acquire()
            status, _, _ = self.transport.request(url, self._token(), method="HEAD")
            if status == 429:
                self.limiter.on_throttle()
                continue
            self.limiter.on_success()
            return status
        return 429


# -- inbox -------------------------------------------------------------------

MANIFEST_NAME = "manifest.tsv"


@dataclass
class HarvestReport:
    saved: int = 0
    captcha_stops: int = 0
    failures: int = 0
    skipped: int = 0


class InboxManifest:
    """Tab-separated record of what was fetched: url, file, status, fetched_at.

    The manifest is the reverse map from snapshot filename back to
    (url, timestamp); it survives extraction so a completed re-run can
    still tell what it already fetched.
    """

    def __init__(self, market_dir: Path):
        self.market_dir = Path(market_dir)
        self.path = self.market_dir / MANIFEST_NAME
        self._rows: dict[str, tuple[str, int, str]] = {}  # url -> (file, status, ts)
        self._by_file: dict[str, str] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                url, filename, status, ts = line.split("\t")
                self._rows[url] = (filename, int(status), ts)
                self._by_file[filename] = url

    def __contains__(self, url: str) -> bool:
        return url in self._rows

    def __len__(self) -> int:
        return len(self._rows)

    def url_for_file(self, filename: str) -> str | None:
        return self._by_file.get(filename)

    def record(self, url: str, filename: str, status: int, fetched_at: str) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(f"{url}\t{filename}\t{status}\t{fetched_at}\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._rows[url] = (filename, status, fetched_at)
        self._by_file[filename] = url

    def snapshots(self) -> list[Snapshot]:
        """Snapshots whose body file still exists (not yet consumed)."""
        out = []
        for url, (filename, status, ts) in self._rows.items():
            body_path = self.market_dir / filename
            if body_path.exists():
                out.append(Snapshot(url, ts, body_path, status))
        return out


def snapshot_filename(url: str, fetched_at: datetime) -> str:
    parsed = urlparse(url)
    host = re.sub(r"[^A-Za-z0-9.-]", "-", parsed.netloc)
    path_hash = hashlib.sha256(url.encode("utf-8")).hexdigest()[:12]
    stamp = fetched_at.astimezone(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return f"{host}_{path_hash}_{stamp}.html"


def _write_atomic(path: Path, body: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(body, encoding="utf-8")
    os.replace(tmp, path)


def harvest(
    active_links: Iterable[str],
    client: HarvestClient,
    inbox_dir,
    market_id: str,
) -> HarvestReport:
    """Fetch every active URL once and snapshot it into the inbox.

    URLs already in the manifest are skipped, which makes a re-run after a
    CAPTCHA stop (or a completed run) resume without duplicates or gaps.
    A challenge stops the run immediately; per-page failures are counted
    and the run continues.
    """
    market_dir = Path(inbox_dir) / market_id
    market_dir.mkdir(parents=True, exist_ok=True)
    manifest = InboxManifest(market_dir)
    report = HarvestReport()

    for url in active_links:
        if url in manifest:
            report.skipped += 1
            continue
        try:
            body = client.fetch_page(url)
        except CaptchaRequired:
            report.captcha_stops += 1
            logger.warning(
                "challenge at %s after %d saved; renew the session and re-run",
                url,
                report.saved,
            )
            return report
        except (ExhaustedRetries, TransportError, FetchFailed, SessionExpired) as exc:
            report.failures += 1
            logger.warning("failed to harvest %s: %s", url, exc)
            continue
        now = datetime.now(timezone.utc)
        filename = snapshot_filename(url, now)
        _write_atomic(market_dir / filename, body)
        manifest.record(url, filename, 200, format_timestamp(now))
        report.saved += 1
    return report
