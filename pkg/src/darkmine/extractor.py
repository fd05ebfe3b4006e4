"""Profile-driven extraction: inbox HTML in, canonical records out.

A market profile is a declarative config (CSS selectors and/or regexes
per field, plus normalizers) that a non-programmer can edit; rule errors
surface when the profile loads, never mid-run. Extraction is
deterministic: the same HTML and profile always produce byte-identical
serialized records for a fixed collection timestamp.

The inbox lifecycle is deliberate: a snapshot's HTML is deleted only
after its record was durably written, and unparseable snapshots move to
a quarantine directory instead of being destroyed.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shutil
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

from bs4 import BeautifulSoup

from . import dndo
from .dndo import (
    Dndo,
    PriceValue,
    ProductClass,
    QuantityValue,
    doc_id_for_url,
    format_timestamp,
)
from .errors import MiningError
from .harvester import InboxManifest, Snapshot

logger = logging.getLogger(__name__)


class ProfileError(MiningError):
    """The extraction profile is invalid; refuse to start a run with it."""


class NotAListing(MiningError):
    """The page lacks the profile's listing marker."""


class SinkUnavailable(MiningError):
    """The record sink cannot accept writes; abort without deleting HTML."""


class Normalizer(str, Enum):
    NONE = "none"
    PRICE = "price"
    QUANTITY = "quantity"
    COUNTRY = "country"
    PRODUCT_CLASS = "product_class"
    COUNT = "count"


def normalize_price(raw: str) -> PriceValue:
    """Parse "<amount> <CODE>" or "<CODE> <amount>"; anything else keeps raw only."""
    return PriceValue.from_raw(raw)


def normalize_quantity(raw: str) -> QuantityValue:
    """"Unlimited" (any case), a number, or unknown text."""
    return QuantityValue.from_raw(raw)


def normalize_country(raw: str) -> str:
    text = raw.strip()
    return "Worldwide" if text.lower() == "worldwide" else text


def normalize_count(raw: str) -> int | None:
    stripped = raw.replace(",", "").strip()
    return int(stripped) if stripped.isdigit() else None


@dataclass(frozen=True)
class ExtractionRule:
    """One field's recipe: where to look and how to read what's there."""

    field: str
    selector: str | None = None
    pattern: str | None = None
    post_normalize: Normalizer = Normalizer.NONE

    def compiled_pattern(self) -> re.Pattern | None:
        return re.compile(self.pattern) if self.pattern else None


@dataclass(frozen=True)
class MarketProfile:
    market_id: str
    field_rules: tuple[ExtractionRule, ...]
    listing_marker: str
    challenge_signature: str
    url_len_bounds: tuple[int, int] = (0, 10_000)
    category_map: dict[str, str] | None = None
    min_body_bytes: int = 512

    @classmethod
    def from_dict(cls, data: dict) -> "MarketProfile":
        """Build and validate; every problem raises ProfileError now, not mid-run."""
        try:
            rules = tuple(
                ExtractionRule(
                    field=r["field"],
                    selector=r.get("selector"),
                    pattern=r.get("pattern"),
                    post_normalize=Normalizer(r.get("post_normalize", "none")),
                )
                for r in data["field_rules"]
            )
            profile = cls(
                market_id=data["market_id"],
                field_rules=rules,
                listing_marker=data["listing_marker"],
                challenge_signature=data["challenge_signature"],
                url_len_bounds=tuple(data.get("url_len_bounds", (0, 10_000))),
                category_map=data.get("category_map"),
                min_body_bytes=int(data.get("min_body_bytes", 512)),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ProfileError(f"bad profile document: {exc}") from exc
        profile.validate()
        return profile

    @classmethod
    def load(cls, path) -> "MarketProfile":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ProfileError(f"cannot load profile {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        if not self.market_id:
            raise ProfileError("market_id must be non-empty")
        fields_covered = {rule.field for rule in self.field_rules}
        for required in ("title", "seller"):
            if required not in fields_covered:
                raise ProfileError(f"profile must extract {required!r}")
        for rule in self.field_rules:
            if rule.field not in dndo.SCRAPED_KEYS:
                raise ProfileError(f"rule names unknown field {rule.field!r}")
            if rule.selector is None and rule.pattern is None:
                raise ProfileError(f"rule for {rule.field!r} has neither selector nor pattern")
            if rule.pattern is not None:
                try:
                    compiled = re.compile(rule.pattern)
                except re.error as exc:
                    raise ProfileError(f"bad pattern for {rule.field!r}: {exc}") from exc
                if compiled.groups < 1:
                    raise ProfileError(
                        f"pattern for {rule.field!r} needs one capture group"
                    )
        for marker_name in ("listing_marker", "challenge_signature"):
            try:
                re.compile(getattr(self, marker_name))
            except re.error as exc:
                raise ProfileError(f"bad {marker_name}: {exc}") from exc
        if self.url_len_bounds[0] > self.url_len_bounds[1]:
            raise ProfileError("url_len_bounds min exceeds max")


def _extract_raw(soup: BeautifulSoup, html: str, rule: ExtractionRule) -> str | None:
    scope_text: str | None = None
    if rule.selector is not None:
        node = soup.select_one(rule.selector)
        if node is None:
            return None
        scope_text = node.get_text(strip=True)
    if rule.pattern is not None:
        target = scope_text if scope_text is not None else html
        match = rule.compiled_pattern().search(target)
        if match is None:
            return None
        return match.group(1)
    return scope_text


def parse_listing(
    html: str,
    profile: MarketProfile,
    collected_at: str | None = None,
    source_url: str | None = None,
) -> Dndo:
    """Apply every field rule; fields with no match stay absent.

    ``collected_at`` defaults to the current UTC time; pass a fixed value
    for reproducible output. The record's url comes from ``source_url``
    unless the profile extracts one from the page itself.
    """
    if re.search(profile.listing_marker, html) is None:
        raise NotAListing(f"no listing marker for market {profile.market_id}")
    soup = BeautifulSoup(html, "html.parser")
    values: dict[str, Any] = {}
    for rule in profile.field_rules:
        raw = _extract_raw(soup, html, rule)
        if raw is None:
            continue
        if rule.post_normalize is Normalizer.PRICE:
            values[rule.field] = normalize_price(raw)
        elif rule.post_normalize is Normalizer.QUANTITY:
            values[rule.field] = normalize_quantity(raw)
        elif rule.post_normalize is Normalizer.COUNTRY:
            values[rule.field] = normalize_country(raw)
        elif rule.post_normalize is Normalizer.PRODUCT_CLASS:
            values[rule.field] = ProductClass.classify(raw)
        elif rule.post_normalize is Normalizer.COUNT:
            count = normalize_count(raw)
            if count is not None:
                values[rule.field] = count
        else:
            values[rule.field] = raw.strip()
    if profile.category_map and isinstance(values.get("category"), str):
        values["category"] = profile.category_map.get(
            values["category"], values["category"]
        )
    if "url" not in values and source_url is not None:
        values["url"] = source_url
    return Dndo(
        analyst_dateCollected=collected_at or format_timestamp(), **values
    )


class RecordSink(Protocol):
    def write(self, doc_id: str, record: Dndo, serialized: str) -> None: ...


class FileOutbox:
    """Writes one ``<doc_id>.dndo.json`` per record, durably."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise SinkUnavailable(f"cannot create outbox {out_dir}: {exc}") from exc

    def write(self, doc_id: str, record: Dndo, serialized: str) -> None:
        path = self.out_dir / f"{doc_id}.dndo.json"
        tmp = path.with_suffix(".tmp")
        try:
            with tmp.open("w", encoding="utf-8") as fh:
                fh.write(serialized)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise SinkUnavailable(f"cannot write {path}: {exc}") from exc


class CorpusSink:
    """Feeds records straight into an embedded search corpus."""

    def __init__(self, corpus):
        self.corpus = corpus

    def write(self, doc_id: str, record: Dndo, serialized: str) -> None:
        self.corpus.index_record(record, doc_id=doc_id)


@dataclass
class InboxStats:
    parsed: int = 0
    failed: int = 0
    deleted: int = 0
    html_avg: float = 0.0
    dndo_avg: float = 0.0

    def reduction(self) -> dndo.ReductionReport:
        return dndo.ReductionReport.from_averages(self.html_avg, self.dndo_avg)


def process_inbox(
    inbox_dir,
    profile: MarketProfile,
    sink: RecordSink,
    quarantine_dir=None,
    collected_at: str | None = None,
) -> InboxStats:
    """Parse every snapshot, push records to the sink, delete consumed HTML.

    Interrupted runs are safe to repeat: a crash between sink write and
    HTML delete leaves the snapshot in place, and re-parsing it lands on
    the same doc_id, so the sink sees an update rather than a duplicate.
    """
    market_dir = Path(inbox_dir) / profile.market_id
    manifest = InboxManifest(market_dir)
    quarantine = Path(quarantine_dir) if quarantine_dir else market_dir.parent.parent / "quarantine" / profile.market_id
    stamp = collected_at or format_timestamp()
    stats = InboxStats()
    html_sizes: list[int] = []
    dndo_sizes: list[int] = []

    known = {s.body_path for s in manifest.snapshots()}
    stray = (
        [p for p in market_dir.glob("*.html") if p not in known]
        if market_dir.exists()
        else []
    )
    work = sorted(manifest.snapshots(), key=lambda s: s.body_path.name) + [
        Snapshot(url=manifest.url_for_file(p.name), fetched_at="", body_path=p, status=0)
        for p in sorted(stray)
    ]

    for snapshot in work:
        body_path = snapshot.body_path
        html = body_path.read_text(encoding="utf-8", errors="replace")
        html_sizes.append(len(html.encode("utf-8")))
        try:
            record = parse_listing(html, profile, collected_at=stamp, source_url=snapshot.url)
            if record.url is None:
                raise NotAListing(f"{body_path.name}: no source url recorded")
            serialized = dndo.serialize_dndo(record)
            doc_id = doc_id_for_url(record.url)
        except MiningError as exc:
            html_sizes.pop()
            quarantine.mkdir(parents=True, exist_ok=True)
            shutil.move(str(body_path), str(quarantine / body_path.name))
            stats.failed += 1
            logger.warning("quarantined %s: %s", body_path.name, exc)
            continue
        sink.write(doc_id, record, serialized)
        body_path.unlink()
        stats.parsed += 1
        stats.deleted += 1
        dndo_sizes.append(len(serialized.encode("utf-8")))

    if html_sizes:
        stats.html_avg = dndo.mean_file_size(html_sizes)
    if dndo_sizes:
        stats.dndo_avg = dndo.mean_file_size(dndo_sizes)
    return stats
