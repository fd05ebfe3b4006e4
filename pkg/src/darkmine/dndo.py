"""Canonical marketplace record (DNDO) and its wire format.

A DNDO ("darknet data object") is one marketplace listing reduced to the
field set that holds across markets, plus analyst annotation fields. The
serialized form is a UTF-8 JSON object with a fixed key order; scraped
fields that were absent in the source are written as the literal string
"None", while absent analyst fields are written as JSON null. Corpus
directories store one object per file, named ``<doc_id>.dndo.json``.

This module also owns the corpus size metrics: the mean file size and the
symmetric percent-difference used to report HTML-to-DNDO reduction (the
metric can exceed 100% by construction; it is kept that way on purpose).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation, ROUND_HALF_UP
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

from .errors import MiningError

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"

# Serialized key order of the canonical object. Scraped fields first,
# analyst fields after; unknown extra keys are preserved in `extensions`
# and re-emitted after these, sorted.
SCRAPED_KEYS = (
    "title",
    "seller",
    "category",
    "creationDate",
    "url",
    "views",
    "purchases",
    "expire",
    "productClass",
    "originCountry",
    "shippingDestinations",
    "quantity",
    "payment",
    "price",
)
ANALYST_KEYS = (
    "analyst_hasViewed",
    "analyst_viewDate",
    "analyst_flagged",
    "analyst_notes",
    "analyst_closedDate",
    "analyst_dateCollected",
)
KEY_ORDER = SCRAPED_KEYS + ANALYST_KEYS

MISSING = "None"  # serialized placeholder for absent scraped values


class MalformedDocument(MiningError):
    """Input is not parseable structured text."""


class SchemaViolation(MiningError):
    """Input parsed, but violates the canonical schema."""


class BothZero(MiningError):
    """Size reduction is undefined when both averages are zero."""


class EmptyList(MiningError):
    """An average over zero samples is undefined."""


class ProductClass(str, Enum):
    DIGITAL = "Digital"
    PHYSICAL = "Physical"
    UNKNOWN = "Unknown"

    @classmethod
    def classify(cls, raw: str | None) -> "ProductClass":
        """Map raw text to the enum; anything but Digital/Physical is Unknown."""
        if raw is None:
            return cls.UNKNOWN
        text = raw.strip().lower()
        if text == "digital":
            return cls.DIGITAL
        if text == "physical":
            return cls.PHYSICAL
        return cls.UNKNOWN


class QuantityKind(str, Enum):
    LIMITED = "Limited"
    UNLIMITED = "Unlimited"
    UNKNOWN = "Unknown"


_PRICE_AMOUNT_FIRST = re.compile(r"^\s*(\d[\d,]*(?:\.\d+)?)\s+([A-Za-z]{3})\s*$")
_PRICE_CODE_FIRST = re.compile(r"^\s*([A-Za-z]{3})\s+(\d[\d,]*(?:\.\d+)?)\s*$")
_NUMERIC = re.compile(r"^\s*\d[\d,]*(?:\.\d+)?\s*$")


@dataclass(frozen=True)
class PriceValue:
    """A listing price: integer minor units + currency, with the source text.

    Unrecognized price text keeps the raw string and leaves the amount
    absent, so downstream numeric analysis can skip it without losing data.
    """

    amount_minor_units: int | None = None
    currency: str | None = None
    raw: str | None = None

    @classmethod
    def from_raw(cls, raw: str | None) -> "PriceValue":
        if raw is None:
            return cls()
        for pattern, amount_group, code_group in (
            (_PRICE_AMOUNT_FIRST, 1, 2),
            (_PRICE_CODE_FIRST, 2, 1),
        ):
            m = pattern.match(raw)
            if m:
                try:
                    amount = Decimal(m.group(amount_group).replace(",", ""))
                except InvalidOperation:
                    break
                minor = int((amount * 100).quantize(Decimal("1"), rounding=ROUND_HALF_UP))
                return cls(minor, m.group(code_group).upper(), raw)
        return cls(raw=raw)


@dataclass(frozen=True)
class QuantityValue:
    """Advertised stock: Unlimited, a concrete amount, or unknown text."""

    kind: QuantityKind = QuantityKind.UNKNOWN
    amount: Decimal | None = None
    raw: str | None = None

    @classmethod
    def from_raw(cls, raw: str | None) -> "QuantityValue":
        if raw is None:
            return cls()
        text = raw.strip()
        if text.lower() == "unlimited":
            return cls(QuantityKind.UNLIMITED, None, raw)
        if _NUMERIC.match(text):
            amount = Decimal(text.replace(",", ""))
            if amount >= 0:
                return cls(QuantityKind.LIMITED, amount, raw)
        return cls(QuantityKind.UNKNOWN, None, raw)


def _valid_timestamp(value: str) -> bool:
    try:
        datetime.strptime(value, TIMESTAMP_FORMAT)
    except (TypeError, ValueError):
        return False
    return True


def format_timestamp(dt: datetime | None = None) -> str:
    """Render a UTC timestamp in the canonical ``YYYY-MM-DD HH:MM:SS`` form."""
    if dt is None:
        dt = datetime.now(timezone.utc)
    elif dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc)
    return dt.strftime(TIMESTAMP_FORMAT)


@dataclass(frozen=True)
class Dndo:
    """One marketplace listing in canonical form.

    Field names mirror the serialized keys exactly. Scraped fields are
    ``None`` when the source page did not carry them; analyst fields are
    ``None`` until an analyst mutation sets them. ``analyst_dateCollected``
    is mandatory and always a valid canonical timestamp. Instances are
    immutable and safe to share across threads.
    """

    title: str | None = None
    seller: str | None = None
    category: str | None = None
    creationDate: str | None = None
    url: str | None = None
    views: int | None = None
    purchases: int | None = None
    expire: str | None = None
    productClass: ProductClass = ProductClass.UNKNOWN
    originCountry: str | None = None
    shippingDestinations: str | None = None
    quantity: QuantityValue = QuantityValue()
    payment: str | None = None
    price: PriceValue = PriceValue()
    analyst_hasViewed: bool | None = None
    analyst_viewDate: str | None = None
    analyst_flagged: bool | None = None
    analyst_notes: str | None = None
    analyst_closedDate: str | None = None
    analyst_dateCollected: str = ""
    extensions: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not _valid_timestamp(self.analyst_dateCollected):
            raise SchemaViolation(
                f"analyst_dateCollected must be a '{TIMESTAMP_FORMAT}' timestamp, "
                f"got {self.analyst_dateCollected!r}"
            )
        for key in ("analyst_viewDate", "analyst_closedDate"):
            value = getattr(self, key)
            if value is not None and not _valid_timestamp(value):
                raise SchemaViolation(f"{key} must be a canonical timestamp, got {value!r}")

    def scraped_items(self) -> dict[str, str]:
        """The 14 scraped fields in serialized form, for field-level comparison."""
        return {key: _scraped_to_wire(self, key) for key in SCRAPED_KEYS}

    def with_analyst(self, **changes: Any) -> "Dndo":
        bad = [k for k in changes if k not in ANALYST_KEYS]
        if bad:
            raise ValueError(f"not analyst fields: {bad}")
        return replace(self, **changes)


def doc_id_for_url(url: str) -> str:
    """Stable document id: re-parsing the same listing updates, not duplicates."""
    return hashlib.sha256(url.encode("utf-8")).hexdigest()[:16]


def _scraped_to_wire(d: Dndo, key: str) -> str:
    value = getattr(d, key)
    if key == "productClass":
        return MISSING if value is ProductClass.UNKNOWN else value.value
    if key == "quantity":
        return MISSING if value.raw is None else value.raw
    if key == "price":
        return MISSING if value.raw is None else value.raw
    if value is None:
        return MISSING
    if key in ("views", "purchases"):
        return str(value)
    return value


def _scraped_from_wire(key: str, value: Any) -> Any:
    if not isinstance(value, str):
        # Tolerate numbers/booleans written without quoting.
        value = MISSING if value is None else str(value)
    if key == "productClass":
        return ProductClass.classify(None if value == MISSING else value)
    if key == "quantity":
        return QuantityValue.from_raw(None if value == MISSING else value)
    if key == "price":
        return PriceValue.from_raw(None if value == MISSING else value)
    if value == MISSING:
        return None
    if key in ("views", "purchases"):
        stripped = value.replace(",", "").strip()
        return int(stripped) if stripped.isdigit() else None
    return value


def parse_dndo(serialized: str | bytes) -> Dndo:
    """Parse serialized text into a validated record.

    Unknown extra keys are preserved in the record's extensions map so the
    object can grow new fields without breaking old corpora.
    """
    try:
        data = json.loads(serialized)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedDocument(f"expected an object, got {type(data).__name__}")

    missing = [key for key in KEY_ORDER if key not in data]
    if missing:
        raise SchemaViolation(f"missing required keys: {missing}")

    kwargs: dict[str, Any] = {}
    for key in SCRAPED_KEYS:
        kwargs[key] = _scraped_from_wire(key, data[key])

    for key in ("analyst_hasViewed", "analyst_flagged"):
        value = data[key]
        if value is not None and not isinstance(value, bool):
            raise SchemaViolation(f"{key} must be boolean or null, got {value!r}")
        kwargs[key] = value
    for key in ("analyst_viewDate", "analyst_notes", "analyst_closedDate"):
        value = data[key]
        if value is not None and not isinstance(value, str):
            raise SchemaViolation(f"{key} must be text or null, got {value!r}")
        kwargs[key] = value
    collected = data["analyst_dateCollected"]
    if not isinstance(collected, str) or not _valid_timestamp(collected):
        raise SchemaViolation(f"analyst_dateCollected invalid: {collected!r}")
    kwargs["analyst_dateCollected"] = collected

    kwargs["extensions"] = {k: v for k, v in data.items() if k not in KEY_ORDER}
    return Dndo(**kwargs)


def to_wire_dict(d: Dndo) -> dict[str, Any]:
    """The JSON-ready mapping in canonical key order."""
    out: dict[str, Any] = {key: _scraped_to_wire(d, key) for key in SCRAPED_KEYS}
    for key in ANALYST_KEYS:
        out[key] = getattr(d, key)
    for key in sorted(d.extensions):
        out[key] = d.extensions[key]
    return out


def serialize_dndo(d: Dndo) -> str:
    """Serialize with the canonical key order; equal records yield equal bytes."""
    return json.dumps(to_wire_dict(d), indent=2, ensure_ascii=False)


def size_reduction_percent(v1: float, v2: float) -> float:
    """Symmetric percent difference between two average sizes.

    100 * |v1 - v2| / ((v1 + v2) / 2). Symmetric in its arguments and can
    exceed 100% when the sizes differ by more than 2x.
    """
    if v1 < 0 or v2 < 0:
        raise ValueError("sizes must be non-negative")
    if v1 == 0 and v2 == 0:
        raise BothZero("size reduction is undefined for two zero averages")
    return 100.0 * abs(v1 - v2) / ((v1 + v2) / 2.0)


def mean_file_size(sizes: Iterable[float]) -> float:
    """Arithmetic mean of a non-empty list of byte counts."""
    values = list(sizes)
    if not values:
        raise EmptyList("cannot average zero file sizes")
    return sum(values) / len(values)


@dataclass(frozen=True)
class ReductionReport:
    """Average source size vs. average record size, with the reduction metric."""

    html_avg_bytes: float
    dndo_avg_bytes: float
    reduction_percent: float

    @classmethod
    def from_averages(cls, html_avg: float, dndo_avg: float) -> "ReductionReport":
        return cls(html_avg, dndo_avg, size_reduction_percent(html_avg, dndo_avg))

    @classmethod
    def from_sizes(
        cls, html_sizes: Iterable[float], dndo_sizes: Iterable[float]
    ) -> "ReductionReport":
        return cls.from_averages(mean_file_size(html_sizes), mean_file_size(dndo_sizes))


def load_dndo_dir(path) -> dict[str, Dndo]:
    """Read every ``*.dndo.json`` file in a corpus directory, keyed by doc id."""
    out: dict[str, Dndo] = {}
    for file in sorted(Path(path).glob("*.dndo.json")):
        doc_id = file.name[: -len(".dndo.json")]
        out[doc_id] = parse_dndo(file.read_text(encoding="utf-8"))
    return out
