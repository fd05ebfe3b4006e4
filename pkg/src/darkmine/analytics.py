"""Aggregate views over a corpus: class split, sellers, heatmap, prices.

Every aggregate is a pure function of a point-in-time corpus view and is
designed to be checkable against a naive scan. "Worldwide" stays a label
of its own — a worldwide origin may conceal any real origin, so per-country
attribution is reported as a (min, max) range instead of a guess. Ties
break by label ascending everywhere, for deterministic output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .dndo import Dndo, ProductClass
from .errors import MiningError

DEFAULT_PRICE_EDGES = (0, 1, 5, 10, 50, 100, 500, 1000)
WORLDWIDE = "Worldwide"
UNKNOWN_LABEL = "None"


class EmptyCorpus(MiningError):
    """The aggregate has an empty denominator."""


class BadEdges(MiningError):
    """Histogram edges must be strictly increasing, at least two of them."""


@dataclass(frozen=True)
class ShareReport:
    subject: str
    numerator: int
    denominator: int

    @property
    def percent(self) -> float:
        return 100.0 * self.numerator / self.denominator

    def __post_init__(self) -> None:
        if self.denominator <= 0:
            raise EmptyCorpus(f"no records to take a share of for {self.subject!r}")


@dataclass(frozen=True)
class HeatmapMatrix:
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    cells: tuple[tuple[int, ...], ...]

    def total(self) -> int:
        return sum(sum(row) for row in self.cells)


@dataclass(frozen=True)
class PriceHistogram:
    edges: tuple[float, ...]
    counts: tuple[int, ...]
    unparsed: int
    out_of_range: int

    def buckets(self) -> list[tuple[tuple[float, float], int]]:
        return [
            ((self.edges[i], self.edges[i + 1]), self.counts[i])
            for i in range(len(self.counts))
        ]


def _records(corpus) -> list[Dndo]:
    if isinstance(corpus, Mapping):
        return list(corpus.values())
    if hasattr(corpus, "documents"):
        return list(corpus.documents().values())
    return list(corpus)


def product_class_split(corpus) -> dict[str, ShareReport]:
    """Digital/Physical shares over records with a known class.

    Unknown-class records are reported separately, as a share of the whole
    corpus, and never dilute the known-class split.
    """
    records = _records(corpus)
    if not records:
        raise EmptyCorpus("empty corpus")
    known = [r for r in records if r.productClass is not ProductClass.UNKNOWN]
    if not known:
        raise EmptyCorpus("no records with a known product class")
    out = {}
    for cls in (ProductClass.DIGITAL, ProductClass.PHYSICAL):
        count = sum(1 for r in known if r.productClass is cls)
        out[cls.value] = ShareReport(cls.value, count, len(known))
    unknown_count = len(records) - len(known)
    if unknown_count:
        out[ProductClass.UNKNOWN.value] = ShareReport(
            ProductClass.UNKNOWN.value, unknown_count, len(records)
        )
    return out


def _class_filter(records: Iterable[Dndo], product_class: str | None) -> list[Dndo]:
    if product_class is None:
        return list(records)
    wanted = ProductClass.classify(product_class)
    return [r for r in records if r.productClass is wanted]


def top_sellers(
    corpus, n: int, product_class: str | None = None
) -> list[tuple[str, int]]:
    """Sellers ranked by post count, descending; ties by name ascending."""
    if n < 1:
        raise ValueError("n must be at least 1")
    counts: dict[str, int] = {}
    for record in _class_filter(_records(corpus), product_class):
        if record.seller is None:
            continue
        counts[record.seller] = counts.get(record.seller, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


def seller_share(corpus, seller: str, product_class: str | None = None) -> ShareReport:
    """One seller's share of posts, optionally within one product class."""
    if not seller:
        raise ValueError("seller must be non-empty")
    pool = _class_filter(_records(corpus), product_class)
    if not pool:
        raise EmptyCorpus("no records in the requested class")
    mine = sum(1 for r in pool if r.seller == seller)
    return ShareReport(seller, mine, len(pool))


def category_origin_heatmap(corpus, top_k: int) -> HeatmapMatrix:
    """Top-k categories (rows) against every observed origin (columns)."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    records = [r for r in _records(corpus) if r.category is not None]
    if not records:
        raise EmptyCorpus("no records with a category")
    category_counts: dict[str, int] = {}
    for record in records:
        category_counts[record.category] = category_counts.get(record.category, 0) + 1
    rows = [
        name
        for name, _ in sorted(category_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ][:top_k]
    row_set = set(rows)
    pool = [
        r for r in records if r.category in row_set and r.originCountry is not None
    ]
    cols = sorted({r.originCountry for r in pool})
    cells = []
    for category in rows:
        row = []
        for origin in cols:
            row.append(
                sum(
                    1
                    for r in pool
                    if r.category == category and r.originCountry == origin
                )
            )
        cells.append(tuple(row))
    return HeatmapMatrix(tuple(rows), tuple(cols), tuple(cells))


def price_histogram(
    corpus,
    product_class: str | None = None,
    bucket_edges: Iterable[float] = DEFAULT_PRICE_EDGES,
    currency: str = "USD",
) -> PriceHistogram:
    """Bucket counts over parsed prices in one currency; no FX conversion.

    Buckets are half-open [edge_i, edge_i+1). Prices that did not parse,
    or parsed in another currency, are the ``unparsed`` count; parsed
    prices outside the edge span are ``out_of_range``.
    """
    edges = tuple(float(e) for e in bucket_edges)
    if len(edges) < 2 or any(a >= b for a, b in zip(edges, edges[1:])):
        raise BadEdges(f"edges must be strictly increasing, got {edges}")
    counts = [0] * (len(edges) - 1)
    unparsed = 0
    out_of_range = 0
    for record in _class_filter(_records(corpus), product_class):
        price = record.price
        if price.amount_minor_units is None or price.currency != currency:
            unparsed += 1
            continue
        amount = price.amount_minor_units / 100.0
        if amount < edges[0] or amount >= edges[-1]:
            out_of_range += 1
            continue
        for i in range(len(counts)):
            if edges[i] <= amount < edges[i + 1]:
                counts[i] += 1
                break
    return PriceHistogram(edges, tuple(counts), unparsed, out_of_range)


def payment_share(corpus) -> dict[str, ShareReport]:
    """Share per distinct payment label; absent payment counts as "None"."""
    records = _records(corpus)
    if not records:
        raise EmptyCorpus("empty corpus")
    counts: dict[str, int] = {}
    for record in records:
        label = record.payment if record.payment is not None else UNKNOWN_LABEL
        counts[label] = counts.get(label, 0) + 1
    return {
        label: ShareReport(label, count, len(records))
        for label, count in sorted(counts.items())
    }


def quantity_distribution(corpus, n: int) -> list[tuple[str, int]]:
    """Top-n raw quantity strings by frequency; ties by text ascending."""
    if n < 1:
        raise ValueError("n must be at least 1")
    counts: dict[str, int] = {}
    for record in _records(corpus):
        raw = record.quantity.raw if record.quantity.raw is not None else UNKNOWN_LABEL
        counts[raw] = counts.get(raw, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


def origin_attribution_range(corpus, country: str) -> tuple[float, float]:
    """(min, max) share of a concrete origin country, in percent.

    The minimum counts only exact matches; the maximum adds worldwide
    origins, any of which could conceal the country in question. The
    denominator is records with a known origin.
    """
    if not country or country == WORLDWIDE:
        raise ValueError("country must be a concrete label")
    records = [r for r in _records(corpus) if r.originCountry is not None]
    if not records:
        raise EmptyCorpus("no records with a known origin")
    exact = sum(1 for r in records if r.originCountry == country)
    ceiling = exact + sum(1 for r in records if r.originCountry == WORLDWIDE)
    total = len(records)
    return (100.0 * exact / total, 100.0 * ceiling / total)
