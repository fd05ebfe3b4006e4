"""Deterministic synthetic marketplace: generator, HTTP server, ground truth.

The generator produces a complete fake market site (index, category pages
with pagination, listing pages) from a seed, together with the exact
records a correct pipeline must extract from it. The server enforces
configurable anti-scraping defenses (HTTP 429 throttling, silent throttle
pages, session tokens, a one-time challenge gate) and logs every request,
so tests can assert both what the pipeline produced and how it behaved.

Same seed + config = byte-identical site, ground truth, and URL set.
Session tokens are runtime state and intentionally outside that guarantee.
"""

from __future__ import annotations

import html
import json
import random
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import urlparse

from . import dndo
from .dndo import Dndo, PriceValue, ProductClass, QuantityValue
from .errors import MiningError

TRUTH_COLLECTED_AT = "1970-01-01 00:00:00"  # placeholder; real runs stamp their own
LISTINGS_PER_PAGE = 40
LISTING_MARKER = 'class="market-footer"'
CHALLENGE_SIGNATURE = 'id="captcha-gate"'


class BadConfig(MiningError):
    """Simulator configuration cannot produce a coherent site."""


class BindFailure(MiningError):
    """The requested endpoint could not be bound."""


class RateLimitMode(str, Enum):
    HTTP_429 = "Http429"
    SILENT = "Silent"
    NONE = "None"


class UrlScheme(str, Enum):
    SEQUENTIAL = "Sequential"
    RANDOM_HEX = "RandomHex"


@dataclass(frozen=True)
class DefenseConfig:
    rate_limit_mode: RateLimitMode = RateLimitMode.NONE
    limit_rps: float = 2.0
    burst: float = 1.0
    captcha_after_requests: int | None = None
    session_required: bool = False

    def __post_init__(self) -> None:
        if self.rate_limit_mode is not RateLimitMode.NONE and self.limit_rps <= 0:
            raise BadConfig("limit_rps must be positive when rate limiting is on")


DEFAULT_SELLERS = (
    ("DrunkDragon", 30), ("GoldApple", 12), ("OnePiece", 9), ("TheShop", 8),
    ("PMS", 5), ("AtomikBomB", 5), ("NightCourier", 4), ("PlasticFox", 3),
    ("QuietWolf", 2), ("BalticTrader", 2),
)

DEFAULT_CATEGORIES = (
    ("Digital goods Tutorials", "Digital"),
    ("Fraud Accounts", "Digital"),
    ("Software Malware", "Digital"),
    ("Drugs Cannabis", "Physical"),
    ("Drugs Stimulants", "Physical"),
    ("Counterfeit Items", "Physical"),
)

DEFAULT_ORIGINS = (
    ("Worldwide", 55), ("United States", 12), ("Germany", 9), ("France", 7),
    ("Netherlands", 5), ("Canada", 4), ("United Kingdom", 4), ("Australia", 4),
)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 7
    listing_count: int = 100
    market_id: str = "simmarket"
    seller_weights: tuple = DEFAULT_SELLERS
    categories: tuple = DEFAULT_CATEGORIES
    origin_pool: tuple = DEFAULT_ORIGINS
    defense: DefenseConfig = DefenseConfig()
    url_scheme: UrlScheme = UrlScheme.RANDOM_HEX
    listing_url_len: tuple[int, int] = (114, 120)

    def __post_init__(self) -> None:
        if self.listing_count < 1:
            raise BadConfig("listing_count must be at least 1")
        for name, weight in self.seller_weights:
            if weight <= 0:
                raise BadConfig(f"seller weight for {name!r} must be positive")
        for name, weight in self.origin_pool:
            if weight <= 0:
                raise BadConfig(f"origin weight for {name!r} must be positive")
        if self.listing_url_len[0] > self.listing_url_len[1]:
            raise BadConfig("listing_url_len min exceeds max")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        defense = data.get("defense", {})
        if isinstance(defense, dict):
            defense = DefenseConfig(
                rate_limit_mode=RateLimitMode(defense.get("rate_limit_mode", "None")),
                limit_rps=float(defense.get("limit_rps", 2.0)),
                burst=float(defense.get("burst", 1.0)),
                captcha_after_requests=defense.get("captcha_after_requests"),
                session_required=bool(defense.get("session_required", False)),
            )
        return cls(
            seed=int(data.get("seed", 7)),
            listing_count=int(data.get("listing_count", 100)),
            market_id=data.get("market_id", "simmarket"),
            seller_weights=tuple(
                (n, w) for n, w in data.get("seller_weights", DEFAULT_SELLERS)
            ),
            categories=tuple((n, c) for n, c in data.get("categories", DEFAULT_CATEGORIES)),
            origin_pool=tuple((n, w) for n, w in data.get("origin_pool", DEFAULT_ORIGINS)),
            defense=defense,
            url_scheme=UrlScheme(data.get("url_scheme", "RandomHex")),
            listing_url_len=tuple(data.get("listing_url_len", (114, 120))),
        )


_TITLE_ADJECTIVES = (
    "Fresh", "Premium", "Verified", "Bulk", "Cheap", "Instant",
    "Private", "Stealth", "Original", "Trusted",
)

_TITLE_NOUNS = {
    "Digital goods Tutorials": (
        "Carding Tutorial", "Cashout Guide", "Social Engineering Guides",
        "Refund Methods", "Cardable Shops List", "Dropshipping Course",
    ),
    "Fraud Accounts": (
        "Streaming Accounts", "Bank Logins", "Shop Account", "Email Combos",
        "Hacked Accounts", "Gift Card Codes",
    ),
    "Software Malware": (
        "Keylogger Builder", "Botnet Panels", "Crypter Tool", "Exploit Packs",
        "RAT Bundle", "Phishing Kits",
    ),
    "Drugs Cannabis": (
        "Indoor Flower", "Hash Blocks", "Edible Gummies", "Vape Carts",
        "Premium Buds", "Shake Bags",
    ),
    "Drugs Stimulants": (
        "Study Pills", "Energy Capsules", "Focus Tablets", "Party Packs",
        "Crystal Samples", "Powder Grams",
    ),
    "Counterfeit Items": (
        "Designer Wallets", "Replica Watches", "Fake Notes", "Branded Sneakers",
        "ID Cards", "Hologram Stickers",
    ),
}

_TITLE_SUFFIXES = ("Pack", "Bundle", "2020 Edition", "MEGA", "x10", "")

_NOISE_WORDS = (
    "vendor", "ships", "tracking", "stealth", "refund", "reship", "escrow",
    "feedback", "orders", "customers", "quality", "discreet", "express",
    "worldwide", "samples", "reviews", "guarantee", "support", "delivery",
    "packaging", "accounts", "guides", "tutorials", "cards", "documents",
)

_PAGE_STYLE = """
body { background: #14151a; color: #d8d4c8; font-family: monospace; margin: 0; }
nav { background: #1e2026; padding: 8px 16px; border-bottom: 1px solid #3a3d45; }
nav a { color: #9ecb8b; margin-right: 12px; text-decoration: none; }
main { max-width: 920px; margin: 16px auto; padding: 0 16px; }
table.listing-facts th { text-align: left; color: #8a8f98; padding-right: 18px; }
table.listing-facts td { padding: 2px 0; }
.price { color: #e4c35c; font-weight: bold; }
.listing-row { border-bottom: 1px dotted #33363d; padding: 6px 0; }
.pagination a { margin-right: 8px; color: #7faed6; }
footer.market-footer { margin-top: 32px; padding: 12px 16px; color: #6a6e76;
  border-top: 1px solid #3a3d45; font-size: 11px; }
""".strip()


def _slugify(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")


@dataclass
class SimMarket:
    """A generated site plus everything needed to verify a pipeline run."""

    config: SimConfig
    base_url: str
    pages: dict[str, str]
    truth: dict[str, Dndo]
    listing_paths: list[str]
    category_paths: list[str]
    outlinks: dict[str, list[str]]
    listing_url_bounds: tuple[int, int]
    profile: dict

    @property
    def market_id(self) -> str:
        return self.config.market_id

    @property
    def scope_host(self) -> str:
        return urlparse(self.base_url).netloc

    def absolute(self, path: str) -> str:
        return self.base_url + path

    @property
    def sitemap(self) -> list[str]:
        """Every crawlable page URL: index, category pages, listings."""
        return (
            [self.absolute("/")]
            + [self.absolute(p) for p in self.category_paths]
            + [self.absolute(p) for p in self.listing_paths]
        )

    def truth_by_url(self) -> dict[str, Dndo]:
        return {d.url: d for d in self.truth.values()}


class _WeightedPool:
    def __init__(self, pairs):
        self.values = [v for v, _ in pairs]
        self.weights = [w for _, w in pairs]

    def draw(self, rng: random.Random):
        return rng.choices(self.values, weights=self.weights, k=1)[0]


def _gen_title(rng: random.Random, category: str) -> str:
    nouns = _TITLE_NOUNS.get(category, ("Mystery Items",))
    parts = [rng.choice(_TITLE_ADJECTIVES), rng.choice(nouns)]
    suffix = rng.choice(_TITLE_SUFFIXES)
    if suffix:
        parts.append(suffix)
    return " ".join(parts)


def _gen_price_raw(rng: random.Random, product_class: str) -> str:
    roll = rng.random()
    if roll < 0.03:
        return "Contact vendor"
    if product_class == "Digital":
        amount = rng.uniform(0.5, 9.99) if rng.random() < 0.7 else rng.uniform(10, 199)
    else:
        amount = rng.uniform(15, 1800)
    if rng.random() < 0.2:
        return f"{int(round(amount)) or 1} USD"
    return f"{amount:.2f} USD"


def _gen_quantity_raw(rng: random.Random) -> str | None:
    roll = rng.random()
    if roll < 0.55:
        return "Unlimited"
    if roll < 0.77:
        return "999.00"
    if roll < 0.87:
        return "99"
    if roll < 0.95:
        return str(rng.randint(1, 500))
    return None


def _gen_date(rng: random.Random, year: int = 2020) -> str:
    return f"{year}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"


def _noise_sentences(rng: random.Random) -> str:
    sentences = []
    for _ in range(rng.randint(2, 6)):
        words = [rng.choice(_NOISE_WORDS) for _ in range(rng.randint(6, 14))]
        sentences.append(" ".join(words).capitalize() + ".")
    return " ".join(sentences)


def generate_market(config: SimConfig, base_url: str = "http://market.test") -> SimMarket:
    """Build the whole site and its ground truth from the seed.

    Listing URL lengths are absolute-URL lengths, so the eventual serving
    endpoint must be known up front; navigation URLs are checked to fall
    outside the listing length bounds so the length filter stays meaningful.
    """
    rng = random.Random(config.seed)
    base_url = base_url.rstrip("/")
    sellers = _WeightedPool(config.seller_weights)
    origins = _WeightedPool(config.origin_pool)
    categories = list(config.categories)
    market_id = config.market_id

    # Listing paths first: uniqueness and length bounds are URL-set concerns.
    listing_paths: list[str] = []
    used: set[str] = set()
    if config.url_scheme is UrlScheme.RANDOM_HEX:
        lo, hi = config.listing_url_len
        prefix = "/listing/"
        min_hex = lo - len(base_url) - len(prefix)
        if min_hex < 8:
            raise BadConfig(
                f"listing_url_len {config.listing_url_len} leaves no room for an id "
                f"after base {base_url!r}"
            )
        for _ in range(config.listing_count):
            while True:
                target = rng.randint(lo, hi)
                hex_len = target - len(base_url) - len(prefix)
                token = "".join(rng.choices("0123456789abcdef", k=hex_len))
                path = prefix + token
                if path not in used:
                    used.add(path)
                    listing_paths.append(path)
                    break
    else:
        for i in range(config.listing_count):
            listing_paths.append(f"/listing/item-{i:08d}.html")
    bounds = (
        min(len(base_url + p) for p in listing_paths),
        max(len(base_url + p) for p in listing_paths),
    )

    # Draw each listing's content in a fixed order.
    per_category: dict[str, list[int]] = {name: [] for name, _ in categories}
    records: list[Dndo] = []
    for i in range(config.listing_count):
        category, product_class = categories[rng.randrange(len(categories))]
        seller = sellers.draw(rng)
        title = _gen_title(rng, category)
        price_raw = _gen_price_raw(rng, product_class)
        quantity_raw = _gen_quantity_raw(rng)
        origin = origins.draw(rng)
        destination = origins.draw(rng)
        views = rng.randint(10, 60000) if rng.random() < 0.72 else None
        purchases = rng.randint(0, 2000) if rng.random() < 0.6 else None
        creation = _gen_date(rng) if rng.random() < 0.8 else None
        expire = _gen_date(rng) if rng.random() < 0.5 else None
        class_shown = rng.random() < 0.97
        record = Dndo(
            title=title,
            seller=seller,
            category=category,
            creationDate=creation,
            url=base_url + listing_paths[i],
            views=views,
            purchases=purchases,
            expire=expire,
            productClass=ProductClass.classify(product_class) if class_shown
            else ProductClass.UNKNOWN,
            originCountry=origin,
            shippingDestinations=destination,
            quantity=QuantityValue.from_raw(quantity_raw),
            payment="Escrow",
            price=PriceValue.from_raw(price_raw),
            analyst_dateCollected=TRUTH_COLLECTED_AT,
        )
        records.append(record)
        per_category[category].append(i)

    # Static template pieces. Decoys are emitted but never declared as
    # outlinks: a compliant crawler must not return or fetch them.
    category_first_page = {name: f"/c/{_slugify(name)}" for name, _ in categories}

    def nav() -> tuple[str, list[str]]:
        parts = ['<nav><a href="/">Home</a>']
        links = [base_url + "/"]
        for name, _ in categories:
            path = category_first_page[name]
            parts.append(f'<a href="{path}">{html.escape(name)}</a>')
            links.append(base_url + path)
        parts.append('<a href="http://ads.offsite.example/promo">Sponsored</a>')
        parts.append("</nav>")
        return "".join(parts), links

    def decoys() -> str:
        return (
            '<div class="promo">'
            '<img src="/static/banner.png" alt="banner">'
            '<a href="/promo/weekly"><img src="/static/promo.png" alt="deal"></a>'
            '<a href="/static/logo.jpg">logo</a>'
            "</div>"
        )

    def shell(title_text: str, body: str) -> str:
        return (
            "<!DOCTYPE html><html><head>"
            f"<title>{html.escape(title_text)} :: {html.escape(market_id)}</title>"
            f"<style>{_PAGE_STYLE}</style>"
            "</head><body>"
            f"{body}"
            f'<footer class="market-footer">{html.escape(market_id)} &middot; '
            "no js &middot; pgp required for contact</footer>"
            "</body></html>"
        )

    pages: dict[str, str] = {}
    outlinks: dict[str, list[str]] = {}
    category_paths: list[str] = []

    nav_html, nav_links = nav()

    # Index page: nav plus one tile per category.
    tiles = []
    for name, _ in categories:
        tiles.append(
            f'<div class="listing-row"><a href="{category_first_page[name]}">'
            f"{html.escape(name)}</a> ({len(per_category[name])} listings)</div>"
        )
    pages["/"] = shell(
        "Market index", nav_html + decoys() + "<main>" + "".join(tiles) + "</main>"
    )
    outlinks["/"] = sorted(set(nav_links))

    # Category pages with a full pagination bar on every page.
    for name, _ in categories:
        indices = per_category[name]
        page_count = max(1, -(-len(indices) // LISTINGS_PER_PAGE))
        paths = [
            category_first_page[name] if n == 1 else f"{category_first_page[name]}?page={n}"
            for n in range(1, page_count + 1)
        ]
        category_paths.extend(paths)
        for n, path in enumerate(paths, start=1):
            chunk = indices[(n - 1) * LISTINGS_PER_PAGE : n * LISTINGS_PER_PAGE]
            rows = [
                f'<div class="listing-row"><a class="listing-link" '
                f'href="{listing_paths[i]}">{html.escape(records[i].title)}</a>'
                f" &mdash; {html.escape(records[i].seller)}</div>"
                for i in chunk
            ]
            bar = '<div class="pagination">' + "".join(
                f'<a href="{p}">{k}</a>' for k, p in enumerate(paths, start=1)
            ) + "</div>"
            body = (
                nav_html + decoys()
                + f"<main><h1>{html.escape(name)}</h1>" + bar
                + "".join(rows) + bar + "</main>"
            )
            pages[path] = shell(name, body)
            outlinks[path] = sorted(
                set(nav_links)
                | {base_url + p for p in paths}
                | {base_url + listing_paths[i] for i in chunk}
            )

    def fact_row(label: str, value_html: str) -> str:
        return f"<tr><th>{label}</th><td>{value_html}</td></tr>"

    # Listing pages: the extraction target. Absent fields omit their row.
    for i, record in enumerate(records):
        facts = [
            fact_row("Vendor", f'<span class="vendor-name">{html.escape(record.seller)}</span>'),
            fact_row("Category", f'<span class="category">{html.escape(record.category)}</span>'),
        ]
        if record.productClass is not ProductClass.UNKNOWN:
            facts.append(
                fact_row("Class", f'<span class="product-class">{record.productClass.value}</span>')
            )
        facts.append(fact_row("Price", f'<span class="price">{html.escape(record.price.raw)}</span>'))
        if record.quantity.raw is not None:
            facts.append(
                fact_row("Quantity", f'<span class="quantity">{html.escape(record.quantity.raw)}</span>')
            )
        facts.append(fact_row("Payment", '<span class="payment">Escrow</span>'))
        facts.append(
            fact_row("Ships from", f'<span class="ships-from">{html.escape(record.originCountry)}</span>')
        )
        facts.append(
            fact_row("Ships to", f'<span class="ships-to">{html.escape(record.shippingDestinations)}</span>')
        )
        if record.views is not None:
            facts.append(fact_row("Views", f'<span class="views">{record.views:,}</span>'))
        if record.purchases is not None:
            facts.append(fact_row("Purchases", f'<span class="purchases">{record.purchases:,}</span>'))
        if record.creationDate is not None:
            facts.append(fact_row("Listed", f'<span class="listed-on">{html.escape(record.creationDate)}</span>'))
        if record.expire is not None:
            facts.append(fact_row("Expires", f'<span class="expires">until {html.escape(record.expire)}</span>'))

        body = (
            nav_html + decoys()
            + f'<main class="listing-page"><h1 class="product-title">'
            f"{html.escape(record.title)}</h1>"
            + '<table class="listing-facts">' + "".join(facts) + "</table>"
            + f'<div class="description"><p>{_noise_sentences(rng)}</p></div>'
            + "</main>"
        )
        pages[listing_paths[i]] = shell(record.title, body)
        outlinks[listing_paths[i]] = sorted(set(nav_links))

    listing_path_set = set(listing_paths)
    for path in list(pages):
        absolute_len = len(base_url + path)
        if path not in listing_path_set and bounds[0] <= absolute_len <= bounds[1]:
            raise BadConfig(
                f"navigation URL {path!r} falls inside listing length bounds {bounds}"
            )

    truth = {dndo.doc_id_for_url(r.url): r for r in records}
    profile = _build_profile(market_id, bounds)
    return SimMarket(
        config=config,
        base_url=base_url,
        pages=pages,
        truth=truth,
        listing_paths=listing_paths,
        category_paths=category_paths,
        outlinks=outlinks,
        listing_url_bounds=bounds,
        profile=profile,
    )


def _build_profile(market_id: str, bounds: tuple[int, int]) -> dict:
    return {
        "market_id": market_id,
        "listing_marker": LISTING_MARKER,
        "challenge_signature": CHALLENGE_SIGNATURE,
        "min_body_bytes": 512,
        "url_len_bounds": list(bounds),
        "field_rules": [
            {"field": "title", "selector": "h1.product-title"},
            {"field": "seller", "selector": "span.vendor-name"},
            {"field": "category", "selector": "span.category"},
            {"field": "productClass", "selector": "span.product-class",
             "post_normalize": "product_class"},
            {"field": "price", "selector": "span.price", "post_normalize": "price"},
            {"field": "quantity", "selector": "span.quantity", "post_normalize": "quantity"},
            {"field": "payment", "selector": "span.payment"},
            {"field": "originCountry", "selector": "span.ships-from",
             "post_normalize": "country"},
            {"field": "shippingDestinations", "selector": "span.ships-to",
             "post_normalize": "country"},
            {"field": "views", "selector": "span.views", "post_normalize": "count"},
            {"field": "purchases", "selector": "span.purchases", "post_normalize": "count"},
            {"field": "creationDate", "selector": "span.listed-on"},
            {"field": "expire", "selector": "span.expires", "pattern": r"until\s+(\S+)"},
        ],
    }


THROTTLE_PAGE = "<html><head><title>..</title></head><body><p>loading</p></body></html>"

CHALLENGE_PAGE = (
    "<html><head><title>Verify</title></head><body>"
    '<div id="captcha-gate"><p>Complete the challenge to continue.</p>'
    '<form action="/challenge" method="post"><input name="answer"></form></div>'
    "</body></html>"
)

NOT_FOUND_PAGE = "<html><body><h1>404</h1></body></html>"


@dataclass(frozen=True)
class SimRequest:
    ts: float
    client: str
    method: str
    path: str
    status: int
    label: str


class RequestLog:
    """Append-only, thread-safe request telemetry."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: list[SimRequest] = []

    def append(self, entry: SimRequest) -> None:
        with self._lock:
            self._entries.append(entry)

    def snapshot(self) -> list[SimRequest]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self.snapshot():
            counts[entry.label] = counts.get(entry.label, 0) + 1
        return counts

    def image_requests(self) -> list[SimRequest]:
        exts = (".png", ".jpg", ".jpeg", ".gif", ".webp", ".bmp", ".svg")
        return [e for e in self.snapshot() if e.path.lower().endswith(exts)]

    def to_tsv(self) -> str:
        return "".join(
            f"{e.ts:.6f}\t{e.client}\t{e.method}\t{e.path}\t{e.status}\t{e.label}\n"
            for e in self.snapshot()
        )


class _TokenBucket:
    def __init__(self, rps: float, burst: float) -> None:
        self.rps = rps
        self.burst = max(1.0, burst)
        self._state: dict[str, tuple[float, float]] = {}
        self._lock = threading.Lock()

    def take(self, client: str) -> bool:
        now = time.monotonic()
        with self._lock:
            tokens, last = self._state.get(client, (self.burst, now))
            tokens = min(self.burst, tokens + (now - last) * self.rps)
            if tokens >= 1.0:
                self._state[client] = (tokens - 1.0, now)
                return True
            self._state[client] = (tokens, now)
            return False


class SimServer:
    """Serves a generated market with its defenses on a loopback endpoint."""

    def __init__(
        self,
        config: SimConfig | None = None,
        market: SimMarket | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
    ) -> None:
        if market is None and config is None:
            raise BadConfig("need a config or a pre-generated market")
        self._config = market.config if market is not None else config
        self._premade = market
        self._host = host
        self._port = port
        self.request_log = RequestLog()
        self.market: SimMarket | None = None
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

        defense = self._config.defense
        self._bucket = (
            _TokenBucket(defense.limit_rps, defense.burst)
            if defense.rate_limit_mode is not RateLimitMode.NONE
            else None
        )
        self._session_lock = threading.Lock()
        self._token_counter = 0
        self._token_epoch: dict[str, int] = {}
        self._expired_tokens: set[str] = set()
        self._epoch = 0
        self._page_requests = 0
        self._gate_tripped = False

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "SimServer":
        sim = self
        try:
            httpd = ThreadingHTTPServer((self._host, self._port), _make_handler(self))
        except OSError as exc:
            raise BindFailure(f"cannot bind {self._host}:{self._port}: {exc}") from exc
        self._httpd = httpd
        actual = f"http://{httpd.server_address[0]}:{httpd.server_address[1]}"
        if self._premade is not None:
            if self._premade.base_url != actual:
                httpd.server_close()
                raise BadConfig(
                    f"market was generated for {self._premade.base_url}, "
                    f"but the server bound {actual}"
                )
            sim.market = self._premade
        else:
            sim.market = generate_market(self._config, actual)
        self._thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "SimServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def base_url(self) -> str:
        if self.market is None:
            raise RuntimeError("server not started")
        return self.market.base_url

    # -- session administration (test-only surface) -------------------------

    def issue_token(self) -> str:
        with self._session_lock:
            self._token_counter += 1
            token = f"session-{self._token_counter:04d}"
            self._token_epoch[token] = self._epoch
            return token

    def expire_token(self, token: str) -> None:
        with self._session_lock:
            self._expired_tokens.add(token)

    def _token_state(self, token: str | None) -> str:
        with self._session_lock:
            if token is not None and token in self._expired_tokens:
                return "expired"
            if token is not None and self._token_epoch.get(token) == self._epoch:
                return "valid"
            return "invalid"

    def _session_gate_active(self) -> bool:
        return self._config.defense.session_required or self._gate_tripped

    def _count_page_request(self) -> None:
        gate_at = self._config.defense.captcha_after_requests
        with self._session_lock:
            self._page_requests += 1
            if gate_at is not None and not self._gate_tripped and self._page_requests >= gate_at:
                self._gate_tripped = True
                self._epoch += 1

    # -- request handling ----------------------------------------------------

    def handle(
        self, method: str, path: str, headers, client_ip: str
    ) -> tuple[int, dict[str, str], bytes, str]:
        market = self.market
        assert market is not None
        if path.startswith("/admin/"):
            return self._handle_admin(method, path)

        client = headers.get("X-Circuit") or client_ip
        defense = self._config.defense

        if self._bucket is not None and not self._bucket.take(client):
            if defense.rate_limit_mode is RateLimitMode.HTTP_429:
                return 429, {}, b"too many requests", "throttled-429"
            return 200, {}, THROTTLE_PAGE.encode(), "throttled-silent"

        if self._session_gate_active():
            token = _cookie_token(headers.get("Cookie", ""))
            state = self._token_state(token)
            if state == "expired":
                return 302, {"Location": "/login"}, b"", "redirect-login"
            if state != "valid":
                return 200, {}, CHALLENGE_PAGE.encode(), "challenge"

        self._count_page_request()

        body = market.pages.get(path)
        if body is None:
            return 404, {}, NOT_FOUND_PAGE.encode(), "not-found"
        return 200, {}, body.encode(), "ok"

    def _handle_admin(self, method: str, path: str) -> tuple[int, dict, bytes, str]:
        market = self.market
        assert market is not None
        route = path.split("?")[0]
        if route == "/admin/session":
            token = self.issue_token()
            return 200, {"Content-Type": "application/json"}, json.dumps(
                {"token": token}
            ).encode(), "admin"
        if route == "/admin/expire":
            query = path.partition("?")[2]
            token = dict(
                pair.split("=", 1) for pair in query.split("&") if "=" in pair
            ).get("token", "")
            self.expire_token(token)
            return 200, {}, b"ok", "admin"
        if route == "/admin/log":
            return 200, {"Content-Type": "text/tab-separated-values"}, (
                self.request_log.to_tsv().encode()
            ), "admin"
        if route == "/admin/log/clear":
            self.request_log.clear()
            return 200, {}, b"ok", "admin"
        if route == "/admin/sitemap":
            return 200, {"Content-Type": "text/plain"}, (
                "\n".join(market.sitemap) + "\n"
            ).encode(), "admin"
        if route == "/admin/truth":
            payload = {doc_id: dndo.to_wire_dict(d) for doc_id, d in market.truth.items()}
            return 200, {"Content-Type": "application/json"}, json.dumps(
                payload
            ).encode(), "admin"
        return 404, {}, b"unknown admin op", "admin"


def _cookie_token(cookie_header: str) -> str | None:
    for part in cookie_header.split(";"):
        name, _, value = part.strip().partition("=")
        if name == "session" and value:
            return value
    return None


def _make_handler(sim: SimServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _serve(self, include_body: bool) -> None:
            status, extra_headers, body, label = sim.handle(
                self.command, self.path, self.headers, self.client_address[0]
            )
            client = self.headers.get("X-Circuit") or self.client_address[0]
            sim.request_log.append(
                SimRequest(time.time(), client, self.command, self.path, status, label)
            )
            self.send_response(status)
            headers = {"Content-Type": "text/html; charset=utf-8"}
            headers.update(extra_headers)
            headers["Content-Length"] = str(len(body))
            for name, value in headers.items():
                self.send_header(name, value)
            self.end_headers()
            if include_body and body:
                self.wfile.write(body)

        def do_GET(self) -> None:
            self._serve(include_body=True)

        def do_HEAD(self) -> None:
            self._serve(include_body=False)

        def do_POST(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            if length:
                self.rfile.read(length)
            self._serve(include_body=True)

        def log_message(self, *args) -> None:
            pass

    return Handler


def export_market(market: SimMarket, out_dir) -> None:
    """Write ground truth, sitemap, and the extraction profile to disk."""
    out = Path(out_dir)
    truth_dir = out / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)
    for doc_id, record in market.truth.items():
        (truth_dir / f"{doc_id}.dndo.json").write_text(
            dndo.serialize_dndo(record), encoding="utf-8"
        )
    (out / "sitemap.txt").write_text("\n".join(market.sitemap) + "\n", encoding="utf-8")
    (out / "profile.json").write_text(
        json.dumps(market.profile, indent=2) + "\n", encoding="utf-8"
    )
