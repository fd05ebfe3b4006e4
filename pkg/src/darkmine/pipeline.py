"""Stage orchestration: the functions the CLI subcommands call.

A run is driven by one JSON config file shared across stages; each stage
reads what the previous one left on disk (frontier logs, the active-link
list, the inbox, the outbox, index snapshots), so stages can run in
separate processes or be re-run individually.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlparse

from . import analytics, report
from .dndo import load_dndo_dir
from .errors import MiningError
from .extractor import FileOutbox, MarketProfile, process_inbox
from .frontier import Frontier, LinkFilterPolicy, extract_links, filter_listing_urls
from .harvester import (
    HarvestClient,
    HarvestReport,
    RateLimiter,
    RatePolicy,
    Session,
    Transport,
    harvest,
)
from .index import IndexStore
from .marketsim import SimConfig, SimServer, export_market, generate_market

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Everything one market's run needs, with filesystem layout defaults."""

    market_id: str = "simmarket"
    base_url: str = "http://127.0.0.1:8420"
    seed_path: str = "/"
    workdir: Path = Path("run")
    profile_path: Path | None = None
    proxy: str | None = None
    session_token_path: Path | None = None
    crawl_depth: int = 3
    circuits: int = 1
    max_attempts: int = 6
    probe_workers: int = 1
    probe_retry_delay: float = 1.0
    decay_window: int = 25
    rate_policy: RatePolicy = field(default_factory=RatePolicy)
    index_name: str | None = None
    api_endpoint: str = "127.0.0.1:8797"
    sim: dict = field(default_factory=dict)
    inbox_dir: Path | None = None
    outbox_dir: Path | None = None
    data_dir_path: Path | None = None

    @property
    def inbox(self) -> Path:
        return self.inbox_dir or self.workdir / "inbox"

    @property
    def outbox(self) -> Path:
        return self.outbox_dir or self.workdir / "outbox"

    @property
    def quarantine(self) -> Path:
        return self.workdir / "quarantine" / self.market_id

    @property
    def data_dir(self) -> Path:
        return self.data_dir_path or self.workdir / "data"

    @property
    def frontier_log(self) -> Path:
        return self.workdir / "frontier.tsv"

    @property
    def frontier_audit(self) -> Path:
        return self.workdir / "frontier_audit.tsv"

    @property
    def active_links_path(self) -> Path:
        return self.workdir / "active_links.txt"

    @property
    def reports_dir(self) -> Path:
        return self.workdir / "reports"

    def corpus_name(self) -> str:
        return self.index_name or f"market_{self.market_id}"

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if overrides:
            data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls(
            market_id=data.get("market_id", "simmarket"),
            base_url=data.get("base_url", "http://127.0.0.1:8420").rstrip("/"),
            seed_path=data.get("seed_path", "/"),
            workdir=Path(data.get("workdir", "run")),
            profile_path=Path(data["profile"]) if data.get("profile") else None,
            proxy=data.get("proxy"),
            session_token_path=(
                Path(data["session_token_path"]) if data.get("session_token_path") else None
            ),
            crawl_depth=int(data.get("crawl_depth", 3)),
            circuits=int(data.get("circuits", 1)),
            max_attempts=int(data.get("max_attempts", 6)),
            probe_workers=int(data.get("probe_workers", 1)),
            probe_retry_delay=float(data.get("probe_retry_delay", 1.0)),
            decay_window=int(data.get("decay_window", 25)),
            rate_policy=RatePolicy.from_dict(data.get("rate_policy", {})),
            index_name=data.get("index_name"),
            api_endpoint=data.get("api_endpoint", "127.0.0.1:8797"),
            sim=data.get("sim", {}),
            inbox_dir=Path(data["inbox"]) if data.get("inbox") else None,
            outbox_dir=Path(data["outbox"]) if data.get("outbox") else None,
            data_dir_path=Path(data["data_dir"]) if data.get("data_dir") else None,
        )
        return cfg

    def load_profile(self) -> MarketProfile:
        if self.profile_path is None:
            raise MiningError("config has no extraction profile path")
        return MarketProfile.load(self.profile_path)

    def load_session(self) -> Session | None:
        if self.session_token_path is None:
            return None
        return Session.from_token_file(self.market_id, self.session_token_path)

    def scope_host(self) -> str:
        return urlparse(self.base_url).netloc

    def link_policy(self, profile: MarketProfile | None = None) -> LinkFilterPolicy:
        bounds = profile.url_len_bounds if profile else (0, 10_000)
        return LinkFilterPolicy(
            scope_host=self.scope_host(),
            min_url_len=bounds[0],
            max_url_len=bounds[1],
        )

    def build_client(self, profile: MarketProfile) -> HarvestClient:
        transport = Transport(
            scope_host=self.scope_host(),
            proxy=self.proxy,
            circuits=self.circuits,
        )
        limiter = RateLimiter(self.rate_policy, decay_window=self.decay_window)
        return HarvestClient(
            transport,
            limiter,
            profile,
            session=self.load_session(),
            max_attempts=self.max_attempts,
        )


def run_sim(cfg: RunConfig, export_dir=None, block: bool = True) -> SimServer:
    """Generate and serve the synthetic market at the configured endpoint."""
    sim_config = SimConfig.from_dict({**cfg.sim, "market_id": cfg.market_id})
    parsed = urlparse(cfg.base_url)
    market = generate_market(sim_config, cfg.base_url)
    server = SimServer(
        market=market, host=parsed.hostname, port=parsed.port or 80
    ).start()
    if export_dir is not None:
        export_market(market, export_dir)
    logger.info("simulator serving %d listings at %s", len(market.truth), cfg.base_url)
    if block:
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
        finally:
            if export_dir is not None:
                Path(export_dir).joinpath("request_log.tsv").write_text(
                    server.request_log.to_tsv(), encoding="utf-8"
                )
            server.stop()
    return server


def run_crawl(cfg: RunConfig) -> dict[str, int]:
    """Discover in-scope pages to the configured depth, then probe liveness.

    Listing-shaped URLs (length inside the profile bounds) are discovered
    but not expanded; expansion would mean fetching every listing twice.
    """
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    profile = cfg.load_profile()
    policy = cfg.link_policy(profile)
    client = cfg.build_client(profile)
    frontier = Frontier(retry_delay=cfg.probe_retry_delay)

    seed = cfg.base_url + cfg.seed_path
    frontier.enqueue(seed, discovered_from="seed")
    expanded: set[str] = set()
    depth_of = {seed: 0}
    queue = [seed]
    while queue:
        url = queue.pop(0)
        depth = depth_of[url]
        if depth >= cfg.crawl_depth or url in expanded:
            continue
        if policy.min_url_len <= len(url) <= policy.max_url_len:
            continue  # listing-shaped: a leaf, harvested later
        expanded.add(url)
        try:
            html = client.fetch_page(url)
        except MiningError as exc:
            logger.warning("crawl fetch failed for %s: %s", url, exc)
            continue
        for link in extract_links(html, url, policy):
            frontier.enqueue(link, discovered_from=url)
            if link not in depth_of:
                depth_of[link] = depth + 1
                queue.append(link)

    counts = frontier.probe_liveness(client.probe_status, workers=cfg.probe_workers)
    frontier.save_log(cfg.frontier_log, cfg.frontier_audit)
    active = sorted(frontier.active())
    cfg.active_links_path.write_text("\n".join(active) + "\n", encoding="utf-8")
    logger.info(
        "crawl done: %d active, %d dead, %d discovered",
        counts["activated"],
        counts["deleted"],
        len(frontier),
    )
    return {**counts, "discovered": len(frontier)}


def run_harvest(cfg: RunConfig) -> HarvestReport:
    """Fetch listing-shaped active URLs into the inbox."""
    profile = cfg.load_profile()
    policy = cfg.link_policy(profile)
    client = cfg.build_client(profile)
    active = [
        line
        for line in cfg.active_links_path.read_text(encoding="utf-8").splitlines()
        if line
    ]
    listings = filter_listing_urls(active, policy)
    report_counts = harvest(listings, client, cfg.inbox, cfg.market_id)
    logger.info(
        "harvest done: saved=%d skipped=%d failures=%d captcha_stops=%d",
        report_counts.saved,
        report_counts.skipped,
        report_counts.failures,
        report_counts.captcha_stops,
    )
    return report_counts


def run_parse(cfg: RunConfig):
    """Extract every inbox snapshot into the outbox, then report reduction."""
    profile = cfg.load_profile()
    sink = FileOutbox(cfg.outbox)
    stats = process_inbox(cfg.inbox, profile, sink, quarantine_dir=cfg.quarantine)
    if stats.parsed:
        reduction = stats.reduction()
        logger.info(
            "parse done: parsed=%d failed=%d html_avg=%.1fB dndo_avg=%.1fB reduction=%.2f%%",
            stats.parsed,
            stats.failed,
            reduction.html_avg_bytes,
            reduction.dndo_avg_bytes,
            reduction.reduction_percent,
        )
    return stats


def run_index(cfg: RunConfig) -> str:
    """Load outbox records into the market's corpus and snapshot it."""
    store = IndexStore(cfg.data_dir)
    name = cfg.corpus_name()
    corpus = store.create(name) if not store.exists(name) else store.open(name)
    for doc_id, record in load_dndo_dir(cfg.outbox).items():
        corpus.index_record(record, doc_id=doc_id)
    store.save(name)
    logger.info("indexed %d records into %s", len(corpus), name)
    return name


AGGREGATES = (
    "split",
    "top-sellers",
    "seller-share",
    "heatmap",
    "prices",
    "payments",
    "quantities",
    "origin-range",
)


def run_analyze(
    cfg: RunConfig,
    aggregate: str,
    n: int = 5,
    top_k: int = 5,
    product_class: str | None = None,
    country: str | None = None,
    seller: str | None = None,
    out_dir=None,
) -> Path:
    """Compute one aggregate; write its table and figure, return the table path."""
    store = IndexStore(cfg.data_dir)
    corpus = store.open(cfg.corpus_name())
    out = Path(out_dir) if out_dir else cfg.reports_dir
    if aggregate == "split":
        shares = analytics.product_class_split(corpus)
        tsv, _ = report.export_shares(shares, out, "product_class_split", "Product class split")
    elif aggregate == "top-sellers":
        ranking = analytics.top_sellers(corpus, n, product_class)
        tsv, _ = report.export_ranking(ranking, out, "top_sellers", f"Top {n} sellers")
    elif aggregate == "seller-share":
        if not seller:
            raise MiningError("seller-share needs --seller")
        share = analytics.seller_share(corpus, seller, product_class)
        tsv, _ = report.export_shares(
            {seller: share}, out, "seller_share", f"{seller} share"
        )
    elif aggregate == "heatmap":
        matrix = analytics.category_origin_heatmap(corpus, top_k)
        tsv, _ = report.export_heatmap(
            matrix, out, "category_origin_heatmap", "Category x origin"
        )
    elif aggregate == "prices":
        histogram = analytics.price_histogram(corpus, product_class)
        tsv, _ = report.export_price_histogram(
            histogram, out, "price_histogram", "Price distribution (USD)"
        )
    elif aggregate == "payments":
        shares = analytics.payment_share(corpus)
        tsv, _ = report.export_shares(shares, out, "payment_share", "Payment methods")
    elif aggregate == "quantities":
        ranking = analytics.quantity_distribution(corpus, n)
        tsv, _ = report.export_ranking(
            ranking, out, "quantity_distribution", f"Top {n} quantities"
        )
    elif aggregate == "origin-range":
        if not country:
            raise MiningError("origin-range needs --country")
        bounds = analytics.origin_attribution_range(corpus, country)
        tsv, _ = report.export_origin_range(bounds, country, out, "origin_range")
    else:
        raise MiningError(f"unknown aggregate {aggregate!r}; choose from {AGGREGATES}")
    return tsv


def run_serve(cfg: RunConfig, ui_dir=None) -> None:
    from .api import serve_api

    store = IndexStore(cfg.data_dir)
    serve_api(store, cfg.api_endpoint, ui_dir=ui_dir)
