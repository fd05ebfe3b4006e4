from __future__ import annotations

import time

import pytest

from darkmine.harvester import (
    CaptchaRequired,
    ExhaustedRetries,
    FetchFailed,
    FetchProfile,
    HarvestClient,
    InboxManifest,
    RateLimiter,
    RatePolicy,
    ScopeViolation,
    Session,
    SessionExpired,
    Transport,
    detect_silent_block,
    harvest,
    snapshot_filename,
    tune_rate,
)
from darkmine.marketsim import (
    DefenseConfig,
    LISTING_MARKER,
    RateLimitMode,
    THROTTLE_PAGE,
)

FETCH_PROFILE = FetchProfile(
    challenge_signature='id="captcha-gate"',
    listing_marker=LISTING_MARKER,
    min_body_bytes=512,
)

FAST = RatePolicy(base_delay_ms=1, backoff_multiplier=2.0, max_delay_ms=200, jitter_fraction=0.0)
# Starts well under a 20 rps limit but can climb past it within the attempt budget.
SLAM = RatePolicy(base_delay_ms=10, backoff_multiplier=2.0, max_delay_ms=500, jitter_fraction=0.0)


def make_client(server, policy=FAST, token=None, circuits=1, attempts=6, decay_window=25):
    transport = Transport(scope_host=server.market.scope_host, circuits=circuits)
    limiter = RateLimiter(policy, decay_window=decay_window)
    session = Session(server.market.market_id, token) if token else None
    return HarvestClient(transport, limiter, FETCH_PROFILE, session=session, max_attempts=attempts)


class TestRatePolicy:
    def test_current_delay_defaults_to_base(self):
        policy = RatePolicy(base_delay_ms=100, max_delay_ms=1000)
        assert policy.current_delay_ms == 100

    def test_validation(self):
        with pytest.raises(ValueError):
            RatePolicy(base_delay_ms=10, max_delay_ms=5)
        with pytest.raises(ValueError):
            RatePolicy(backoff_multiplier=1.0)
        with pytest.raises(ValueError):
            RatePolicy(jitter_fraction=1.0)
        with pytest.raises(ValueError):
            RatePolicy(base_delay_ms=100, max_delay_ms=1000, current_delay_ms=50)


class TestTuneRate:
    def test_clean_window_decays_one_step_toward_base(self):
        policy = RatePolicy(
            base_delay_ms=100, backoff_multiplier=2.0, max_delay_ms=3200,
            current_delay_ms=800,
        )
        tuned = tune_rate(policy, [(200, 0.05)] * 10)
        assert tuned.current_delay_ms == 400

    def test_decay_floors_at_base(self):
        policy = RatePolicy(base_delay_ms=100, backoff_multiplier=2.0, max_delay_ms=3200)
        tuned = tune_rate(policy, [(200, 0.05)])
        assert tuned.current_delay_ms == 100

    def test_any_429_multiplies(self):
        policy = RatePolicy(base_delay_ms=100, backoff_multiplier=2.0, max_delay_ms=3200)
        tuned = tune_rate(policy, [(200, 0.05), (429, 0.05), (200, 0.05)])
        assert tuned.current_delay_ms == 200

    def test_multiply_caps_at_max(self):
        policy = RatePolicy(
            base_delay_ms=100, backoff_multiplier=2.0, max_delay_ms=500,
            current_delay_ms=400,
        )
        tuned = tune_rate(policy, [(429, 0.05)])
        assert tuned.current_delay_ms == 500


class TestRateLimiter:
    def test_spacing_floor(self):
        policy = RatePolicy(base_delay_ms=30, backoff_multiplier=2.0, max_delay_ms=300, jitter_fraction=0.0)
        limiter = RateLimiter(policy)
        stamps = []
        for _ in range(5):
            limiter.acquire()
            stamps.append(time.monotonic())
        gaps = [b - a for a, b in zip(stamps, stamps[1:])]
        assert min(gaps) >= 0.030 * 0.9  # scheduling tolerance only

    def test_throttle_multiplies_capped(self):
        limiter = RateLimiter(RatePolicy(base_delay_ms=100, backoff_multiplier=3.0, max_delay_ms=450, jitter_fraction=0.0))
        limiter.on_throttle()
        assert limiter.current_delay_ms == 300
        limiter.on_throttle()
        assert limiter.current_delay_ms == 450

    def test_decay_requires_clean_window(self):
        limiter = RateLimiter(
            RatePolicy(base_delay_ms=100, backoff_multiplier=2.0, max_delay_ms=1000, jitter_fraction=0.0),
            decay_window=3,
        )
        limiter.on_throttle()
        assert limiter.current_delay_ms == 200
        limiter.on_success()
        limiter.on_success()
        assert limiter.current_delay_ms == 200  # streak not complete
        limiter.on_success()
        assert limiter.current_delay_ms == 100

    def test_throttle_resets_streak(self):
        limiter = RateLimiter(
            RatePolicy(base_delay_ms=100, backoff_multiplier=2.0, max_delay_ms=1000, jitter_fraction=0.0),
            decay_window=2,
        )
        limiter.on_throttle()
        limiter.on_success()
        limiter.on_throttle()  # streak back to zero, delay 400
        limiter.on_success()
        assert limiter.current_delay_ms == 400
        limiter.on_success()
        assert limiter.current_delay_ms == 200


class TestDetectSilentBlock:
    def test_throttle_page_detected(self):
        assert detect_silent_block(THROTTLE_PAGE, FETCH_PROFILE) is True

    def test_real_page_passes(self, sim_factory):
        server = sim_factory(listing_count=3)
        body = server.market.pages[server.market.listing_paths[0]]
        assert detect_silent_block(body, FETCH_PROFILE) is False

    def test_empty_body_detected(self):
        assert detect_silent_block("", FETCH_PROFILE) is True

    def test_long_markerless_page_detected(self):
        assert detect_silent_block("<html>" + "x" * 2000 + "</html>", FETCH_PROFILE) is True


class TestTransportGuard:
    def test_refuses_image_urls(self):
        transport = Transport(scope_host="market.test")
        with pytest.raises(ScopeViolation):
            transport.request("http://market.test/static/banner.png")
        assert transport.refused_urls == 1

    def test_refuses_offscope(self):
        transport = Transport(scope_host="market.test")
        with pytest.raises(ScopeViolation):
            transport.request("http://ads.offsite.example/promo")


class TestFetchPage:
    def test_passthrough_body(self, sim_factory):
        server = sim_factory(listing_count=3)
        client = make_client(server)
        path = server.market.listing_paths[0]
        assert client.fetch_page(server.base_url + path) == server.market.pages[path]

    def test_challenge_raises_captcha_required(self, sim_factory):
        server = sim_factory(listing_count=3, defense=DefenseConfig(session_required=True))
        client = make_client(server)
        with pytest.raises(CaptchaRequired):
            client.fetch_page(server.base_url + "/")

    def test_expired_token_raises_session_expired(self, sim_factory):
        server = sim_factory(listing_count=3, defense=DefenseConfig(session_required=True))
        token = server.issue_token()
        server.expire_token(token)
        client = make_client(server, token=token)
        with pytest.raises(SessionExpired):
            client.fetch_page(server.base_url + "/")

    def test_missing_page_fails_fast(self, sim_factory):
        server = sim_factory(listing_count=3)
        client = make_client(server)
        with pytest.raises(FetchFailed):
            client.fetch_page(server.base_url + "/does-not-exist")

    def test_rides_out_429(self, sim_factory):
        server = sim_factory(
            listing_count=6,
            defense=DefenseConfig(rate_limit_mode=RateLimitMode.HTTP_429, limit_rps=20.0),
        )
        client = make_client(server, policy=SLAM)
        market = server.market
        for path in market.listing_paths:
            assert client.fetch_page(server.base_url + path) == market.pages[path]
        labels = server.request_log.label_counts()
        assert labels.get("throttled-429", 0) > 0  # it really was throttled
        assert labels["ok"] == len(market.listing_paths)

    def test_silent_blocks_detected_and_refetched(self, sim_factory):
        server = sim_factory(
            listing_count=6,
            defense=DefenseConfig(rate_limit_mode=RateLimitMode.SILENT, limit_rps=20.0),
        )
        client = make_client(server, policy=SLAM)
        market = server.market
        for path in market.listing_paths:
            assert client.fetch_page(server.base_url + path) == market.pages[path]
        labels = server.request_log.label_counts()
        assert labels.get("throttled-silent", 0) > 0
        assert labels["ok"] == len(market.listing_paths)

    def test_exhausted_retries_when_throttle_never_clears(self, sim_factory):
        server = sim_factory(
            listing_count=3,
            defense=DefenseConfig(rate_limit_mode=RateLimitMode.HTTP_429, limit_rps=0.01),
        )
        # One request consumes the only token for the next 100 s.
        client = make_client(server, attempts=2)
        client.fetch_page(server.base_url + "/")
        with pytest.raises(ExhaustedRetries):
            client.fetch_page(server.base_url + "/")


class TestHarvest:
    def test_full_harvest_and_idempotent_rerun(self, sim_factory, tmp_path):
        server = sim_factory(listing_count=12)
        market = server.market
        urls = [market.absolute(p) for p in market.listing_paths]
        client = make_client(server)
        report = harvest(urls, client, tmp_path, market.market_id)
        assert report.saved == 12
        assert report.failures == 0
        market_dir = tmp_path / market.market_id
        files = sorted(market_dir.glob("*.html"))
        assert len(files) == 12
        manifest = InboxManifest(market_dir)
        for file in files:
            url = manifest.url_for_file(file.name)
            assert file.read_text(encoding="utf-8") == market.pages[url[len(market.base_url):]]
        rerun = harvest(urls, client, tmp_path, market.market_id)
        assert rerun.saved == 0
        assert rerun.skipped == 12

    def test_captcha_stop_and_resume(self, sim_factory, tmp_path):
        server = sim_factory(
            listing_count=30, defense=DefenseConfig(captcha_after_requests=10)
        )
        market = server.market
        urls = [market.absolute(p) for p in market.listing_paths]
        client = make_client(server)
        report = harvest(urls, client, tmp_path, market.market_id)
        assert report.captcha_stops == 1
        assert report.saved == 10
        # Human renews the session; the resumed run fetches exactly the rest.
        token = server.issue_token()
        client2 = make_client(server, token=token)
        resume = harvest(urls, client2, tmp_path, market.market_id)
        assert resume.saved == 20
        assert resume.skipped == 10
        assert resume.captcha_stops == 0
        ok_paths = [e.path for e in server.request_log.snapshot() if e.label == "ok"]
        assert sorted(ok_paths) == sorted(market.listing_paths)  # no duplicates, no gaps

    def test_failures_counted_run_continues(self, sim_factory, tmp_path):
        server = sim_factory(listing_count=4)
        market = server.market
        urls = [market.absolute(p) for p in market.listing_paths]
        urls.insert(2, market.base_url + "/missing-page")
        client = make_client(server)
        report = harvest(urls, client, tmp_path, market.market_id)
        assert report.saved == 4
        assert report.failures == 1

    def test_filenames_reversible_via_manifest(self, sim_factory, tmp_path):
        server = sim_factory(listing_count=5)
        market = server.market
        urls = [market.absolute(p) for p in market.listing_paths]
        harvest(urls, make_client(server), tmp_path, market.market_id)
        manifest = InboxManifest(tmp_path / market.market_id)
        snapshots = manifest.snapshots()
        assert len(snapshots) == 5
        assert {s.url for s in snapshots} == set(urls)
        for snapshot in snapshots:
            assert snapshot.body_path.exists()
            assert snapshot.body_path.name.endswith(".html")


def test_snapshot_filename_shape():
    from datetime import datetime, timezone

    name = snapshot_filename(
        "http://market.test:8420/listing/abc",
        datetime(2020, 7, 3, 16, 56, 42, tzinfo=timezone.utc),
    )
    assert name.startswith("market.test-8420_")
    assert name.endswith("_20200703T165642.html")
