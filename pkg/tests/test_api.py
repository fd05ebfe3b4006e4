from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from darkmine.api import create_app
from darkmine.dndo import ProductClass
from darkmine.index import IndexStore

from .conftest import make_record


@pytest.fixture
def store(tmp_path) -> IndexStore:
    store = IndexStore(tmp_path / "data")
    asean = store.create("market_asean")
    for i in range(30):
        asean.index_record(
            make_record(
                title=f"Hacked Accounts Pack {i}",
                seller="DrunkDragon" if i % 3 else "GoldApple",
                url=f"http://m/l/{i:02d}",
                productClass=ProductClass.DIGITAL if i % 2 else ProductClass.PHYSICAL,
            )
        )
    store.save("market_asean")
    elite = store.create("market_elite")
    elite.index_record(make_record(title="Replica Watches", url="http://m/e/0"))
    store.save("market_elite")
    return store


@pytest.fixture
def client(store) -> TestClient:
    return TestClient(create_app(store, analytics_ttl=0.0))


def first_doc_id(client, index="market_asean"):
    return client.get(f"/records?index={index}&page=1&size=1").json()["records"][0]["doc_id"]


class TestIndexes:
    def test_lists_both(self, client):
        assert client.get("/indexes").json() == {
            "indexes": ["market_asean", "market_elite"]
        }


class TestRecords:
    def test_pagination_arithmetic(self, client):
        resp = client.get("/records?index=market_asean&page=2&size=25")
        body = resp.json()
        assert body["total"] == 30
        assert resp.headers["X-Total-Count"] == "30"
        assert len(body["records"]) == 5  # records 26..30
        page1 = client.get("/records?index=market_asean&page=1&size=25").json()
        assert len(page1["records"]) == 25
        ids = [r["doc_id"] for r in page1["records"] + body["records"]]
        assert ids == sorted(ids)
        assert len(set(ids)) == 30

    def test_pagination_stable_without_mutation(self, client):
        twice = [
            client.get("/records?index=market_asean&page=1&size=10").json()["records"]
            for _ in range(2)
        ]
        assert twice[0] == twice[1]

    def test_single_record(self, client):
        doc_id = first_doc_id(client)
        body = client.get(f"/records/{doc_id}?index=market_asean").json()
        assert body["doc_id"] == doc_id
        assert body["payment"] == "Escrow"
        assert body["analyst_hasViewed"] is None

    def test_unknown_doc_is_404(self, client):
        resp = client.get("/records/feedfeedfeedfeed?index=market_asean")
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "NotFound"

    def test_unknown_index_is_404(self, client):
        resp = client.get("/records?index=ghost")
        assert resp.status_code == 404

    def test_missing_index_param_is_400(self, client):
        resp = client.get("/records")
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "BadRequest"

    def test_bad_page_is_400(self, client):
        assert client.get("/records?index=market_asean&page=0").status_code == 400


class TestSearchEndpoint:
    def test_stemmed_search(self, client):
        body = client.get("/search?index=market_asean&q=account").json()
        assert len(body["hits"]) == 30
        assert body["hits"][0]["record"]["title"].startswith("Hacked Accounts")

    def test_class_filter(self, client):
        body = client.get("/search?index=market_asean&q=account&class=Digital").json()
        assert 0 < len(body["hits"]) < 30
        for hit in body["hits"]:
            assert hit["record"]["productClass"] == "Digital"

    def test_flagged_filter(self, client):
        doc_id = first_doc_id(client)
        client.post(f"/records/{doc_id}/flag", json={"index": "market_asean", "value": True})
        body = client.get("/search?index=market_asean&q=account&flagged=true").json()
        assert [h["doc_id"] for h in body["hits"]] == [doc_id]

    def test_empty_query_is_400(self, client):
        assert client.get("/search?index=market_asean&q=%20").status_code == 400


class TestMutations:
    def test_viewed_read_your_write(self, client):
        doc_id = first_doc_id(client)
        posted = client.post(f"/records/{doc_id}/viewed", json={"index": "market_asean"})
        assert posted.json()["analyst_hasViewed"] is True
        fetched = client.get(f"/records/{doc_id}?index=market_asean").json()
        assert fetched["analyst_hasViewed"] is True
        assert fetched["analyst_viewDate"] is not None

    def test_flag_round_trip(self, client):
        doc_id = first_doc_id(client)
        on = client.post(f"/records/{doc_id}/flag", json={"index": "market_asean", "value": True})
        assert on.json()["analyst_flagged"] is True
        off = client.post(f"/records/{doc_id}/flag", json={"index": "market_asean"})
        assert off.json()["analyst_flagged"] is False

    def test_comment_appends(self, client):
        doc_id = first_doc_id(client)
        client.post(f"/records/{doc_id}/comments", json={"index": "market_asean", "text": "one"})
        body = client.post(
            f"/records/{doc_id}/comments", json={"index": "market_asean", "text": "case-42"}
        ).json()
        assert "one" in body["analyst_notes"]
        assert body["analyst_notes"].index("one") < body["analyst_notes"].index("case-42")

    def test_comment_searchable_in_notes(self, client):
        doc_id = first_doc_id(client)
        client.post(
            f"/records/{doc_id}/comments", json={"index": "market_asean", "text": "case-42"}
        )
        body = client.get("/search?index=market_asean&q=case&field=notes").json()
        assert [h["doc_id"] for h in body["hits"]] == [doc_id]

    def test_oversized_comment_is_413(self, client):
        doc_id = first_doc_id(client)
        resp = client.post(
            f"/records/{doc_id}/comments",
            json={"index": "market_asean", "text": "x" * (1024 * 1024 + 1)},
        )
        assert resp.status_code == 413
        assert resp.json()["error"]["code"] == "TooLarge"

    def test_mutations_persist_across_store_reload(self, client, store, tmp_path):
        doc_id = first_doc_id(client)
        client.post(f"/records/{doc_id}/viewed", json={"index": "market_asean"})
        client.post(
            f"/records/{doc_id}/comments", json={"index": "market_asean", "text": "case-42"}
        )
        fresh = IndexStore(tmp_path / "data")
        record = fresh.open("market_asean").get(doc_id)
        assert record.analyst_hasViewed is True
        assert "case-42" in record.analyst_notes


class TestAnalyticsEndpoints:
    @pytest.mark.parametrize(
        "path",
        [
            "/analytics/split?index=market_asean",
            "/analytics/top-sellers?index=market_asean&n=2",
            "/analytics/heatmap?index=market_asean&top_k=3",
            "/analytics/prices?index=market_asean&class=Digital",
            "/analytics/payments?index=market_asean",
            "/analytics/quantities?index=market_asean&n=3",
            "/analytics/origin-range?index=market_asean&country=Canada",
        ],
    )
    def test_aggregate_endpoints_succeed(self, client, path):
        resp = client.get(path)
        assert resp.status_code == 200, resp.text

    def test_top_sellers_content(self, client):
        body = client.get("/analytics/top-sellers?index=market_asean&n=2").json()
        assert body["sellers"][0]["seller"] == "DrunkDragon"
        assert body["sellers"][0]["count"] == 20

    def test_origin_range_needs_country(self, client):
        assert client.get("/analytics/origin-range?index=market_asean").status_code == 400

    def test_unknown_aggregate_is_404(self, client):
        assert client.get("/analytics/sorcery?index=market_asean").status_code == 404
