"""REST service over the index store: the boundary the analyst UI consumes.

Every mutation the UI can reach maps to exactly one annotation call on
the store; the service holds no record state of its own. Analytics
endpoints compute on demand behind a short-lived cache. Binds loopback
by default; there is deliberately no authentication here.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Any

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import analytics
from .dndo import Dndo, to_wire_dict
from .errors import MiningError
from .index import (
    CommentTooLarge,
    EmptyQuery,
    IndexStore,
    UnknownDoc,
    UnknownIndex,
)


class ErrorCode(str, Enum):
    NOT_FOUND = "NotFound"
    BAD_REQUEST = "BadRequest"
    CONFLICT = "Conflict"
    TOO_LARGE = "TooLarge"
    INTERNAL = "Internal"


_STATUS = {
    ErrorCode.NOT_FOUND: 404,
    ErrorCode.BAD_REQUEST: 400,
    ErrorCode.CONFLICT: 409,
    ErrorCode.TOO_LARGE: 413,
    ErrorCode.INTERNAL: 500,
}


@dataclass(frozen=True)
class ApiError(Exception):
    code: ErrorCode
    message: str

    def response(self) -> JSONResponse:
        return JSONResponse(
            status_code=_STATUS[self.code],
            content={"error": {"code": self.code.value, "message": self.message}},
        )


def _map_error(exc: MiningError) -> ApiError:
    if isinstance(exc, (UnknownDoc, UnknownIndex)):
        return ApiError(ErrorCode.NOT_FOUND, str(exc))
    if isinstance(exc, CommentTooLarge):
        return ApiError(ErrorCode.TOO_LARGE, str(exc))
    if isinstance(exc, (EmptyQuery, analytics.EmptyCorpus, analytics.BadEdges)):
        return ApiError(ErrorCode.BAD_REQUEST, str(exc))
    return ApiError(ErrorCode.INTERNAL, str(exc))


class ViewedBody(BaseModel):
    index: str


class FlagBody(BaseModel):
    index: str
    value: bool | None = None


class CommentBody(BaseModel):
    index: str
    text: str


def _record_payload(doc_id: str, record: Dndo) -> dict[str, Any]:
    payload = to_wire_dict(record)
    payload["doc_id"] = doc_id
    return payload


class _AnalyticsCache:
    def __init__(self, ttl: float):
        self.ttl = ttl
        self._entries: dict[tuple, tuple[float, Any]] = {}

    def get(self, key: tuple, compute):
        now = time.monotonic()
        hit = self._entries.get(key)
        if hit is not None and now - hit[0] < self.ttl:
            return hit[1]
        value = compute()
        self._entries[key] = (now, value)
        return value


def create_app(store: IndexStore, analytics_ttl: float = 5.0) -> FastAPI:
    app = FastAPI(title="darkmine", version="0.1.0")
    cache = _AnalyticsCache(analytics_ttl)

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(MiningError)
    async def handle_mining_error(request: Request, exc: MiningError):
        return _map_error(exc).response()

    @app.exception_handler(ValueError)
    async def handle_value_error(request: Request, exc: ValueError):
        return ApiError(ErrorCode.BAD_REQUEST, str(exc)).response()

    def open_index(name: str | None):
        if not name:
            raise ApiError(ErrorCode.BAD_REQUEST, "missing required 'index' parameter")
        return store.open(name)

    @app.get("/indexes")
    def list_indexes():
        return {"indexes": store.list_indexes()}

    @app.get("/records")
    def list_records(index: str | None = None, page: int = 1, size: int = 25):
        if page < 1 or size < 1 or size > 500:
            raise ApiError(ErrorCode.BAD_REQUEST, "page must be >= 1 and 1 <= size <= 500")
        corpus = open_index(index)
        rows, total = corpus.records_page(page, size)
        body = {
            "index": index,
            "page": page,
            "size": size,
            "total": total,
            "records": [_record_payload(doc_id, record) for doc_id, record in rows],
        }
        return JSONResponse(content=body, headers={"X-Total-Count": str(total)})

    @app.get("/records/{doc_id}")
    def get_record(doc_id: str, index: str | None = None):
        corpus = open_index(index)
        return _record_payload(doc_id, corpus.get(doc_id))

    @app.get("/search")
    def search_records(
        index: str | None = None,
        q: str = "",
        field: str | None = None,
        product_class: str | None = Query(None, alias="class"),
        flagged: bool | None = None,
    ):
        corpus = open_index(index)
        filters: dict[str, Any] = {}
        if product_class is not None:
            filters["productClass"] = product_class
        if flagged is not None:
            filters["flagged"] = flagged
        hits = corpus.search(q, field=field, filters=filters or None)
        return {
            "index": index,
            "query": q,
            "hits": [
                {
                    "doc_id": hit.doc_id,
                    "score": hit.score,
                    "matched_fields": list(hit.matched_fields),
                    "record": _record_payload(hit.doc_id, corpus.get(hit.doc_id)),
                }
                for hit in hits
            ],
        }

    @app.post("/records/{doc_id}/viewed")
    def mark_viewed(doc_id: str, body: ViewedBody):
        open_index(body.index)
        record = store.annotate(body.index, doc_id, "viewed")
        return _record_payload(doc_id, record)

    @app.post("/records/{doc_id}/flag")
    def flag_record(doc_id: str, body: FlagBody):
        open_index(body.index)
        record = store.annotate(body.index, doc_id, "flag", value=body.value)
        return _record_payload(doc_id, record)

    @app.post("/records/{doc_id}/comments")
    def comment_record(doc_id: str, body: CommentBody):
        open_index(body.index)
        record = store.annotate(body.index, doc_id, "comment", value=body.text)
        return _record_payload(doc_id, record)

    @app.get("/analytics/{aggregate}")
    def run_aggregate(
        aggregate: str,
        index: str | None = None,
        n: int = 5,
        top_k: int = 5,
        product_class: str | None = Query(None, alias="class"),
        country: str | None = None,
    ):
        corpus = open_index(index)
        key = (index, aggregate, n, top_k, product_class, country, len(corpus))

        def compute():
            if aggregate == "split":
                shares = analytics.product_class_split(corpus)
                return {
                    label: {
                        "count": s.numerator,
                        "denominator": s.denominator,
                        "percent": s.percent,
                    }
                    for label, s in shares.items()
                }
            if aggregate == "top-sellers":
                return {
                    "sellers": [
                        {"seller": name, "count": count}
                        for name, count in analytics.top_sellers(corpus, n, product_class)
                    ]
                }
            if aggregate == "heatmap":
                matrix = analytics.category_origin_heatmap(corpus, top_k)
                return {
                    "rows": list(matrix.row_labels),
                    "cols": list(matrix.col_labels),
                    "cells": [list(row) for row in matrix.cells],
                }
            if aggregate == "prices":
                histogram = analytics.price_histogram(corpus, product_class)
                return {
                    "edges": list(histogram.edges),
                    "counts": list(histogram.counts),
                    "unparsed": histogram.unparsed,
                    "out_of_range": histogram.out_of_range,
                }
            if aggregate == "payments":
                shares = analytics.payment_share(corpus)
                return {
                    label: {
                        "count": s.numerator,
                        "denominator": s.denominator,
                        "percent": s.percent,
                    }
                    for label, s in shares.items()
                }
            if aggregate == "quantities":
                return {
                    "quantities": [
                        {"value": value, "count": count}
                        for value, count in analytics.quantity_distribution(corpus, n)
                    ]
                }
            if aggregate == "origin-range":
                if not country:
                    raise ApiError(
                        ErrorCode.BAD_REQUEST, "origin-range needs a 'country' parameter"
                    )
                low, high = analytics.origin_attribution_range(corpus, country)
                return {"country": country, "min_percent": low, "max_percent": high}
            raise ApiError(ErrorCode.NOT_FOUND, f"unknown aggregate {aggregate!r}")

        return cache.get(key, compute)

    return app


def serve_api(store: IndexStore, endpoint: str = "127.0.0.1:8797", ui_dir=None) -> None:
    """Run the service until interrupted. Loopback by default."""
    import uvicorn

    app = create_app(store)
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    host, _, port = endpoint.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8797), log_level="warning")
