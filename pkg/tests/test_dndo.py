from __future__ import annotations

import json
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darkmine import dndo
from darkmine.dndo import (
    BothZero,
    Dndo,
    EmptyList,
    MalformedDocument,
    PriceValue,
    ProductClass,
    QuantityKind,
    QuantityValue,
    ReductionReport,
    SchemaViolation,
    mean_file_size,
    parse_dndo,
    serialize_dndo,
    size_reduction_percent,
)

from .conftest import dndo_strategy
from .oracles import naive_mean


class TestParse:
    def test_sample_record(self, sample_record_json):
        record = parse_dndo(sample_record_json)
        assert record.title == "How To Find Cardable Shops "
        assert record.seller == "DrunkDragon"
        assert record.category == "Digital goods Tutorials"
        assert record.productClass is ProductClass.DIGITAL
        assert record.payment == "Escrow"
        assert record.price == PriceValue(100, "USD", "1 USD")
        assert record.quantity.kind is QuantityKind.LIMITED
        assert record.quantity.raw == "999.00"
        assert record.creationDate is None
        assert record.views is None
        assert record.analyst_hasViewed is None
        assert record.analyst_dateCollected == "2020-07-03 16:56:42"
        assert record.extensions == {}

    def test_all_missing_scraped_fields(self, sample_record_json):
        data = json.loads(sample_record_json)
        for key in dndo.SCRAPED_KEYS:
            data[key] = "None"
        record = parse_dndo(json.dumps(data))
        assert record.productClass is ProductClass.UNKNOWN
        assert record.quantity.kind is QuantityKind.UNKNOWN
        assert record.title is None
        assert record.price.raw is None

    def test_extra_key_lands_in_extensions(self, sample_record_json):
        data = json.loads(sample_record_json)
        data["marketName"] = "asean"
        record = parse_dndo(json.dumps(data))
        assert record.extensions == {"marketName": "asean"}

    def test_missing_key_rejected(self, sample_record_json):
        data = json.loads(sample_record_json)
        del data["seller"]
        with pytest.raises(SchemaViolation, match="seller"):
            parse_dndo(json.dumps(data))

    @pytest.mark.parametrize("payload", ["not json {", "[1,2]", '"text"'])
    def test_malformed_rejected(self, payload):
        with pytest.raises(MalformedDocument):
            parse_dndo(payload)

    def test_bad_timestamp_rejected(self, sample_record_json):
        data = json.loads(sample_record_json)
        data["analyst_dateCollected"] = "July 3rd, 2020"
        with pytest.raises(SchemaViolation):
            parse_dndo(json.dumps(data))

    def test_bad_analyst_bool_rejected(self, sample_record_json):
        data = json.loads(sample_record_json)
        data["analyst_flagged"] = "yes"
        with pytest.raises(SchemaViolation):
            parse_dndo(json.dumps(data))

    def test_missing_analyst_date_at_construction(self):
        with pytest.raises(SchemaViolation):
            Dndo(title="x")


class TestSerialize:
    def test_key_order_matches_canonical_listing(self, sample_record_json):
        record = parse_dndo(sample_record_json)
        emitted = json.loads(serialize_dndo(record))
        assert list(emitted) == list(dndo.KEY_ORDER)
        assert list(dndo.KEY_ORDER) == list(json.loads(sample_record_json))

    def test_round_trip_sample(self, sample_record_json):
        record = parse_dndo(sample_record_json)
        assert parse_dndo(serialize_dndo(record)) == record

    def test_determinism(self, record_factory):
        a = record_factory()
        b = record_factory()
        assert a == b
        assert serialize_dndo(a) == serialize_dndo(b)

    @given(record=dndo_strategy)
    @settings(max_examples=150)
    def test_round_trip_property(self, record):
        assert parse_dndo(serialize_dndo(record)) == record

    @given(a=dndo_strategy, b=dndo_strategy)
    @settings(max_examples=80)
    def test_injective_on_distinct_records(self, a, b):
        if a != b:
            assert serialize_dndo(a) != serialize_dndo(b)

    def test_extensions_serialized_after_canonical_keys(self, sample_record_json):
        data = json.loads(sample_record_json)
        data["zeta"] = 1
        data["alpha"] = 2
        record = parse_dndo(json.dumps(data))
        keys = list(json.loads(serialize_dndo(record)))
        assert keys[: len(dndo.KEY_ORDER)] == list(dndo.KEY_ORDER)
        assert keys[len(dndo.KEY_ORDER) :] == ["alpha", "zeta"]


class TestPriceValue:
    @pytest.mark.parametrize(
        "raw,minor,code",
        [
            ("1 USD", 100, "USD"),
            ("0 USD", 0, "USD"),
            ("9.99 USD", 999, "USD"),
            ("USD 4", 400, "USD"),
            ("12,000.50 EUR", 1200050, "EUR"),
            ("700.00 cad", 70000, "CAD"),
        ],
    )
    def test_parses(self, raw, minor, code):
        value = PriceValue.from_raw(raw)
        assert value.amount_minor_units == minor
        assert value.currency == code
        assert value.raw == raw

    @pytest.mark.parametrize("raw", ["Contact vendor", "free", "-5 USD", "5 DOLLARS"])
    def test_unrecognized_keeps_raw(self, raw):
        value = PriceValue.from_raw(raw)
        assert value.amount_minor_units is None
        assert value.currency is None
        assert value.raw == raw


class TestQuantityValue:
    def test_limited_decimal(self):
        value = QuantityValue.from_raw("999.00")
        assert value.kind is QuantityKind.LIMITED
        assert value.amount == 999

    @pytest.mark.parametrize("raw", ["Unlimited", "unlimited", "UNLIMITED"])
    def test_unlimited(self, raw):
        value = QuantityValue.from_raw(raw)
        assert value.kind is QuantityKind.UNLIMITED
        assert value.amount is None

    @pytest.mark.parametrize("raw", ["", "ask vendor", "-3"])
    def test_unknown(self, raw):
        assert QuantityValue.from_raw(raw).kind is QuantityKind.UNKNOWN


class TestSizeReduction:
    # Published reduction rows: (html_avg_kb, dndo_avg_kb, percent)
    PUBLISHED_ROWS = [
        (5.06, 1.23, 121.79),
        (14.37, 0.61, 183.52),
        (76.05, 0.68, 196.42),
    ]

    @pytest.mark.parametrize("v1,v2,expected", PUBLISHED_ROWS)
    def test_published_rows(self, v1, v2, expected):
        assert size_reduction_percent(v1, v2) == pytest.approx(expected, abs=0.3)

    def test_first_row_tight_tolerance(self):
        assert size_reduction_percent(5.06, 1.23) == pytest.approx(121.79, abs=0.05)

    def test_runtime_under_a_millisecond(self):
        start = time.perf_counter()
        size_reduction_percent(5.06, 1.23)
        assert time.perf_counter() - start < 0.001

    @given(x=st.floats(0.001, 1e9))
    def test_equal_sizes_are_zero(self, x):
        assert size_reduction_percent(x, x) == 0.0

    def test_forced_hundred(self):
        assert size_reduction_percent(3, 1) == pytest.approx(100.0)

    @given(a=st.floats(0.001, 1e9), b=st.floats(0.001, 1e9))
    @settings(max_examples=100)
    def test_symmetry(self, a, b):
        assert size_reduction_percent(a, b) == size_reduction_percent(b, a)

    def test_both_zero(self):
        with pytest.raises(BothZero):
            size_reduction_percent(0, 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            size_reduction_percent(-1, 5)


class TestMean:
    def test_simple(self):
        assert mean_file_size([10, 20, 30]) == 20

    def test_single_published_sample(self):
        assert mean_file_size([76058.9]) == pytest.approx(76058.9)

    def test_empty(self):
        with pytest.raises(EmptyList):
            mean_file_size([])

    @given(st.lists(st.floats(0, 1e7), min_size=1, max_size=500))
    @settings(max_examples=100)
    def test_matches_one_pass_oracle(self, sizes):
        assert mean_file_size(sizes) == pytest.approx(naive_mean(sizes), rel=1e-12, abs=1e-9)


class TestReductionReport:
    def test_from_sizes(self):
        report = ReductionReport.from_sizes([4000, 6000], [900, 1100])
        assert report.html_avg_bytes == 5000
        assert report.dndo_avg_bytes == 1000
        assert report.reduction_percent == pytest.approx(
            size_reduction_percent(5000, 1000)
        )


def test_doc_id_is_stable():
    url = "http://market.test/listing/abc"
    assert dndo.doc_id_for_url(url) == dndo.doc_id_for_url(url)
    assert dndo.doc_id_for_url(url) != dndo.doc_id_for_url(url + "x")
    assert len(dndo.doc_id_for_url(url)) == 16
