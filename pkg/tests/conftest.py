from __future__ import annotations

import random

import pytest
from hypothesis import strategies as st

from darkmine.dndo import Dndo, PriceValue, ProductClass, QuantityValue
from darkmine.marketsim import DefenseConfig, RateLimitMode, SimConfig, SimServer, UrlScheme

# The published sample record this pipeline's format mirrors (trailing
# space in the title and the mixed "None"/null conventions are faithful).
SAMPLE_RECORD_JSON = """{
  "title": "How To Find Cardable Shops ",
  "seller": "DrunkDragon",
  "category": "Digital goods Tutorials",
  "creationDate": "None",
  "url": "httpaseanma4v4i1ptqavzdb7endz2bl6es66goytxqow6yk3dmmxyjazfqdononlisting0a3fcf15bfd64623bb71700b4de592b0.html",
  "views": "None",
  "purchases": "None",
  "expire": "None",
  "productClass": "Digital",
  "originCountry": "Worldwide",
  "shippingDestinations": "Worldwide",
  "quantity": "999.00",
  "payment": "Escrow",
  "price": "1 USD",
  "analyst_hasViewed": null,
  "analyst_viewDate": null,
  "analyst_flagged": null,
  "analyst_notes": null,
  "analyst_closedDate": null,
  "analyst_dateCollected": "2020-07-03 16:56:42"
}"""


@pytest.fixture
def sample_record_json() -> str:
    return SAMPLE_RECORD_JSON


COLLECTED = "2020-07-03 16:56:42"


def make_record(**overrides) -> Dndo:
    defaults = dict(
        title="Fresh Hacked Accounts Pack",
        seller="DrunkDragon",
        category="Fraud Accounts",
        url="http://market.test/listing/abc123",
        productClass=ProductClass.DIGITAL,
        originCountry="Worldwide",
        shippingDestinations="Worldwide",
        quantity=QuantityValue.from_raw("Unlimited"),
        payment="Escrow",
        price=PriceValue.from_raw("5.00 USD"),
        analyst_dateCollected=COLLECTED,
    )
    defaults.update(overrides)
    return Dndo(**defaults)


@pytest.fixture
def record_factory():
    return make_record


# -- hypothesis strategies -----------------------------------------------------

_text = st.text(
    alphabet=st.characters(whitelist_categories=("L", "N", "P", "Z"), max_codepoint=0x2FF),
    min_size=1,
    max_size=24,
).filter(lambda s: s != "None" and "\x00" not in s)

_optional_text = st.none() | _text

_price_raw = st.sampled_from(
    ["1 USD", "9.99 USD", "0 USD", "USD 4", "12,000.50 EUR", "Contact vendor", "free", "700.00 CAD"]
)
_quantity_raw = st.sampled_from(["Unlimited", "unlimited", "999.00", "99", "7", "ask vendor", "0"])

_timestamp = st.builds(
    lambda y, mo, d, h, mi, s: f"{y:04d}-{mo:02d}-{d:02d} {h:02d}:{mi:02d}:{s:02d}",
    st.integers(2019, 2021),
    st.integers(1, 12),
    st.integers(1, 28),
    st.integers(0, 23),
    st.integers(0, 59),
    st.integers(0, 59),
)

_extension_value = st.none() | st.booleans() | st.integers(-1000, 1000) | _text

dndo_strategy = st.builds(
    Dndo,
    title=_optional_text,
    seller=_optional_text,
    category=_optional_text,
    creationDate=_optional_text,
    url=_optional_text,
    views=st.none() | st.integers(0, 10**6),
    purchases=st.none() | st.integers(0, 10**6),
    expire=_optional_text,
    productClass=st.sampled_from(list(ProductClass)),
    originCountry=_optional_text,
    shippingDestinations=_optional_text,
    quantity=st.builds(QuantityValue.from_raw, st.none() | _quantity_raw),
    payment=_optional_text,
    price=st.builds(PriceValue.from_raw, st.none() | _price_raw),
    analyst_hasViewed=st.none() | st.booleans(),
    analyst_viewDate=st.none() | _timestamp,
    analyst_flagged=st.none() | st.booleans(),
    analyst_notes=_optional_text,
    analyst_closedDate=st.none() | _timestamp,
    analyst_dateCollected=_timestamp,
    extensions=st.dictionaries(
        st.text(alphabet="abcdefghij_", min_size=1, max_size=10).filter(
            lambda k: not k.startswith("analyst_")
        ),
        _extension_value,
        max_size=3,
    ),
)


# -- simulator fixtures --------------------------------------------------------


def small_sim_config(**overrides) -> SimConfig:
    params = dict(
        seed=11,
        listing_count=30,
        market_id="simmarket",
        url_scheme=UrlScheme.RANDOM_HEX,
        listing_url_len=(110, 116),
        defense=DefenseConfig(rate_limit_mode=RateLimitMode.NONE),
    )
    params.update(overrides)
    return SimConfig(**params)


@pytest.fixture
def sim_factory():
    """Start simulators that are torn down at test end."""
    servers: list[SimServer] = []

    def start(**overrides) -> SimServer:
        server = SimServer(config=small_sim_config(**overrides)).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)
