"""darkmine: an offline-verifiable marketplace mining pipeline.

Focused crawling, polite harvesting, profile-driven extraction to a
canonical record format, embedded full-text search with analyst
annotations, aggregate analytics, and a deterministic synthetic
marketplace that makes the whole pipeline testable end to end without
touching a real network.
"""

from .dndo import Dndo, parse_dndo, serialize_dndo
from .errors import MiningError

__all__ = ["Dndo", "MiningError", "parse_dndo", "serialize_dndo"]
__version__ = "0.1.0"
