"""Embedded document store and inverted index with analyst annotations.

One corpus per market. Text fields (title, seller, category, analyst
notes) are tokenized, lowercased and stemmed into an inverted index;
typed fields (product class, payment, origin, price, flags, timestamps)
are kept for exact and range filters. Search is AND-semantics across
query terms with a term-frequency-over-length score.

Analyst mutations go through an append-only annotation log before they
become visible, so replaying the log onto a freshly rebuilt corpus
reproduces the analyst state byte for byte. A corpus persists as a
single checksummed snapshot file; the DNDO files remain the recovery
path of last resort.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from . import dndo as dndo_mod
from .dndo import Dndo, doc_id_for_url, format_timestamp, parse_dndo, serialize_dndo
from .errors import MiningError
from .stemmer import stem

SNAPSHOT_MAGIC = b"DMIX"
SNAPSHOT_VERSION = 1
DEFAULT_COMMENT_CAP = 1024 * 1024  # 1 MiB

TEXT_FIELDS = ("title", "seller", "category", "notes")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmptyQuery(MiningError):
    """The query contains no searchable tokens."""


class UnknownDoc(MiningError):
    """No document with that id in this corpus."""


class CommentTooLarge(MiningError):
    """The comment exceeds the configured cap."""


class CorruptSnapshot(MiningError):
    """Snapshot failed its integrity checks."""


class UnknownIndex(MiningError):
    """No persisted or open corpus with that name."""


def tokenize(text: str) -> list[str]:
    return [stem(token) for token in _TOKEN_RE.findall(text.lower())]


def _field_text(record: Dndo, field: str) -> str | None:
    if field == "notes":
        return record.analyst_notes
    return getattr(record, field)


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    matched_fields: tuple[str, ...]


def _matches_filters(record: Dndo, filters: dict[str, Any] | None) -> bool:
    """Typed predicates: scalar means exact match, (lo, hi) means range."""
    if not filters:
        return True
    for name, wanted in filters.items():
        actual = _typed_value(record, name)
        if isinstance(wanted, tuple):
            lo, hi = wanted
            if actual is None:
                return False
            if lo is not None and actual < lo:
                return False
            if hi is not None and actual > hi:
                return False
        else:
            if name == "flagged" or name == "viewed":
                if bool(actual) != bool(wanted):
                    return False
            elif actual != wanted:
                return False
    return True


def _typed_value(record: Dndo, name: str):
    if name == "productClass":
        return record.productClass.value
    if name == "flagged":
        return record.analyst_flagged
    if name == "viewed":
        return record.analyst_hasViewed
    if name == "price_minor":
        return record.price.amount_minor_units
    if name == "dateCollected":
        return record.analyst_dateCollected
    return getattr(record, name, None)


class CorpusIndex:
    """One market's documents, postings, and annotation history.

    Mutations are serialized through an internal lock (single writer);
    reads take the same lock, which at embedded scale is plenty.
    """

    def __init__(self, name: str, comment_cap: int = DEFAULT_COMMENT_CAP):
        self.name = name
        self.comment_cap = comment_cap
        self._lock = threading.RLock()
        self._docs: dict[str, Dndo] = {}
        self._postings: dict[str, dict[str, dict[str, int]]] = {}
        self._doc_lengths: dict[str, dict[str, int]] = {}
        self._log: list[dict[str, Any]] = []
        self._seq = 0

    # -- document lifecycle --------------------------------------------------

    def index_record(self, record: Dndo, doc_id: str | None = None) -> str:
        """Upsert by doc id; analyst state on an existing doc is preserved.

        Incoming analyst fields only matter on first insert (rebuilding a
        corpus from exported files); after that the annotation log is the
        sole writer of analyst state.
        """
        if doc_id is None:
            if record.url is None:
                raise ValueError("record has no url; pass doc_id explicitly")
            doc_id = doc_id_for_url(record.url)
        with self._lock:
            existing = self._docs.get(doc_id)
            if existing is not None:
                record = record.with_analyst(
                    **{key: getattr(existing, key) for key in dndo_mod.ANALYST_KEYS}
                )
                if record == existing:
                    return doc_id
                self._deindex(doc_id)
            self._docs[doc_id] = record
            self._index_tokens(doc_id, record)
        return doc_id

    def _index_tokens(self, doc_id: str, record: Dndo) -> None:
        lengths: dict[str, int] = {}
        for field in TEXT_FIELDS:
            text = _field_text(record, field)
            if not text:
                continue
            tokens = tokenize(text)
            lengths[field] = len(tokens)
            for token in tokens:
                field_map = self._postings.setdefault(token, {})
                doc_map = field_map.setdefault(field, {})
                doc_map[doc_id] = doc_map.get(doc_id, 0) + 1
        self._doc_lengths[doc_id] = lengths

    def _deindex(self, doc_id: str) -> None:
        for token in list(self._postings):
            field_map = self._postings[token]
            for field in list(field_map):
                field_map[field].pop(doc_id, None)
                if not field_map[field]:
                    del field_map[field]
            if not field_map:
                del self._postings[token]
        self._doc_lengths.pop(doc_id, None)

    def get(self, doc_id: str) -> Dndo:
        with self._lock:
            try:
                return self._docs[doc_id]
            except KeyError:
                raise UnknownDoc(f"{doc_id} not in corpus {self.name}") from None

    def __len__(self) -> int:
        with self._lock:
            return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        with self._lock:
            return doc_id in self._docs

    def documents(self) -> dict[str, Dndo]:
        with self._lock:
            return dict(self._docs)

    def records_page(self, page: int, size: int) -> tuple[list[tuple[str, Dndo]], int]:
        """Stable slice ordered by doc id; returns (rows, total)."""
        with self._lock:
            ordered = sorted(self._docs.items())
            start = (page - 1) * size
            return ordered[start : start + size], len(ordered)

    # -- search ----------------------------------------------------------------

    def search(
        self,
        query: str,
        field: str | None = None,
        filters: dict[str, Any] | None = None,
    ) -> list[SearchHit]:
        """Stem-matched AND search, optionally restricted to one text field."""
        terms = tokenize(query)
        if not terms:
            raise EmptyQuery(f"no searchable terms in {query!r}")
        if field is not None and field not in TEXT_FIELDS:
            raise ValueError(f"unknown search field {field!r}; choose from {TEXT_FIELDS}")
        fields = (field,) if field else TEXT_FIELDS
        with self._lock:
            candidates: set[str] | None = None
            for term in terms:
                field_map = self._postings.get(term, {})
                docs_with_term: set[str] = set()
                for f in fields:
                    docs_with_term.update(field_map.get(f, {}))
                candidates = (
                    docs_with_term if candidates is None else candidates & docs_with_term
                )
                if not candidates:
                    return []
            hits = []
            for doc_id in candidates:
                record = self._docs[doc_id]
                if not _matches_filters(record, filters):
                    continue
                lengths = self._doc_lengths.get(doc_id, {})
                total_len = sum(lengths.get(f, 0) for f in fields)
                tf = 0
                matched: set[str] = set()
                for term in terms:
                    field_map = self._postings.get(term, {})
                    for f in fields:
                        count = field_map.get(f, {}).get(doc_id, 0)
                        if count:
                            tf += count
                            matched.add(f)
                score = tf / total_len if total_len else 0.0
                if score > 0:
                    hits.append(SearchHit(doc_id, score, tuple(sorted(matched))))
            hits.sort(key=lambda h: (-h.score, h.doc_id))
            return hits

    # -- annotations -------------------------------------------------------------

    def annotate(
        self,
        doc_id: str,
        mutation: str,
        value: Any = None,
        at: str | None = None,
        journal=None,
    ) -> Dndo:
        """Apply one analyst mutation; the log entry lands before visibility.

        ``journal`` is an optional callable given the log entry after it is
        appended but before the mutation applies, so persistence can be
        strictly write-ahead.
        """
        at = at or format_timestamp()
        with self._lock:
            if doc_id not in self._docs:
                raise UnknownDoc(f"{doc_id} not in corpus {self.name}")
            if mutation == "comment":
                if not isinstance(value, str):
                    raise ValueError("comment mutation needs text")
                if len(value.encode("utf-8")) > self.comment_cap:
                    raise CommentTooLarge(
                        f"comment of {len(value.encode('utf-8'))} bytes exceeds "
                        f"cap {self.comment_cap}"
                    )
            elif mutation not in ("viewed", "flag", "close"):
                raise ValueError(f"unknown mutation {mutation!r}")
            self._seq += 1
            entry = {
                "seq": self._seq,
                "doc_id": doc_id,
                "op": mutation,
                "value": value,
                "at": at,
            }
            self._log.append(entry)
            if journal is not None:
                journal(entry)
            return self._apply(entry)

    def _apply(self, entry: dict[str, Any]) -> Dndo:
        doc_id = entry["doc_id"]
        record = self._docs[doc_id]
        op, value, at = entry["op"], entry["value"], entry["at"]
        if op == "viewed":
            updated = record.with_analyst(analyst_hasViewed=True, analyst_viewDate=at)
        elif op == "flag":
            new_state = (not record.analyst_flagged) if value is None else bool(value)
            updated = record.with_analyst(analyst_flagged=new_state)
        elif op == "comment":
            prefix = f"[{at}] {value}"
            notes = record.analyst_notes
            updated = record.with_analyst(
                analyst_notes=prefix if notes is None else f"{notes}\n{prefix}"
            )
            self._deindex_reindex_notes(doc_id, record, updated)
        elif op == "close":
            updated = record.with_analyst(analyst_closedDate=at)
        else:
            raise ValueError(f"unknown log op {op!r}")
        self._docs[doc_id] = updated
        return updated

    def _deindex_reindex_notes(self, doc_id: str, old: Dndo, new: Dndo) -> None:
        for text, delta_sign in ((old.analyst_notes, -1), (new.analyst_notes, +1)):
            if not text:
                continue
            tokens = tokenize(text)
            for token in tokens:
                field_map = self._postings.setdefault(token, {})
                doc_map = field_map.setdefault("notes", {})
                doc_map[doc_id] = doc_map.get(doc_id, 0) + delta_sign
                if doc_map[doc_id] <= 0:
                    del doc_map[doc_id]
                if not doc_map:
                    del field_map["notes"]
                if not field_map:
                    self._postings.pop(token, None)
            lengths = self._doc_lengths.setdefault(doc_id, {})
            lengths["notes"] = lengths.get("notes", 0) + delta_sign * len(tokens)
            if lengths.get("notes") == 0:
                lengths.pop("notes", None)

    def apply_log_entry(self, entry: dict[str, Any]) -> Dndo:
        """Replay one persisted mutation without re-journaling it."""
        with self._lock:
            if entry["doc_id"] not in self._docs:
                raise UnknownDoc(f"{entry['doc_id']} not in corpus {self.name}")
            self._seq = max(self._seq, int(entry["seq"]))
            self._log.append(entry)
            return self._apply(entry)

    def annotation_log(self) -> list[dict[str, Any]]:
        with self._lock:
            return [dict(e) for e in self._log]

    # -- persistence ----------------------------------------------------------

    def snapshot_save(self, path) -> None:
        """Single-file, versioned, checksummed point-in-time snapshot."""
        with self._lock:
            payload = json.dumps(
                {
                    "name": self.name,
                    "comment_cap": self.comment_cap,
                    "seq": self._seq,
                    "docs": {
                        doc_id: serialize_dndo(record)
                        for doc_id, record in sorted(self._docs.items())
                    },
                    "postings": self._postings,
                    "doc_lengths": self._doc_lengths,
                    "log": self._log,
                },
                ensure_ascii=False,
            ).encode("utf-8")
        digest = hashlib.sha256(payload).digest()
        header = SNAPSHOT_MAGIC + struct.pack(">H", SNAPSHOT_VERSION) + digest
        target = Path(path)
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_bytes(header + payload)
        tmp.replace(target)

    @classmethod
    def snapshot_load(cls, path) -> "CorpusIndex":
        blob = Path(path).read_bytes()
        header_len = len(SNAPSHOT_MAGIC) + 2 + 32
        if len(blob) < header_len or not blob.startswith(SNAPSHOT_MAGIC):
            raise CorruptSnapshot(f"{path}: bad magic or truncated header")
        (version,) = struct.unpack(">H", blob[4:6])
        if version != SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"{path}: unsupported version {version}")
        digest = blob[6:header_len]
        payload = blob[header_len:]
        if hashlib.sha256(payload).digest() != digest:
            raise CorruptSnapshot(f"{path}: checksum mismatch")
        try:
            data = json.loads(payload.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorruptSnapshot(f"{path}: unreadable payload: {exc}") from exc
        corpus = cls(data["name"], comment_cap=data.get("comment_cap", DEFAULT_COMMENT_CAP))
        corpus._docs = {
            doc_id: parse_dndo(text) for doc_id, text in data["docs"].items()
        }
        corpus._postings = data["postings"]
        corpus._doc_lengths = data["doc_lengths"]
        corpus._log = data["log"]
        corpus._seq = data["seq"]
        return corpus


def search_all(
    corpora: Iterable[CorpusIndex],
    query: str,
    field: str | None = None,
    filters: dict[str, Any] | None = None,
) -> list[tuple[str, SearchHit]]:
    """Cross-corpus convenience: merged hits tagged with their corpus name."""
    merged: list[tuple[str, SearchHit]] = []
    for corpus in corpora:
        merged.extend((corpus.name, hit) for hit in corpus.search(query, field, filters))
    merged.sort(key=lambda pair: (-pair[1].score, pair[0], pair[1].doc_id))
    return merged


class IndexStore:
    """Directory of persisted corpora, with a write-ahead annotation journal.

    Annotations are appended to ``<name>.journal`` before they apply, so a
    process crash between snapshots loses nothing; ``save`` folds the
    journal into a fresh snapshot and truncates it.
    """

    SNAPSHOT_SUFFIX = ".snap"
    JOURNAL_SUFFIX = ".journal"

    def __init__(self, data_dir, comment_cap: int = DEFAULT_COMMENT_CAP):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.comment_cap = comment_cap
        self._open: dict[str, CorpusIndex] = {}
        self._lock = threading.Lock()

    def _snap_path(self, name: str) -> Path:
        return self.data_dir / f"{name}{self.SNAPSHOT_SUFFIX}"

    def _journal_path(self, name: str) -> Path:
        return self.data_dir / f"{name}{self.JOURNAL_SUFFIX}"

    def list_indexes(self) -> list[str]:
        names = {
            p.name[: -len(self.SNAPSHOT_SUFFIX)]
            for p in self.data_dir.glob(f"*{self.SNAPSHOT_SUFFIX}")
        }
        with self._lock:
            names.update(self._open)
        return sorted(names)

    def create(self, name: str) -> CorpusIndex:
        with self._lock:
            if name not in self._open:
                self._open[name] = CorpusIndex(name, comment_cap=self.comment_cap)
            return self._open[name]

    def open(self, name: str) -> CorpusIndex:
        with self._lock:
            if name in self._open:
                return self._open[name]
        snap = self._snap_path(name)
        if snap.exists():
            corpus = CorpusIndex.snapshot_load(snap)
            corpus.comment_cap = self.comment_cap
            journal = self._journal_path(name)
            if journal.exists():
                for line in journal.read_text(encoding="utf-8").splitlines():
                    corpus.apply_log_entry(json.loads(line))
            with self._lock:
                self._open[name] = corpus
            return corpus
        raise UnknownIndex(f"no such index {name!r}")

    def exists(self, name: str) -> bool:
        with self._lock:
            if name in self._open:
                return True
        return self._snap_path(name).exists()

    def annotate(self, name: str, doc_id: str, mutation: str, value=None, at=None) -> Dndo:
        corpus = self.open(name)

        def journal(entry: dict[str, Any]) -> None:
            with self._journal_path(name).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
                fh.flush()

        return corpus.annotate(doc_id, mutation, value=value, at=at, journal=journal)

    def save(self, name: str) -> Path:
        corpus = self.open(name)
        path = self._snap_path(name)
        corpus.snapshot_save(path)
        journal = self._journal_path(name)
        if journal.exists():
            journal.unlink()
        return path

    def delete(self, name: str) -> None:
        with self._lock:
            self._open.pop(name, None)
        for path in (self._snap_path(name), self._journal_path(name)):
            if path.exists():
                path.unlink()
