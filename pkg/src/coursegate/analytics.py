"""Session, turn, and rating persistence plus the satisfaction math.

Every chat turn is stored with the knowledge base used, the exact
query, the response, the session it belongs to, and its timestamp; a
1-5 rating can be attached later. Aggregation produces the per-KB star
distribution table and usage counters.

Storage goes through a small document-store contract with two bundled
implementations: in-memory for tests, and an append-only JSON-lines log
with compaction for deployments that need to survive restarts.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Iterable, Protocol

from .clock import Clock, SystemClock

log = logging.getLogger(__name__)

RATING_VALUES = (1, 2, 3, 4, 5)
DEFAULT_SESSION_TIMEOUT_MINUTES = 30.0
EXPORT_COLLECTIONS = ("sessions", "turns", "ratings", "users")


class StoreError(Exception):
    pass


class UnknownSession(Exception):
    pass


class AlreadyClosed(Exception):
    pass


class UnknownTurn(Exception):
    pass


class UnknownKb(Exception):
    pass


class OutOfRange(Exception):
    pass


class MissingSalt(Exception):
    pass


class DocumentStore(Protocol):
    def insert(self, collection: str, doc_id: str, doc: dict) -> None: ...

    def update(self, collection: str, doc_id: str, fields: dict) -> None: ...

    def get(self, collection: str, doc_id: str) -> dict | None: ...

    def scan(self, collection: str) -> list[dict]: ...

    def ping(self) -> bool: ...


class InMemoryStore:
    """Dict-backed store; snapshot reads, atomic per-document writes."""

    def __init__(self) -> None:
        self._collections: dict[str, dict[str, dict]] = {}
        self._lock = threading.RLock()

    def insert(self, collection: str, doc_id: str, doc: dict) -> None:
        with self._lock:
            docs = self._collections.setdefault(collection, {})
            if doc_id in docs:
                raise StoreError(f"duplicate id {doc_id!r} in {collection}")
            docs[doc_id] = dict(doc)

    def update(self, collection: str, doc_id: str, fields: dict) -> None:
        with self._lock:
            docs = self._collections.get(collection, {})
            if doc_id not in docs:
                raise StoreError(f"no document {doc_id!r} in {collection}")
            docs[doc_id].update(fields)

    def get(self, collection: str, doc_id: str) -> dict | None:
        with self._lock:
            doc = self._collections.get(collection, {}).get(doc_id)
            return dict(doc) if doc is not None else None

    def scan(self, collection: str) -> list[dict]:
        with self._lock:
            return [dict(doc) for doc in self._collections.get(collection, {}).values()]

    def ping(self) -> bool:
        return True


class AppendLogStore:
    """JSON-lines append log with an in-memory materialized view.

    Every insert or update appends one line and flushes, so a crash
    loses at most the in-flight write. compact() rewrites the log as
    plain inserts of current state and atomically swaps it in.
    """

    def __init__(self, path: str | Path, read_only: bool = False) -> None:
        self.path = Path(path)
        self._read_only = read_only
        self._collections: dict[str, dict[str, dict]] = {}
        self._lock = threading.RLock()
        self._file = None
        if self.path.exists():
            self._load()
        elif read_only:
            raise StoreError(f"store file {self.path} does not exist")
        if not read_only:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, "a", encoding="utf-8")

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    op = record["op"]
                    collection = record["collection"]
                    doc_id = record["id"]
                except (ValueError, KeyError) as exc:
                    raise StoreError(f"{self.path}:{line_no}: bad log line: {exc}") from exc
                docs = self._collections.setdefault(collection, {})
                if op == "insert":
                    docs[doc_id] = record["doc"]
                elif op == "update":
                    docs.setdefault(doc_id, {}).update(record["fields"])
                else:
                    raise StoreError(f"{self.path}:{line_no}: unknown op {op!r}")

    def _append(self, record: dict) -> None:
        if self._file is None:
            raise StoreError("store is read-only")
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()

    def insert(self, collection: str, doc_id: str, doc: dict) -> None:
        with self._lock:
            docs = self._collections.setdefault(collection, {})
            if doc_id in docs:
                raise StoreError(f"duplicate id {doc_id!r} in {collection}")
            docs[doc_id] = dict(doc)
            self._append({"op": "insert", "collection": collection, "id": doc_id, "doc": doc})

    def update(self, collection: str, doc_id: str, fields: dict) -> None:
        with self._lock:
            docs = self._collections.get(collection, {})
            if doc_id not in docs:
                raise StoreError(f"no document {doc_id!r} in {collection}")
            docs[doc_id].update(fields)
            self._append({"op": "update", "collection": collection, "id": doc_id, "fields": fields})

    def get(self, collection: str, doc_id: str) -> dict | None:
        with self._lock:
            doc = self._collections.get(collection, {}).get(doc_id)
            return dict(doc) if doc is not None else None

    def scan(self, collection: str) -> list[dict]:
        with self._lock:
            return [dict(doc) for doc in self._collections.get(collection, {}).values()]

    def ping(self) -> bool:
        return self._read_only or (self._file is not None and not self._file.closed)

    def compact(self) -> None:
        """Rewrite the log as one insert per live document."""
        with self._lock:
            if self._file is None:
                raise StoreError("store is read-only")
            tmp_path = self.path.with_suffix(self.path.suffix + ".compacting")
            with open(tmp_path, "w", encoding="utf-8") as tmp:
                for collection, docs in self._collections.items():
                    for doc_id, doc in docs.items():
                        tmp.write(
                            json.dumps(
                                {"op": "insert", "collection": collection, "id": doc_id, "doc": doc},
                                sort_keys=True,
                            )
                            + "\n"
                        )
                tmp.flush()
                os.fsync(tmp.fileno())
            self._file.close()
            os.replace(tmp_path, self.path)
            self._file = open(self.path, "a", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None


@dataclass(frozen=True)
class RatingAggregate:
    """One row of the satisfaction table.

    average is the exact mean of the stored ratings, None when nothing
    is rated. total_average is set only on the "ALL" row: the
    unweighted mean of the per-KB averages.
    """

    kb_id: str
    counts: dict[int, int]
    percentages: dict[int, float]
    average: float | None
    n: int
    total_average: float | None = None


@dataclass(frozen=True)
class UsageReport:
    total_queries: int
    per_kb_counts: dict[str, int]
    session_count: int
    unique_users: int
    mean_session_minutes: float | None


def pseudonymize(user_id: str, salt: str) -> str:
    """Deterministic one-way pseudonym; reveals nothing without the salt."""
    if not salt:
        raise MissingSalt("pseudonym salt is not configured")
    digest = hmac.new(salt.encode(), user_id.encode(), hashlib.sha256)
    return digest.hexdigest()[:16]


def _aggregate(kb_id: str, ratings: Iterable[int]) -> RatingAggregate:
    counts = {value: 0 for value in RATING_VALUES}
    for rating in ratings:
        counts[rating] += 1
    n = sum(counts.values())
    if n == 0:
        return RatingAggregate(kb_id=kb_id, counts=counts, percentages=dict.fromkeys(RATING_VALUES, 0.0), average=None, n=0)
    percentages = {value: round(100.0 * counts[value] / n, 2) for value in RATING_VALUES}
    average = sum(value * count for value, count in counts.items()) / n
    return RatingAggregate(kb_id=kb_id, counts=counts, percentages=percentages, average=average, n=n)


class AnalyticsService:
    """Records sessions, turns, and ratings, and aggregates them."""

    def __init__(
        self,
        store: DocumentStore,
        clock: Clock | None = None,
        known_kbs: Collection[str] | None = None,
        session_timeout_minutes: float = DEFAULT_SESSION_TIMEOUT_MINUTES,
    ) -> None:
        self.store = store
        self.clock = clock or SystemClock()
        self._known_kbs = set(known_kbs) if known_kbs is not None else None
        self._timeout_seconds = session_timeout_minutes * 60.0

    # Sessions ------------------------------------------------------------

    def open_session(self, user_pseudonym: str, now: float | None = None) -> str:
        now = self.clock.now() if now is None else now
        session_id = uuid.uuid4().hex
        self.store.insert(
            "sessions",
            session_id,
            {
                "session_id": session_id,
                "user_pseudonym": user_pseudonym,
                "started_at": now,
                "ended_at": None,
                "last_activity_at": now,
            },
        )
        return session_id

    def close_session(self, session_id: str, now: float | None = None) -> None:
        now = self.clock.now() if now is None else now
        session = self.store.get("sessions", session_id)
        if session is None:
            raise UnknownSession(session_id)
        if session["ended_at"] is not None:
            raise AlreadyClosed(session_id)
        self.store.update("sessions", session_id, {"ended_at": max(now, session["started_at"])})

    def sweep_idle_sessions(self, now: float | None = None) -> list[str]:
        """Close sessions idle past the timeout, stamping the end at the
        last observed activity so durations measure the activity span."""
        now = self.clock.now() if now is None else now
        closed = []
        for session in self.store.scan("sessions"):
            if session["ended_at"] is None and now - session["last_activity_at"] >= self._timeout_seconds:
                self.store.update("sessions", session["session_id"], {"ended_at": session["last_activity_at"]})
                closed.append(session["session_id"])
        return closed

    # Turns and ratings ----------------------------------------------------

    def record_turn(
        self,
        session_id: str,
        kb_id: str,
        query: str,
        response: str,
        provider_id: str,
        fallback_used: bool,
        latency_ms: int = 0,
        now: float | None = None,
    ) -> str:
        now = self.clock.now() if now is None else now
        session = self.store.get("sessions", session_id)
        if session is None or session["ended_at"] is not None:
            raise UnknownSession(f"no open session {session_id!r}")
        if self._known_kbs is not None and kb_id not in self._known_kbs:
            raise UnknownKb(kb_id)
        turn_id = uuid.uuid4().hex
        self.store.insert(
            "turns",
            turn_id,
            {
                "turn_id": turn_id,
                "session_id": session_id,
                "kb_id": kb_id,
                "query": query,
                "response": response,
                "provider_id": provider_id,
                "fallback_used": bool(fallback_used),
                "rating": None,
                "created_at": now,
                "latency_ms": int(latency_ms),
            },
        )
        self.store.update("sessions", session_id, {"last_activity_at": now})
        return turn_id

    def get_turn(self, turn_id: str) -> dict | None:
        return self.store.get("turns", turn_id)

    def session_turns(self, session_id: str) -> list[dict]:
        turns = [t for t in self.store.scan("turns") if t["session_id"] == session_id]
        turns.sort(key=lambda t: (t["created_at"], t["turn_id"]))
        return turns

    def rate_turn(self, turn_id: str, rating: int) -> None:
        """Attach a 1-5 rating; re-rating overwrites, same value no-ops."""
        if isinstance(rating, bool) or not isinstance(rating, int) or rating not in RATING_VALUES:
            raise OutOfRange(f"rating must be an integer from 1 to 5, got {rating!r}")
        turn = self.store.get("turns", turn_id)
        if turn is None:
            raise UnknownTurn(turn_id)
        if turn["rating"] == rating:
            return
        self.store.update("turns", turn_id, {"rating": rating})

    # Aggregation ----------------------------------------------------------

    def aggregate_ratings(self, kb_filter: str = "ALL") -> RatingAggregate:
        turns = self.store.scan("turns")
        rated = [t for t in turns if t["rating"] is not None]
        if kb_filter != "ALL":
            return _aggregate(kb_filter, (t["rating"] for t in rated if t["kb_id"] == kb_filter))
        overall = _aggregate("ALL", (t["rating"] for t in rated))
        per_kb_averages = [
            agg.average
            for agg in (
                _aggregate(kb_id, (t["rating"] for t in rated if t["kb_id"] == kb_id))
                for kb_id in sorted({t["kb_id"] for t in rated})
            )
            if agg.average is not None
        ]
        total_average = (
            sum(per_kb_averages) / len(per_kb_averages) if per_kb_averages else None
        )
        return RatingAggregate(
            kb_id="ALL",
            counts=overall.counts,
            percentages=overall.percentages,
            average=overall.average,
            n=overall.n,
            total_average=total_average,
        )

    def aggregate_by_kb(self) -> list[RatingAggregate]:
        """Per-KB rows in kb_id order, for the report table."""
        turns = [t for t in self.store.scan("turns") if t["rating"] is not None]
        kb_ids = sorted({t["kb_id"] for t in turns})
        return [
            _aggregate(kb_id, (t["rating"] for t in turns if t["kb_id"] == kb_id))
            for kb_id in kb_ids
        ]

    def usage_report(self, start: float | None = None, end: float | None = None) -> UsageReport:
        def in_range(stamp: float) -> bool:
            if start is not None and stamp < start:
                return False
            if end is not None and stamp >= end:
                return False
            return True

        turns = [t for t in self.store.scan("turns") if in_range(t["created_at"])]
        sessions = [s for s in self.store.scan("sessions") if in_range(s["started_at"])]
        per_kb: dict[str, int] = {}
        for turn in turns:
            per_kb[turn["kb_id"]] = per_kb.get(turn["kb_id"], 0) + 1
        durations = [
            (s["ended_at"] - s["started_at"]) / 60.0
            for s in sessions
            if s["ended_at"] is not None
        ]
        return UsageReport(
            total_queries=len(turns),
            per_kb_counts=dict(sorted(per_kb.items())),
            session_count=len(sessions),
            unique_users=len({s["user_pseudonym"] for s in sessions}),
            mean_session_minutes=(sum(durations) / len(durations)) if durations else None,
        )


# Export and import ---------------------------------------------------------


def export_jsonl(store: DocumentStore, out_dir: str | Path) -> dict[str, Path]:
    """Write the four collections as JSON-lines files, one record per line.

    sessions and turns are the authoritative records; ratings and users
    are projections of them, emitted so each collected metric has a
    collection of its own. Timestamps stay epoch seconds so the export
    round-trips without loss.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sessions = sorted(store.scan("sessions"), key=lambda s: (s["started_at"], s["session_id"]))
    turns = sorted(store.scan("turns"), key=lambda t: (t["created_at"], t["turn_id"]))
    ratings = [
        {
            "turn_id": t["turn_id"],
            "session_id": t["session_id"],
            "kb_id": t["kb_id"],
            "rating": t["rating"],
            "created_at": t["created_at"],
        }
        for t in turns
        if t["rating"] is not None
    ]
    users: dict[str, dict] = {}
    for session in sessions:
        entry = users.setdefault(
            session["user_pseudonym"],
            {"user_pseudonym": session["user_pseudonym"], "first_seen_at": session["started_at"], "session_count": 0},
        )
        entry["session_count"] += 1
        entry["first_seen_at"] = min(entry["first_seen_at"], session["started_at"])
    collections = {
        "sessions": sessions,
        "turns": turns,
        "ratings": ratings,
        "users": list(users.values()),
    }
    paths: dict[str, Path] = {}
    for name in EXPORT_COLLECTIONS:
        path = out / f"{name}.jsonl"
        with open(path, "w", encoding="utf-8") as handle:
            for record in collections[name]:
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        paths[name] = path
    return paths


def import_jsonl(in_dir: str | Path, store: DocumentStore) -> None:
    """Rebuild a store from an export directory.

    sessions and turns carry every field, ratings included, so loading
    them restores the full state; the projection files are not needed.
    """
    directory = Path(in_dir)
    for name, key in (("sessions", "session_id"), ("turns", "turn_id")):
        path = directory / f"{name}.jsonl"
        if not path.exists():
            raise StoreError(f"export is missing {path.name}")
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except ValueError as exc:
                    raise StoreError(f"{path.name}:{line_no}: bad record: {exc}") from exc
                store.insert(name, record[key], record)
