"""Knowledge-base registry and per-query context retrieval.

A knowledge base names a content source: a plain LMS page, the weekly
schedule page, or live web search. Retrieval returns the grounding text
for one chat turn. cache_ttl defaults to 0, meaning every call
re-fetches, so a page edit shows up in the very next turn.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from . import curriculum, websearch
from .clock import Clock, utc_date
from .lms import CoursePageRef, LmsClient, LmsError
from .tokens import estimate_tokens

LMS_SOURCE_KINDS = ("lms_page", "curriculum_navigator")
SOURCE_KINDS = LMS_SOURCE_KINDS + ("web_search",)


class SourceUnavailable(Exception):
    """The backing content source could not be read."""


class WrongDispatch(Exception):
    """Operation not applicable to this knowledge-base kind."""


@dataclass(frozen=True)
class KnowledgeBaseConfig:
    kb_id: str
    display_name: str
    source_kind: str
    page_ref: CoursePageRef | None = None
    template_id: str = "grounded"
    cache_ttl: float = 0.0

    def __post_init__(self) -> None:
        if not self.kb_id:
            raise ValueError("kb_id must be non-empty")
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(
                f"{self.kb_id}: unknown source_kind {self.source_kind!r}"
            )
        if self.source_kind in LMS_SOURCE_KINDS and self.page_ref is None:
            raise ValueError(f"{self.kb_id}: {self.source_kind} requires page_ref")
        if self.source_kind == "web_search" and self.page_ref is not None:
            raise ValueError(f"{self.kb_id}: web_search takes no page_ref")
        if self.cache_ttl < 0:
            raise ValueError(f"{self.kb_id}: cache_ttl must be >= 0")


@dataclass(frozen=True)
class RetrievedContext:
    kb_id: str
    text: str
    source_label: str
    fetched_at: float
    estimated_tokens: int
    truncated: bool = False


class KnowledgeRegistry:
    """Immutable registry of knowledge bases, keyed by kb_id."""

    def __init__(self, configs) -> None:
        self._by_id: dict[str, KnowledgeBaseConfig] = {}
        for config in configs:
            if config.kb_id in self._by_id:
                raise ValueError(f"duplicate kb_id {config.kb_id!r}")
            self._by_id[config.kb_id] = config

    def get(self, kb_id: str) -> KnowledgeBaseConfig | None:
        return self._by_id.get(kb_id)

    def __contains__(self, kb_id: str) -> bool:
        return kb_id in self._by_id

    def __len__(self) -> int:
        return len(self._by_id)

    def all(self) -> tuple[KnowledgeBaseConfig, ...]:
        return tuple(self._by_id.values())

    def ids(self) -> tuple[str, ...]:
        return tuple(self._by_id)


class ContextRetriever:
    """Fetches grounding text for a knowledge base, honoring its TTL.

    Cache fills are serialized per kb_id, so a stampede of concurrent
    readers triggers at most one fetch per expiry. Entries younger than
    cache_ttl are returned as-is; a ttl of 0 disables caching entirely.
    """

    def __init__(
        self,
        lms_client: LmsClient,
        clock: Clock,
        search_backend: websearch.SearchBackend | None = None,
    ) -> None:
        self._lms = lms_client
        self._clock = clock
        self._search_backend = search_backend
        self._cache: dict[str, RetrievedContext] = {}
        self._fill_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _fill_lock(self, kb_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._fill_locks.setdefault(kb_id, threading.Lock())

    def retrieve_context(self, kb: KnowledgeBaseConfig, now: float | None = None) -> RetrievedContext:
        """Retrieve page-backed context. Web search needs the query text,
        so that kind dispatches through retrieve_for_query instead."""
        if kb.source_kind == "web_search":
            raise WrongDispatch(
                f"{kb.kb_id}: web_search content is query-driven; use retrieve_for_query"
            )
        now = self._clock.now() if now is None else now
        if kb.cache_ttl <= 0:
            return self._fetch(kb, now)
        cached = self._cache.get(kb.kb_id)
        if cached is not None and now - cached.fetched_at < kb.cache_ttl:
            return cached
        with self._fill_lock(kb.kb_id):
            cached = self._cache.get(kb.kb_id)
            if cached is not None and now - cached.fetched_at < kb.cache_ttl:
                return cached
            context = self._fetch(kb, now)
            self._cache[kb.kb_id] = context
            return context

    def retrieve_for_query(
        self, kb: KnowledgeBaseConfig, query: str, now: float | None = None
    ) -> RetrievedContext:
        """Retrieve context for one chat turn, any source kind."""
        if kb.source_kind != "web_search":
            return self.retrieve_context(kb, now)
        now = self._clock.now() if now is None else now
        if self._search_backend is None:
            raise SourceUnavailable(f"{kb.kb_id}: no search backend configured")
        try:
            results = websearch.search(query, self._search_backend)
        except (websearch.BackendUnavailable, websearch.SearchTimeout) as exc:
            raise SourceUnavailable(f"{kb.kb_id}: {exc}") from exc
        text = websearch.merge_results(results)
        return RetrievedContext(
            kb_id=kb.kb_id,
            text=text,
            source_label=f"web search for: {websearch.normalize_query(query)}",
            fetched_at=now,
            estimated_tokens=estimate_tokens(text),
        )

    def _fetch(self, kb: KnowledgeBaseConfig, now: float) -> RetrievedContext:
        try:
            page = self._lms.fetch_page(kb.page_ref)
        except LmsError as exc:
            raise SourceUnavailable(f"{kb.kb_id}: {exc}") from exc
        if kb.source_kind == "lms_page":
            text = page.body
            label = f"course {kb.page_ref.course_id}, page {kb.page_ref.page_slug}"
        else:
            # The schedule page stores JSON; parse the raw body so markup
            # stripping cannot disturb it.
            try:
                week = curriculum.parse_curriculum_navigator(page.raw_body, utc_date(now))
            except curriculum.SchemaError as exc:
                raise SourceUnavailable(f"{kb.kb_id}: {exc}") from exc
            text = week.as_context_text()
            label = f"curriculum week {week.week_index}: {week.title}"
        return RetrievedContext(
            kb_id=kb.kb_id,
            text=text,
            source_label=label,
            fetched_at=now,
            estimated_tokens=estimate_tokens(text),
        )
