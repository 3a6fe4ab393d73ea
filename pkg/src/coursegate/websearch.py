"""Web-search retrieval with a pluggable backend.

The merged context block concatenates, in order: featured snippet,
knowledge-graph entry, then the top organic results. The output feeds
the exact same budgeting and prompt-assembly path as LMS content; there
is no special casing downstream. The fixture backend (a keyed JSON
file) is the only one the test suite touches; a live HTTP adapter is
available but off by default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .markup import strip_markup

FEATURED_LABEL = "FEATURED SNIPPET:"
KNOWLEDGE_GRAPH_LABEL = "KNOWLEDGE GRAPH:"
WEB_RESULTS_LABEL = "WEB RESULTS:"

DEFAULT_ORGANIC_RESULTS = 3


class BackendUnavailable(Exception):
    pass


class SearchTimeout(Exception):
    pass


@dataclass(frozen=True)
class OrganicResult:
    title: str
    snippet: str
    url: str


@dataclass(frozen=True)
class SearchResultSet:
    query: str
    featured_snippet: str | None = None
    knowledge_graph: str | None = None
    organic: tuple[OrganicResult, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not (self.featured_snippet or self.knowledge_graph or self.organic)


class SearchBackend(Protocol):
    def run_query(self, query: str) -> dict:
        """Raw result document for a query; {} when nothing is known."""
        ...


def normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


class FixtureSearchBackend:
    """Canned results keyed by normalized query text."""

    def __init__(self, fixtures: dict | str | Path) -> None:
        if not isinstance(fixtures, dict):
            fixtures = json.loads(Path(fixtures).read_text())
        self._entries = {normalize_query(k): v for k, v in fixtures.items()}

    def run_query(self, query: str) -> dict:
        return self._entries.get(normalize_query(query), {})


class HttpSearchBackend:
    """Adapter for a live JSON search endpoint. Off unless configured.

    The endpoint receives GET ?q=<query> and replies with the same
    document shape the fixture file uses.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0) -> None:
        self._endpoint = endpoint
        self._timeout = timeout

    def run_query(self, query: str) -> dict:
        try:
            response = httpx.get(self._endpoint, params={"q": query}, timeout=self._timeout)
        except httpx.TimeoutException as exc:
            raise SearchTimeout(f"search backend timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"search backend unreachable: {type(exc).__name__}") from exc
        if response.status_code != 200:
            raise BackendUnavailable(f"search backend returned {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise BackendUnavailable("search backend returned malformed JSON") from exc


def search(query: str, backend: SearchBackend) -> SearchResultSet:
    """Run the query and map the backend document into a SearchResultSet.

    All strings are markup-stripped on the way in. An empty set is a
    valid outcome, not an error.
    """
    raw = backend.run_query(query)
    organic = tuple(
        OrganicResult(
            title=strip_markup(str(entry.get("title", ""))),
            snippet=strip_markup(str(entry.get("snippet", ""))),
            url=str(entry.get("url", "")),
        )
        for entry in raw.get("organic", [])
    )
    featured = raw.get("featured_snippet")
    graph = raw.get("knowledge_graph")
    return SearchResultSet(
        query=query,
        featured_snippet=strip_markup(str(featured)) if featured else None,
        knowledge_graph=strip_markup(str(graph)) if graph else None,
        organic=organic,
    )


def merge_results(results: SearchResultSet, k: int = DEFAULT_ORGANIC_RESULTS) -> str:
    """Concatenate the labeled result strata into one context block.

    Sections appear in fixed order: featured snippet, knowledge graph,
    then the top-k organic entries with titles and source URLs. An empty
    result set yields "" so the no-content prompt branch applies.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    sections: list[str] = []
    if results.featured_snippet:
        sections.append(f"{FEATURED_LABEL}\n{results.featured_snippet}")
    if results.knowledge_graph:
        sections.append(f"{KNOWLEDGE_GRAPH_LABEL}\n{results.knowledge_graph}")
    if results.organic:
        entries = [
            f"{i}. {entry.title}\n{entry.snippet}\nSource: {entry.url}"
            for i, entry in enumerate(results.organic[:k], start=1)
        ]
        sections.append(WEB_RESULTS_LABEL + "\n" + "\n".join(entries))
    return "\n\n".join(sections)
