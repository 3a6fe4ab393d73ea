"""Canvas-style LMS page client.

Pages are the raw-information repositories the chat grounds itself in.
The client is a thin, stateless HTTP wrapper: no caching here, so a
page edit shows up on the very next fetch. Freshness policy lives with
the retriever, not the transport.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime

import httpx

from .clock import Clock, SystemClock
from .markup import strip_markup

log = logging.getLogger(__name__)

UPDATED_AT_SKEW_SECONDS = 30.0


class LmsError(Exception):
    pass


class NotFound(LmsError):
    pass


class AuthError(LmsError):
    pass


class TransportError(LmsError):
    pass


class MalformedResponse(LmsError):
    pass


class MockDisabled(LmsError):
    pass


@dataclass(frozen=True)
class CoursePageRef:
    course_id: str
    page_slug: str

    def __post_init__(self) -> None:
        if not self.course_id or not self.page_slug:
            raise ValueError("course_id and page_slug must be non-empty")
        if any(ch.isspace() for ch in self.page_slug):
            raise ValueError("page_slug must not contain whitespace")


@dataclass(frozen=True)
class PageContent:
    ref: CoursePageRef
    body: str  # markup-stripped projection of raw_body
    raw_body: str
    updated_at: float


@dataclass(frozen=True, repr=False)
class LmsCredentials:
    base_url: str
    api_token: str

    def __post_init__(self) -> None:
        if not self.base_url.startswith(("http://", "https://")):
            raise ValueError("base_url must be an absolute http(s) URL")

    # The token must never leak into logs, errors, or stored records.
    def __repr__(self) -> str:
        return f"LmsCredentials(base_url={self.base_url!r}, api_token='***')"


def _parse_updated_at(value) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        return datetime.fromisoformat(value.replace("Z", "+00:00")).timestamp()
    raise ValueError(f"unsupported updated_at type {type(value).__name__}")


class LmsClient:
    """Fetches course pages over the Canvas-style REST surface.

    One instance is safe for concurrent use. stub_update_page is the
    control surface of the embedded mock platform and refuses to run
    when the client is pointed at a real LMS.
    """

    def __init__(
        self,
        creds: LmsCredentials,
        mock_enabled: bool = False,
        timeout: float = 10.0,
        clock: Clock | None = None,
    ) -> None:
        self._creds = creds
        self._mock_enabled = mock_enabled
        self._clock = clock or SystemClock()
        self._client = httpx.Client(
            base_url=creds.base_url,
            timeout=timeout,
            headers={"Authorization": f"Bearer {creds.api_token}"},
        )

    def __repr__(self) -> str:
        return f"LmsClient(base_url={self._creds.base_url!r}, mock={self._mock_enabled})"

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "LmsClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def fetch_page(self, ref: CoursePageRef) -> PageContent:
        path = f"/api/v1/courses/{ref.course_id}/pages/{ref.page_slug}"
        log.debug("fetching page %s/%s", ref.course_id, ref.page_slug)
        try:
            response = self._client.get(path)
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout fetching {path}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(
                f"network error fetching {path}: {type(exc).__name__}"
            ) from exc
        if response.status_code == 404:
            raise NotFound(f"course {ref.course_id} has no page {ref.page_slug}")
        if response.status_code in (401, 403):
            raise AuthError("the LMS rejected the configured API token")
        if response.status_code >= 500:
            raise TransportError(f"LMS returned {response.status_code} for {path}")
        if response.status_code != 200:
            raise MalformedResponse(f"unexpected status {response.status_code} for {path}")
        try:
            doc = response.json()
            raw_body = doc["body"]
            updated_at = _parse_updated_at(doc["updated_at"])
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponse(f"page document is unparseable: {exc}") from exc
        if not isinstance(raw_body, str):
            raise MalformedResponse("page body is not a string")
        if updated_at > self._clock.now() + UPDATED_AT_SKEW_SECONDS:
            raise MalformedResponse("page updated_at lies in the future")
        return PageContent(
            ref=ref,
            body=strip_markup(raw_body),
            raw_body=raw_body,
            updated_at=updated_at,
        )

    def stub_update_page(self, ref: CoursePageRef, new_body: str) -> None:
        """Rewrite (or create) a page on the embedded mock platform."""
        if not self._mock_enabled:
            raise MockDisabled("page stubbing is only available against the mock platform")
        try:
            response = self._client.post(
                "/mock/pages",
                json={
                    "course_id": ref.course_id,
                    "page_slug": ref.page_slug,
                    "body": new_body,
                },
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"network error updating mock page: {type(exc).__name__}") from exc
        if response.status_code != 200:
            raise MalformedResponse(f"mock platform returned {response.status_code}")
