import json
import logging

import pytest

from coursegate.clock import MockClock
from coursegate.lms import (
    AuthError,
    CoursePageRef,
    LmsClient,
    LmsCredentials,
    MalformedResponse,
    MockDisabled,
    NotFound,
)
from coursegate.mock_lms import MockLmsPlatform

REF = CoursePageRef(course_id="101", page_slug="syllabus")


@pytest.fixture
def platform(mock_clock):
    with MockLmsPlatform(api_token="sekrit-token-042", clock=mock_clock) as p:
        yield p


@pytest.fixture
def lms_client(platform, mock_clock):
    creds = LmsCredentials(base_url=platform.base_url, api_token=platform.api_token)
    with LmsClient(creds, mock_enabled=True, clock=mock_clock) as c:
        yield c


def test_fetch_page_round_trip(platform, lms_client):
    platform.upsert_page("101", "syllabus", "<h1>Syllabus</h1><p>Week one: intro.</p>")
    page = lms_client.fetch_page(REF)
    assert page.body == "Syllabus\nWeek one: intro."
    assert "<h1>" in page.raw_body
    assert page.ref == REF
    assert isinstance(page.updated_at, float)


def test_fetch_missing_page_is_not_found(lms_client):
    with pytest.raises(NotFound):
        lms_client.fetch_page(CoursePageRef("101", "no-such-page"))


def test_bad_token_is_auth_error(platform, mock_clock):
    creds = LmsCredentials(base_url=platform.base_url, api_token="wrong-token")
    platform.upsert_page("101", "syllabus", "<p>x</p>")
    with LmsClient(creds, clock=mock_clock) as client:
        with pytest.raises(AuthError):
            client.fetch_page(REF)


def test_malformed_payload(platform, lms_client):
    platform.upsert_page("101", "syllabus", "<p>x</p>")
    platform.respond_malformed = True
    with pytest.raises(MalformedResponse):
        lms_client.fetch_page(REF)


def test_unreachable_host_is_transport_error(mock_clock):
    from coursegate.lms import TransportError

    creds = LmsCredentials(base_url="http://127.0.0.1:1", api_token="t")
    with LmsClient(creds, timeout=0.2, clock=mock_clock) as client:
        with pytest.raises(TransportError):
            client.fetch_page(REF)


def test_future_updated_at_rejected(platform):
    # Platform clock running 2 minutes ahead of the client clock, past
    # the 30 s tolerance.
    ahead = MockClock(1_700_000_000.0 + 120)
    behind = MockClock(1_700_000_000.0)
    platform.clock = ahead
    platform.upsert_page("101", "syllabus", "<p>x</p>")
    creds = LmsCredentials(base_url=platform.base_url, api_token=platform.api_token)
    with LmsClient(creds, clock=behind) as client:
        with pytest.raises(MalformedResponse):
            client.fetch_page(REF)


def test_stub_update_requires_mock_mode(platform, mock_clock):
    creds = LmsCredentials(base_url=platform.base_url, api_token=platform.api_token)
    with LmsClient(creds, mock_enabled=False, clock=mock_clock) as client:
        with pytest.raises(MockDisabled):
            client.stub_update_page(REF, "new body")


def test_stub_update_changes_subsequent_fetches(platform, lms_client):
    platform.upsert_page("101", "syllabus", "<p>old</p>")
    assert lms_client.fetch_page(REF).body == "old"
    lms_client.stub_update_page(REF, "<p>new</p>")
    assert lms_client.fetch_page(REF).body == "new"


def test_page_ref_validation():
    with pytest.raises(ValueError):
        CoursePageRef("", "slug")
    with pytest.raises(ValueError):
        CoursePageRef("101", "has space")


def test_credentials_require_absolute_url():
    with pytest.raises(ValueError):
        LmsCredentials(base_url="canvas.example.edu", api_token="t")


def test_token_never_appears_in_logs_or_reprs(platform, lms_client, caplog):
    token = platform.api_token
    platform.upsert_page("101", "syllabus", "<p>body</p>")
    with caplog.at_level(logging.DEBUG):
        lms_client.fetch_page(REF)
        lms_client.stub_update_page(REF, "<p>updated</p>")
        lms_client.fetch_page(REF)
    joined = "\n".join(record.getMessage() for record in caplog.records)
    assert token not in joined
    creds = LmsCredentials(base_url=platform.base_url, api_token=token)
    assert token not in repr(creds)
    assert token not in repr(lms_client)
    assert token not in str(creds)


def test_token_never_persisted_in_page_records(platform, lms_client):
    # What comes back from the LMS and gets stored downstream must not
    # carry the credential.
    token = platform.api_token
    platform.upsert_page("101", "syllabus", "<p>content</p>")
    page = lms_client.fetch_page(REF)
    serialized = json.dumps(
        {"body": page.body, "raw": page.raw_body, "updated_at": page.updated_at}
    )
    assert token not in serialized
