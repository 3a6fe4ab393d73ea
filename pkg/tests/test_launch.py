import pytest

from coursegate.clock import MockClock
from coursegate.launch import (
    BadSignature,
    Expired,
    MissingClaim,
    MockLaunchPlatform,
    NonceRegistry,
    ReplayedNonce,
    validate_launch,
)


@pytest.fixture
def platform(mock_clock):
    return MockLaunchPlatform(mock_clock)


@pytest.fixture
def nonces():
    return NonceRegistry()


def validate(platform, mock_clock, nonces, message):
    return validate_launch(message, platform.public_key, mock_clock.now(), nonces)


def test_valid_launch(platform, mock_clock, nonces):
    message = platform.launch_message("user-9", "Alice", "101", roles=("Learner",))
    context = validate(platform, mock_clock, nonces, message)
    assert context.user_id == "user-9"
    assert context.display_name == "Alice"
    assert context.course_id == "101"
    assert context.roles == frozenset({"Learner"})


def test_tampered_payload_rejected(platform, mock_clock, nonces):
    message = platform.launch_message("user-9", "Alice", "101")
    payload, signature = message.split(".")
    flipped = ("A" if payload[5] != "A" else "B")
    tampered = payload[:5] + flipped + payload[6:] + "." + signature
    with pytest.raises(BadSignature):
        validate(platform, mock_clock, nonces, tampered)


def test_wrong_key_rejected(platform, mock_clock, nonces):
    other = MockLaunchPlatform(mock_clock)
    message = other.launch_message("user-9", "Alice", "101")
    with pytest.raises(BadSignature):
        validate(platform, mock_clock, nonces, message)


def test_garbage_wire_forms(platform, mock_clock, nonces):
    for garbage in ("", "nodot", "a.b.c!!", "###.###"):
        with pytest.raises(BadSignature):
            validate(platform, mock_clock, nonces, garbage)


def test_replay_rejected(platform, mock_clock, nonces):
    message = platform.launch_message("user-9", "Alice", "101")
    validate(platform, mock_clock, nonces, message)
    with pytest.raises(ReplayedNonce):
        validate(platform, mock_clock, nonces, message)


def test_age_boundary(platform, mock_clock, nonces):
    now = mock_clock.now()
    ok = platform.launch_message("u", "A", "101", issued_at=now - 300)
    assert validate(platform, mock_clock, nonces, ok).user_id == "u"
    stale = platform.launch_message("u", "A", "101", issued_at=now - 301)
    with pytest.raises(Expired):
        validate(platform, mock_clock, nonces, stale)


def test_future_skew_boundary(platform, mock_clock, nonces):
    now = mock_clock.now()
    ok = platform.launch_message("u", "A", "101", issued_at=now + 30)
    assert validate(platform, mock_clock, nonces, ok).user_id == "u"
    ahead = platform.launch_message("u", "A", "101", issued_at=now + 31)
    with pytest.raises(Expired):
        validate(platform, mock_clock, nonces, ahead)


@pytest.mark.parametrize(
    "claim", ["user_id", "display_name", "course_id", "roles", "issued_at", "nonce"]
)
def test_missing_claims(platform, mock_clock, nonces, claim):
    message = platform.launch_message("u", "A", "101", drop_claim=claim)
    with pytest.raises(MissingClaim) as exc_info:
        validate(platform, mock_clock, nonces, message)
    assert exc_info.value.claim == claim


def test_rejected_launch_does_not_burn_its_nonce(platform, mock_clock, nonces):
    # A launch failing freshness must not poison the nonce, otherwise a
    # retry with a fresh signature would be refused.
    now = mock_clock.now()
    stale = platform.launch_message("u", "A", "101", issued_at=now - 999, nonce="n-shared")
    with pytest.raises(Expired):
        validate(platform, mock_clock, nonces, stale)
    fresh = platform.launch_message("u", "A", "101", nonce="n-shared")
    assert validate(platform, mock_clock, nonces, fresh).nonce == "n-shared"


def test_single_role_string_coerced(platform, mock_clock, nonces):
    claims = {
        "user_id": "u",
        "display_name": "A",
        "course_id": "101",
        "roles": "Instructor",
        "issued_at": mock_clock.now(),
        "nonce": "n-role",
    }
    message = platform.sign(claims)
    context = validate(platform, mock_clock, nonces, message)
    assert context.roles == frozenset({"Instructor"})
