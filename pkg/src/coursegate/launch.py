"""Signed launch validation.

An LMS embeds the chat tool by handing the browser a signed launch
message: base64url(claims JSON) + "." + base64url(signature), signed
with the platform's Ed25519 key. This mirrors the security contract of
an LTI 1.3 tool launch (signature, nonce replay window, freshness)
without the OIDC redirect choreography.
"""

from __future__ import annotations

import base64
import binascii
import itertools
import json
import threading
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .clock import Clock

MAX_AGE_SECONDS = 300.0
CLOCK_SKEW_SECONDS = 30.0

REQUIRED_CLAIMS = (
    "user_id",
    "display_name",
    "course_id",
    "roles",
    "issued_at",
    "nonce",
)


class LaunchError(Exception):
    pass


class BadSignature(LaunchError):
    pass


class ReplayedNonce(LaunchError):
    pass


class Expired(LaunchError):
    pass


class MissingClaim(LaunchError):
    def __init__(self, claim: str) -> None:
        super().__init__(f"launch is missing claim {claim!r}")
        self.claim = claim


@dataclass(frozen=True)
class LaunchContext:
    user_id: str
    display_name: str
    course_id: str
    roles: frozenset[str]
    issued_at: float
    nonce: str


class NonceRegistry:
    """Set of consumed nonces with atomic insert-if-absent."""

    def __init__(self) -> None:
        self._seen: set[str] = set()
        self._lock = threading.Lock()

    def register(self, nonce: str) -> bool:
        """True if the nonce was fresh and is now consumed."""
        with self._lock:
            if nonce in self._seen:
                return False
            self._seen.add(nonce)
            return True


def _b64encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode("ascii")


def _b64decode(data: str) -> bytes:
    return base64.urlsafe_b64decode(data.encode("ascii"))


def sign_launch(claims: dict, key: Ed25519PrivateKey) -> str:
    """Serialize claims canonically and sign them, producing the wire form."""
    payload = json.dumps(claims, sort_keys=True, separators=(",", ":")).encode()
    return _b64encode(payload) + "." + _b64encode(key.sign(payload))


def validate_launch(
    signed_launch: str,
    platform_key: Ed25519PublicKey,
    now: float,
    nonces: NonceRegistry,
    max_age: float = MAX_AGE_SECONDS,
    clock_skew: float = CLOCK_SKEW_SECONDS,
) -> LaunchContext:
    """Verify signature, claim set, freshness, and nonce uniqueness.

    A launch aged exactly max_age still passes; one second older is
    rejected. issued_at may run ahead of the validator's clock by at
    most clock_skew. The nonce is consumed only after every other check
    passes, so a rejected launch cannot poison the replay window.
    """
    try:
        payload_b64, signature_b64 = signed_launch.split(".", 1)
        payload = _b64decode(payload_b64)
        signature = _b64decode(signature_b64)
    except (ValueError, binascii.Error) as exc:
        raise BadSignature("launch message is not in payload.signature form") from exc
    try:
        platform_key.verify(signature, payload)
    except InvalidSignature as exc:
        raise BadSignature("signature does not match payload") from exc
    try:
        claims = json.loads(payload)
    except (ValueError, UnicodeDecodeError) as exc:
        raise BadSignature("signed payload is not JSON") from exc
    if not isinstance(claims, dict):
        raise BadSignature("signed payload is not a claims object")
    for name in REQUIRED_CLAIMS:
        if name not in claims or claims[name] is None or claims[name] == "":
            raise MissingClaim(name)
    try:
        issued_at = float(claims["issued_at"])
    except (TypeError, ValueError):
        raise MissingClaim("issued_at")
    if issued_at > now + clock_skew:
        raise Expired("issued_at is in the future")
    if now - issued_at > max_age:
        raise Expired(
            f"launch is {now - issued_at:.0f}s old, max age {max_age:.0f}s"
        )
    nonce = str(claims["nonce"])
    if not nonces.register(nonce):
        raise ReplayedNonce(nonce)
    roles = claims["roles"]
    if isinstance(roles, str):
        roles = [roles]
    return LaunchContext(
        user_id=str(claims["user_id"]),
        display_name=str(claims["display_name"]),
        course_id=str(claims["course_id"]),
        roles=frozenset(str(r) for r in roles),
        issued_at=issued_at,
        nonce=nonce,
    )


class MockLaunchPlatform:
    """Holds a signing key and mints launch messages the way an LMS would."""

    def __init__(self, clock: Clock) -> None:
        self._key = Ed25519PrivateKey.generate()
        self._clock = clock
        self._counter = itertools.count()

    @property
    def public_key(self) -> Ed25519PublicKey:
        return self._key.public_key()

    def sign(self, claims: dict) -> str:
        """Sign an arbitrary claims object, for exercising edge cases."""
        return sign_launch(claims, self._key)

    def launch_message(
        self,
        user_id: str,
        display_name: str,
        course_id: str,
        roles: tuple[str, ...] = ("Learner",),
        issued_at: float | None = None,
        nonce: str | None = None,
        drop_claim: str | None = None,
    ) -> str:
        claims = {
            "user_id": user_id,
            "display_name": display_name,
            "course_id": course_id,
            "roles": list(roles),
            "issued_at": self._clock.now() if issued_at is None else issued_at,
            "nonce": nonce or f"nonce-{next(self._counter)}",
        }
        if drop_claim:
            del claims[drop_claim]
        return sign_launch(claims, self._key)
