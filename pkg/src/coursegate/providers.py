"""Provider registry, quota enforcement, and failover routing.

Each provider carries a context window, RPM/TPM sliding-window limits,
an optional per-day request cap, and a priority. Completion requests go
to the best healthy provider whose window fits; transport-level trouble
(network error, timeout, throttling) benches that provider for a
cooldown and the request moves down the priority list. A content-level
BadResponse aborts instead, since the next provider would be handed the
same prompt.

Endpoints with the "mock:" scheme dispatch to scripted in-process
responders; anything http(s) speaks the JSON chat-completion contract
documented in the README.
"""

from __future__ import annotations

import logging
import math
import threading
import time as _time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import httpx

from .clock import Clock, SystemClock, next_utc_midnight, utc_date
from .prompting import PromptEnvelope

log = logging.getLogger(__name__)

HEALTH_COOLDOWN_SECONDS = 60.0
RATE_WINDOW_SECONDS = 60.0
DEFAULT_TIMEOUT_SECONDS = 30.0
DEFAULT_MAX_OUTPUT_TOKENS = 1024


class ProviderError(Exception):
    pass


class TransportError(ProviderError):
    pass


class ProviderTimeout(ProviderError):
    pass


class Throttled(ProviderError):
    pass


class BadResponse(ProviderError):
    pass


class NoCapableProvider(Exception):
    """No healthy provider's context window fits the request."""


class AllUnhealthy(Exception):
    """Every registered provider is cooling down."""


class AllProvidersFailed(Exception):
    """Every capable provider was tried or skipped; causes says why."""

    def __init__(self, causes: list[tuple[str, str]]) -> None:
        super().__init__("; ".join(f"{pid}: {cause}" for pid, cause in causes))
        self.causes = causes


@dataclass(frozen=True)
class ProviderProfile:
    provider_id: str
    window_tokens: int
    priority: int
    endpoint: str
    rpm_limit: int | None = None  # None means unlimited
    tpm_limit: int | None = None
    rpd_limit: int | None = None
    timeout: float = DEFAULT_TIMEOUT_SECONDS

    def __post_init__(self) -> None:
        if self.window_tokens <= 0:
            raise ValueError(f"{self.provider_id}: window_tokens must be positive")
        for name in ("rpm_limit", "tpm_limit", "rpd_limit"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{self.provider_id}: {name} must be positive or omitted")


@dataclass(frozen=True)
class CompletionRequest:
    envelope: PromptEnvelope
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    @property
    def needed_tokens(self) -> int:
        """Window room the request occupies: prompt plus reserved output."""
        return self.envelope.total_estimated_tokens + self.max_output_tokens


@dataclass(frozen=True)
class CompletionResult:
    text: str
    provider_id: str
    latency_ms: int
    fallback_used: bool


@dataclass(frozen=True)
class Admit:
    pass


@dataclass(frozen=True)
class Defer:
    retry_after: float
    reason: str  # "rpm" | "tpm" | "rpd"


class _ProviderLimiter:
    """Sliding 60 s request/token windows plus a UTC-day request count.

    A request stamped s occupies the minute window until s + 60, so the
    check at time t covers (t - 60, t]. All limited dimensions must
    admit before any of them records; a Defer leaves state untouched.
    """

    def __init__(self, profile: ProviderProfile) -> None:
        self._profile = profile
        self._requests: deque[float] = deque()
        self._token_events: deque[tuple[float, int]] = deque()
        self._token_sum = 0
        self._day = None
        self._day_count = 0
        self._lock = threading.Lock()

    def _evict(self, now: float) -> None:
        horizon = now - RATE_WINDOW_SECONDS
        while self._requests and self._requests[0] <= horizon:
            self._requests.popleft()
        while self._token_events and self._token_events[0][0] <= horizon:
            _, tokens = self._token_events.popleft()
            self._token_sum -= tokens

    def _tpm_retry_after(self, tokens: int, now: float) -> float:
        freed = 0
        for stamp, spent in self._token_events:
            freed += spent
            if self._token_sum - freed + tokens <= self._profile.tpm_limit:
                return stamp + RATE_WINDOW_SECONDS - now
        # The request alone exceeds the budget; no amount of waiting helps.
        return math.inf

    def admit(self, tokens: int, now: float) -> Admit | Defer:
        with self._lock:
            self._evict(now)
            profile = self._profile
            today = utc_date(now)
            if self._day != today:
                self._day = today
                self._day_count = 0
            worst: Defer | None = None
            if profile.rpm_limit is not None and len(self._requests) >= profile.rpm_limit:
                worst = Defer(self._requests[0] + RATE_WINDOW_SECONDS - now, "rpm")
            if profile.tpm_limit is not None and self._token_sum + tokens > profile.tpm_limit:
                wait = Defer(self._tpm_retry_after(tokens, now), "tpm")
                if worst is None or wait.retry_after > worst.retry_after:
                    worst = wait
            if profile.rpd_limit is not None and self._day_count >= profile.rpd_limit:
                wait = Defer(next_utc_midnight(now) - now, "rpd")
                if worst is None or wait.retry_after > worst.retry_after:
                    worst = wait
            if worst is not None:
                return worst
            self._requests.append(now)
            self._token_events.append((now, tokens))
            self._token_sum += tokens
            self._day_count += 1
            return Admit()


class _ProviderHealth:
    # Single float write under the GIL; no lock needed.
    def __init__(self) -> None:
        self._unhealthy_until = 0.0

    def is_healthy(self, now: float) -> bool:
        return now >= self._unhealthy_until

    def mark_failure(self, now: float, cooldown: float = HEALTH_COOLDOWN_SECONDS) -> None:
        self._unhealthy_until = max(self._unhealthy_until, now + cooldown)

    def mark_success(self) -> None:
        self._unhealthy_until = 0.0


Transport = Callable[[PromptEnvelope, ProviderProfile, Clock, int], str]


class _EchoTransport:
    def __call__(self, envelope: PromptEnvelope, profile, clock, max_output: int) -> str:
        return envelope.flatten()


class _FailNTransport:
    """Fails the first n calls with a transport error, then echoes."""

    def __init__(self, n: int) -> None:
        self._remaining = n
        self._lock = threading.Lock()

    def __call__(self, envelope, profile, clock, max_output) -> str:
        with self._lock:
            if self._remaining > 0:
                self._remaining -= 1
                raise TransportError("scripted transport failure")
        return envelope.flatten()


class _DelayTransport:
    """Takes delay_seconds to answer; past the profile timeout it times out."""

    def __init__(self, delay_seconds: float) -> None:
        self._delay = delay_seconds

    def __call__(self, envelope, profile, clock, max_output) -> str:
        elapsed = min(self._delay, profile.timeout)
        advance = getattr(clock, "advance", None)
        if advance is not None:
            advance(elapsed)
        elif elapsed > 0.05:
            # Only mock clocks should meet long scripted delays.
            _time.sleep(min(elapsed, 0.05))
        if self._delay > profile.timeout:
            raise ProviderTimeout(
                f"no response within {profile.timeout:.0f}s (scripted {self._delay:.0f}s delay)"
            )
        return envelope.flatten()


class _ThrottleTransport:
    def __call__(self, envelope, profile, clock, max_output) -> str:
        raise Throttled("scripted throttling response")


class _BadResponseTransport:
    def __call__(self, envelope, profile, clock, max_output) -> str:
        raise BadResponse("scripted unparseable completion")


def _http_transport(envelope: PromptEnvelope, profile: ProviderProfile, clock, max_output: int) -> str:
    payload = {
        "messages": [
            {"role": "system", "content": f"{envelope.system_block}\n\n{envelope.context_block}"},
            {"role": "user", "content": envelope.user_block},
        ],
        "max_tokens": max_output,
    }
    try:
        response = httpx.post(profile.endpoint, json=payload, timeout=profile.timeout)
    except httpx.TimeoutException as exc:
        raise ProviderTimeout(f"no response within {profile.timeout:.0f}s") from exc
    except httpx.HTTPError as exc:
        raise TransportError(f"network error: {type(exc).__name__}") from exc
    if response.status_code == 429:
        raise Throttled("provider returned 429")
    if response.status_code != 200:
        raise TransportError(f"provider returned {response.status_code}")
    try:
        text = response.json()["text"]
    except (ValueError, KeyError) as exc:
        raise BadResponse(f"completion document is unparseable: {exc}") from exc
    if not isinstance(text, str):
        raise BadResponse("completion text is not a string")
    return text


def build_transport(endpoint: str) -> Transport:
    """Build the transport for an endpoint. Mock scripts keep their own
    state, so one transport instance belongs to one provider."""
    if endpoint.startswith("mock:"):
        script = endpoint[len("mock:"):]
        if script == "echo":
            return _EchoTransport()
        if script.startswith("fail-n:"):
            return _FailNTransport(int(script.split(":", 1)[1]))
        if script.startswith("delay:"):
            return _DelayTransport(float(script.split(":", 1)[1]))
        if script == "throttle":
            return _ThrottleTransport()
        if script == "bad-response":
            return _BadResponseTransport()
        raise ValueError(f"unknown mock script {script!r}")
    if endpoint.startswith(("http://", "https://")):
        return _http_transport
    raise ValueError(f"unsupported provider endpoint {endpoint!r}")


def provider_client_complete(
    endpoint: str,
    envelope: PromptEnvelope,
    timeout: float = DEFAULT_TIMEOUT_SECONDS,
    clock: Clock | None = None,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
) -> str:
    """One-shot completion against an endpoint, outside any registry.

    Stateful mock scripts (fail-n) reset on every call here; persistent
    script state lives in ProviderRegistry.
    """
    profile = ProviderProfile(
        provider_id="adhoc",
        window_tokens=max(envelope.total_estimated_tokens + max_output_tokens, 1),
        priority=0,
        endpoint=endpoint,
        timeout=timeout,
    )
    transport = build_transport(endpoint)
    return transport(envelope, profile, clock or SystemClock(), max_output_tokens)


class ProviderRegistry:
    """Priority-ordered providers with shared limiter and health state.

    Also keeps a decision trace: selection, quota admits, failovers.
    With a fixed clock and fixed scripts the trace is reproducible
    byte-for-byte, which the test suite leans on.
    """

    def __init__(self, profiles: Iterable[ProviderProfile], clock: Clock | None = None) -> None:
        ordered = sorted(profiles, key=lambda p: p.priority)
        if not ordered:
            raise ValueError("registry needs at least one provider")
        ids = [p.provider_id for p in ordered]
        if len(set(ids)) != len(ids):
            raise ValueError("provider ids must be unique")
        priorities = [p.priority for p in ordered]
        if len(set(priorities)) != len(priorities):
            raise ValueError("provider priorities must be strictly ordered")
        self._profiles = tuple(ordered)
        self._limiters = {p.provider_id: _ProviderLimiter(p) for p in ordered}
        self._health = {p.provider_id: _ProviderHealth() for p in ordered}
        self._transports = {p.provider_id: build_transport(p.endpoint) for p in ordered}
        self.clock: Clock = clock or SystemClock()
        self.trace: list[str] = []

    def by_priority(self) -> tuple[ProviderProfile, ...]:
        return self._profiles

    def get(self, provider_id: str) -> ProviderProfile:
        for profile in self._profiles:
            if profile.provider_id == provider_id:
                return profile
        raise KeyError(provider_id)

    def is_healthy(self, provider_id: str, now: float | None = None) -> bool:
        now = self.clock.now() if now is None else now
        return self._health[provider_id].is_healthy(now)

    def mark_failure(self, provider_id: str, now: float | None = None) -> None:
        now = self.clock.now() if now is None else now
        self._health[provider_id].mark_failure(now)

    def mark_success(self, provider_id: str) -> None:
        self._health[provider_id].mark_success()

    def acquire_slot(self, provider_id: str, tokens: int, now: float | None = None) -> Admit | Defer:
        """Admit records into the sliding windows atomically; Defer leaves
        them untouched and reports the earliest time a slot frees."""
        now = self.clock.now() if now is None else now
        decision = self._limiters[provider_id].admit(tokens, now)
        if isinstance(decision, Admit):
            self.trace.append(f"admit {provider_id} tokens={tokens}")
        else:
            self.trace.append(
                f"defer {provider_id} reason={decision.reason} retry={decision.retry_after:.0f}"
            )
        return decision

    def call(self, provider_id: str, envelope: PromptEnvelope, max_output_tokens: int) -> str:
        transport = self._transports[provider_id]
        profile = self.get(provider_id)
        return transport(envelope, profile, self.clock, max_output_tokens)


def select_provider(needed_tokens: int, registry: ProviderRegistry, now: float | None = None) -> str:
    """Pick the preferred healthy provider whose window fits needed_tokens."""
    now = registry.clock.now() if now is None else now
    healthy = [p for p in registry.by_priority() if registry.is_healthy(p.provider_id, now)]
    if not healthy:
        raise AllUnhealthy("every provider is cooling down")
    for profile in healthy:
        if profile.window_tokens >= needed_tokens:
            registry.trace.append(f"select {profile.provider_id} needed={needed_tokens}")
            return profile.provider_id
    raise NoCapableProvider(
        f"no healthy provider window fits {needed_tokens} tokens"
    )


def complete_with_failover(request: CompletionRequest, registry: ProviderRegistry) -> CompletionResult:
    """Route one completion, failing over down the priority list.

    Failover triggers are transport errors, timeouts, and throttling;
    each marks the provider unhealthy for the cooldown. Quota Defer and
    cooldown skip a provider without benching it further; the router
    never sleeps on a Defer. BadResponse propagates without failover.
    fallback_used reports whether the answering provider differs from
    the highest-priority capable provider that was healthy at dispatch.
    """
    clock = registry.clock
    needed = request.needed_tokens
    ordered = registry.by_priority()
    capable = [p for p in ordered if p.window_tokens >= needed]
    if not capable:
        windows = ", ".join(f"{p.provider_id}={p.window_tokens}" for p in ordered)
        registry.trace.append(f"no-capable needed={needed}")
        raise NoCapableProvider(
            f"request needs {needed} tokens but the largest window is smaller ({windows})"
        )
    causes: list[tuple[str, str]] = [
        (p.provider_id, f"window {p.window_tokens} is smaller than the {needed} tokens needed")
        for p in ordered
        if p.window_tokens < needed
    ]
    entry_time = clock.now()
    preferred = next(
        (p.provider_id for p in capable if registry.is_healthy(p.provider_id, entry_time)),
        capable[0].provider_id,
    )
    for profile in capable:
        provider_id = profile.provider_id
        now = clock.now()
        if not registry.is_healthy(provider_id, now):
            registry.trace.append(f"skip {provider_id} unhealthy")
            causes.append((provider_id, "cooling down after an earlier failure"))
            continue
        decision = registry.acquire_slot(provider_id, needed, now)
        if isinstance(decision, Defer):
            causes.append(
                (provider_id, f"rate limited ({decision.reason}), retry in {decision.retry_after:.0f}s")
            )
            continue
        started = clock.now()
        try:
            text = registry.call(provider_id, request.envelope, request.max_output_tokens)
        except (TransportError, ProviderTimeout, Throttled) as exc:
            registry.mark_failure(provider_id, clock.now())
            registry.trace.append(f"failover {provider_id} {type(exc).__name__}")
            causes.append((provider_id, f"{type(exc).__name__}: {exc}"))
            continue
        registry.mark_success(provider_id)
        latency_ms = max(0, int((clock.now() - started) * 1000))
        registry.trace.append(f"complete {provider_id} needed={needed}")
        return CompletionResult(
            text=text,
            provider_id=provider_id,
            latency_ms=latency_ms,
            fallback_used=provider_id != preferred,
        )
    registry.trace.append("all-failed")
    raise AllProvidersFailed(causes)


def default_profiles() -> tuple[ProviderProfile, ProviderProfile]:
    """The shipped two-tier setup: a large paid cloud window in front of
    an unlimited small local window."""
    return (
        ProviderProfile(
            provider_id="cloud-primary",
            window_tokens=1_048_576,
            priority=0,
            endpoint="mock:echo",
            rpm_limit=2_000,
            tpm_limit=4_000_000,
        ),
        ProviderProfile(
            provider_id="local-fallback",
            window_tokens=8_192,
            priority=1,
            endpoint="mock:echo",
        ),
    )


def free_tier_profile() -> ProviderProfile:
    """Free-tier cloud quota preset used across the limiter tests."""
    return ProviderProfile(
        provider_id="cloud-free-tier",
        window_tokens=1_048_576,
        priority=0,
        endpoint="mock:echo",
        rpm_limit=15,
        tpm_limit=1_000_000,
        rpd_limit=1_500,
    )
