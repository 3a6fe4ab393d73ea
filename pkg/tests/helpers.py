"""Builders shared across test modules."""

from __future__ import annotations

from coursegate.clock import MockClock
from coursegate.config import build_config, default_knowledge_bases
from coursegate.gateway import build_state


def make_config(
    providers: list[dict] | None = None,
    knowledge_bases: list[dict] | None = None,
    search_fixtures: dict | None = None,
    session_timeout_minutes: float = 30,
    store_path: str | None = None,
    salt: str = "test-salt",
    admin_token: str = "test-admin",
):
    data = {
        "pseudonym_salt": salt,
        "admin_token": admin_token,
        "session_timeout_minutes": session_timeout_minutes,
        "lms": {"mock": True},
        "knowledge_bases": knowledge_bases or default_knowledge_bases(),
        "providers": providers
        or [
            {
                "provider_id": "cloud-primary",
                "window_tokens": 1_048_576,
                "priority": 0,
                "endpoint": "mock:echo",
                "rpm_limit": 2000,
                "tpm_limit": 4_000_000,
            },
            {
                "provider_id": "local-fallback",
                "window_tokens": 8_192,
                "priority": 1,
                "endpoint": "mock:echo",
            },
        ],
        "store_path": store_path,
        "search_fixtures": search_fixtures,
    }
    return build_config(data, env={})


def make_state(clock: MockClock | None = None, **config_kwargs):
    clock = clock or MockClock()
    return build_state(make_config(**config_kwargs), clock=clock)


def launch_headers(client, state, user_id="student-1", display_name="Alice", course_id="101"):
    """Perform a mock launch; returns (auth headers, launch payload)."""
    message = state.launch_platform.launch_message(user_id, display_name, course_id)
    response = client.post("/lti/launch", json={"signed_launch": message})
    assert response.status_code == 200, response.text
    payload = response.json()
    return {"Authorization": f"Bearer {payload['session_token']}"}, payload
