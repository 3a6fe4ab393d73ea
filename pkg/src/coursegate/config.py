"""Service configuration: YAML file, validation, environment overrides.

Secrets (LMS token, admin token, pseudonym salt) can be supplied via
DCCI_LMS_TOKEN, DCCI_ADMIN_TOKEN, and DCCI_SALT instead of the file;
DCCI_LISTEN overrides the listen address. Validation errors name the
offending field path, e.g. "providers[0].window_tokens".
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .analytics import DEFAULT_SESSION_TIMEOUT_MINUTES
from .knowledge import LMS_SOURCE_KINDS, SOURCE_KINDS, KnowledgeBaseConfig
from .lms import CoursePageRef
from .providers import ProviderProfile, default_profiles

ENV_LISTEN = "DCCI_LISTEN"
ENV_LMS_TOKEN = "DCCI_LMS_TOKEN"
ENV_ADMIN_TOKEN = "DCCI_ADMIN_TOKEN"
ENV_SALT = "DCCI_SALT"

DEFAULT_LISTEN = "127.0.0.1:8080"


class ConfigError(Exception):
    def __init__(self, field_path: str, message: str) -> None:
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass(frozen=True)
class LmsSettings:
    """LMS connection details; with mock=True the service runs its own
    in-process platform and these credentials are ignored."""

    base_url: str = ""
    api_token: str = ""
    mock: bool = False

    def __repr__(self) -> str:  # keep the token out of logs
        return f"LmsSettings(base_url={self.base_url!r}, api_token='***', mock={self.mock!r})"


@dataclass(frozen=True)
class ServiceConfig:
    listen_host: str
    listen_port: int
    pseudonym_salt: str
    admin_token: str
    lms: LmsSettings
    knowledge_bases: tuple[KnowledgeBaseConfig, ...]
    providers: tuple[ProviderProfile, ...]
    session_timeout_minutes: float = DEFAULT_SESSION_TIMEOUT_MINUTES
    store_path: str | None = None
    search_fixtures: Any = None
    launch_public_key: str | None = None  # hex Ed25519 key; unused in mock mode

    def __repr__(self) -> str:  # keep the secrets out of logs
        return (
            f"ServiceConfig(listen={self.listen_host}:{self.listen_port}, "
            f"kbs={len(self.knowledge_bases)}, providers={len(self.providers)}, "
            "pseudonym_salt='***', admin_token='***')"
        )


def _parse_listen(value: Any) -> tuple[str, int]:
    if not isinstance(value, str) or ":" not in value:
        raise ConfigError("listen", f"expected host:port, got {value!r}")
    host, _, port_text = value.rpartition(":")
    if not host:
        raise ConfigError("listen", f"expected host:port, got {value!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise ConfigError("listen", f"port is not an integer: {port_text!r}") from None
    if not 0 < port < 65536:
        raise ConfigError("listen", f"port out of range: {port}")
    return host, port


def _require_str(data: dict, key: str, path: str) -> str:
    value = data.get(key)
    if not isinstance(value, str) or not value.strip():
        raise ConfigError(path, "required non-empty string")
    return value


def _build_kb(entry: Any, path: str) -> KnowledgeBaseConfig:
    if not isinstance(entry, dict):
        raise ConfigError(path, "expected a mapping")
    kb_id = _require_str(entry, "kb_id", f"{path}.kb_id")
    display_name = _require_str(entry, "display_name", f"{path}.display_name")
    source_kind = _require_str(entry, "source_kind", f"{path}.source_kind")
    if source_kind not in SOURCE_KINDS:
        raise ConfigError(f"{path}.source_kind", f"must be one of {sorted(SOURCE_KINDS)}")
    page_ref = None
    if source_kind in LMS_SOURCE_KINDS:
        course_id = _require_str(entry, "course_id", f"{path}.course_id")
        page_slug = _require_str(entry, "page_slug", f"{path}.page_slug")
        try:
            page_ref = CoursePageRef(course_id=course_id, page_slug=page_slug)
        except ValueError as exc:
            raise ConfigError(f"{path}.page_slug", str(exc)) from None
    elif "course_id" in entry or "page_slug" in entry:
        raise ConfigError(f"{path}.course_id", "web_search sources take no page reference")
    cache_ttl = entry.get("cache_ttl", 0.0)
    if not isinstance(cache_ttl, (int, float)) or isinstance(cache_ttl, bool) or cache_ttl < 0:
        raise ConfigError(f"{path}.cache_ttl", f"must be a non-negative number, got {cache_ttl!r}")
    template_id = entry.get("template_id") or ("web" if source_kind == "web_search" else "grounded")
    try:
        return KnowledgeBaseConfig(
            kb_id=kb_id,
            display_name=display_name,
            source_kind=source_kind,
            page_ref=page_ref,
            template_id=template_id,
            cache_ttl=float(cache_ttl),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _opt_int(entry: dict, key: str, path: str) -> int | None:
    value = entry.get(key)
    if value is None:
        return None
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise ConfigError(f"{path}.{key}", f"must be a positive integer, got {value!r}")
    return value


def _build_provider(entry: Any, path: str) -> ProviderProfile:
    if not isinstance(entry, dict):
        raise ConfigError(path, "expected a mapping")
    provider_id = _require_str(entry, "provider_id", f"{path}.provider_id")
    endpoint = _require_str(entry, "endpoint", f"{path}.endpoint")
    window = entry.get("window_tokens")
    if not isinstance(window, int) or isinstance(window, bool) or window <= 0:
        raise ConfigError(f"{path}.window_tokens", f"must be a positive integer, got {window!r}")
    priority = entry.get("priority")
    if not isinstance(priority, int) or isinstance(priority, bool) or priority < 0:
        raise ConfigError(f"{path}.priority", f"must be a non-negative integer, got {priority!r}")
    timeout = entry.get("timeout", 30.0)
    if not isinstance(timeout, (int, float)) or isinstance(timeout, bool) or timeout <= 0:
        raise ConfigError(f"{path}.timeout", f"must be a positive number, got {timeout!r}")
    try:
        return ProviderProfile(
            provider_id=provider_id,
            window_tokens=window,
            priority=priority,
            endpoint=endpoint,
            rpm_limit=_opt_int(entry, "rpm_limit", path),
            tpm_limit=_opt_int(entry, "tpm_limit", path),
            rpd_limit=_opt_int(entry, "rpd_limit", path),
            timeout=float(timeout),
        )
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def build_config(data: Any, env: dict[str, str] | None = None) -> ServiceConfig:
    """Validate raw config data and apply environment overrides."""
    env = os.environ if env is None else env
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")

    listen_value = env.get(ENV_LISTEN) or data.get("listen", DEFAULT_LISTEN)
    host, port = _parse_listen(listen_value)

    salt = env.get(ENV_SALT) or data.get("pseudonym_salt")
    if not isinstance(salt, str) or not salt:
        raise ConfigError("pseudonym_salt", "required non-empty secret")

    admin_token = env.get(ENV_ADMIN_TOKEN) or data.get("admin_token")
    if not isinstance(admin_token, str) or not admin_token:
        raise ConfigError("admin_token", "required non-empty secret")

    timeout_minutes = data.get("session_timeout_minutes", DEFAULT_SESSION_TIMEOUT_MINUTES)
    if not isinstance(timeout_minutes, (int, float)) or isinstance(timeout_minutes, bool) or timeout_minutes <= 0:
        raise ConfigError("session_timeout_minutes", f"must be a positive number, got {timeout_minutes!r}")

    lms_raw = data.get("lms", {})
    if not isinstance(lms_raw, dict):
        raise ConfigError("lms", "expected a mapping")
    mock = bool(lms_raw.get("mock", False))
    base_url = lms_raw.get("base_url", "")
    api_token = env.get(ENV_LMS_TOKEN) or lms_raw.get("api_token", "")
    if not mock:
        if not isinstance(base_url, str) or not base_url.startswith(("http://", "https://")):
            raise ConfigError("lms.base_url", "required absolute http(s) URL (or set lms.mock: true)")
        if not isinstance(api_token, str) or not api_token:
            raise ConfigError("lms.api_token", "required (file or DCCI_LMS_TOKEN)")
    lms = LmsSettings(base_url=str(base_url), api_token=str(api_token), mock=mock)

    kb_raw = data.get("knowledge_bases")
    if not isinstance(kb_raw, list) or not kb_raw:
        raise ConfigError("knowledge_bases", "at least one knowledge base is required")
    kbs = tuple(_build_kb(entry, f"knowledge_bases[{i}]") for i, entry in enumerate(kb_raw))
    seen = set()
    for i, kb in enumerate(kbs):
        if kb.kb_id in seen:
            raise ConfigError(f"knowledge_bases[{i}].kb_id", f"duplicate kb_id {kb.kb_id!r}")
        seen.add(kb.kb_id)

    providers_raw = data.get("providers")
    if not isinstance(providers_raw, list) or not providers_raw:
        raise ConfigError("providers", "at least one provider is required")
    providers = tuple(
        _build_provider(entry, f"providers[{i}]") for i, entry in enumerate(providers_raw)
    )

    store_path = data.get("store_path")
    if store_path is not None and (not isinstance(store_path, str) or not store_path):
        raise ConfigError("store_path", f"must be a non-empty path, got {store_path!r}")

    launch_key = data.get("launch_public_key")
    if launch_key is not None:
        if not isinstance(launch_key, str):
            raise ConfigError("launch_public_key", "must be a hex string")
        try:
            raw = bytes.fromhex(launch_key)
        except ValueError:
            raise ConfigError("launch_public_key", "must be hex-encoded") from None
        if len(raw) != 32:
            raise ConfigError("launch_public_key", f"expected 32 bytes, got {len(raw)}")
    if not mock and launch_key is None:
        raise ConfigError("launch_public_key", "required unless lms.mock is true")

    return ServiceConfig(
        listen_host=host,
        listen_port=port,
        pseudonym_salt=salt,
        admin_token=admin_token,
        lms=lms,
        knowledge_bases=kbs,
        providers=providers,
        session_timeout_minutes=float(timeout_minutes),
        store_path=store_path,
        search_fixtures=data.get("search_fixtures"),
        launch_public_key=launch_key,
    )


def load_config(path: str | Path, env: dict[str, str] | None = None) -> ServiceConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML in {path}: {exc}") from exc
    return build_config(data, env=env)


def default_knowledge_bases(course_id: str = "101") -> list[dict]:
    """The four stock knowledge bases, as raw config entries."""
    return [
        {
            "kb_id": "general-info",
            "display_name": "General Course Information",
            "source_kind": "lms_page",
            "course_id": course_id,
            "page_slug": "general-course-information",
        },
        {
            "kb_id": "tms-manual",
            "display_name": "Test Management System Manual",
            "source_kind": "lms_page",
            "course_id": course_id,
            "page_slug": "tms-user-manual",
        },
        {
            "kb_id": "weekly-topic",
            "display_name": "Weekly Topic",
            "source_kind": "curriculum_navigator",
            "course_id": course_id,
            "page_slug": "curriculum-navigator",
        },
        {
            "kb_id": "internet-wizard",
            "display_name": "Internet Wizard",
            "source_kind": "web_search",
        },
    ]


def default_config(mock: bool = True) -> ServiceConfig:
    """A runnable demo configuration: mock LMS, echo providers."""
    data = {
        "listen": DEFAULT_LISTEN,
        "pseudonym_salt": "demo-salt-change-me",
        "admin_token": "demo-admin-token",
        "lms": {"mock": mock},
        "knowledge_bases": default_knowledge_bases(),
        "providers": [
            {
                "provider_id": p.provider_id,
                "window_tokens": p.window_tokens,
                "priority": p.priority,
                "endpoint": p.endpoint,
                "rpm_limit": p.rpm_limit,
                "tpm_limit": p.tpm_limit,
                "rpd_limit": p.rpd_limit,
                "timeout": p.timeout,
            }
            for p in default_profiles()
        ],
    }
    # env=None so DCCI_* overrides work for the demo too
    return build_config(data, env=None)
