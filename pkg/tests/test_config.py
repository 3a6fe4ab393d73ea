import pytest

from coursegate.config import (
    ConfigError,
    build_config,
    default_config,
    default_knowledge_bases,
    load_config,
)


def minimal_data(**overrides):
    data = {
        "listen": "127.0.0.1:8080",
        "pseudonym_salt": "s3cret",
        "admin_token": "admin-1",
        "lms": {"mock": True},
        "knowledge_bases": default_knowledge_bases(),
        "providers": [
            {
                "provider_id": "p0",
                "endpoint": "mock:echo",
                "window_tokens": 8192,
                "priority": 0,
            }
        ],
    }
    data.update(overrides)
    return data


def test_default_config_is_complete():
    config = default_config(mock=True)
    assert config.lms.mock is True
    assert len(config.knowledge_bases) == 4
    assert len(config.providers) == 2
    kinds = {kb.source_kind for kb in config.knowledge_bases}
    assert kinds == {"lms_page", "curriculum_navigator", "web_search"}
    assert config.providers[0].priority < config.providers[1].priority


def test_build_config_from_mapping():
    config = build_config(minimal_data())
    assert config.listen_host == "127.0.0.1"
    assert config.listen_port == 8080
    assert config.pseudonym_salt == "s3cret"
    assert [kb.kb_id for kb in config.knowledge_bases] == [
        "general-info",
        "tms-manual",
        "weekly-topic",
        "internet-wizard",
    ]
    # web_search KBs default to the web template, the rest to grounded
    templates = {kb.kb_id: kb.template_id for kb in config.knowledge_bases}
    assert templates["internet-wizard"] == "web"
    assert templates["general-info"] == "grounded"


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d.pop("pseudonym_salt"), "pseudonym_salt"),
        (lambda d: d.update(pseudonym_salt=""), "pseudonym_salt"),
        (lambda d: d.pop("admin_token"), "admin_token"),
        (lambda d: d.update(listen="no-port-here"), "listen"),
        (lambda d: d.update(listen="host:notaport"), "listen"),
        (lambda d: d.update(listen="host:70000"), "listen"),
        (lambda d: d.update(session_timeout_minutes=-5), "session_timeout_minutes"),
        (lambda d: d.update(knowledge_bases=[]), "knowledge_bases"),
        (lambda d: d.update(providers=[]), "providers"),
        (lambda d: d.update(store_path=""), "store_path"),
    ],
)
def test_top_level_field_errors(mutate, field):
    data = minimal_data()
    mutate(data)
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == field


def test_provider_field_errors_point_into_the_list():
    data = minimal_data()
    data["providers"].append(
        {
            "provider_id": "p1",
            "endpoint": "mock:echo",
            "window_tokens": 0,
            "priority": 1,
        }
    )
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "providers[1].window_tokens"


def test_provider_limit_fields_validated():
    data = minimal_data()
    data["providers"][0]["rpm_limit"] = -3
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "providers[0].rpm_limit"


def test_kb_field_errors_point_into_the_list():
    data = minimal_data()
    data["knowledge_bases"][1]["source_kind"] = "nonsense"
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "knowledge_bases[1].source_kind"


def test_kb_page_slug_required_for_lms_sources():
    data = minimal_data()
    del data["knowledge_bases"][0]["page_slug"]
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "knowledge_bases[0].page_slug"


def test_duplicate_kb_ids_rejected():
    data = minimal_data()
    data["knowledge_bases"][2]["kb_id"] = data["knowledge_bases"][0]["kb_id"]
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "knowledge_bases[2].kb_id"
    assert "general-info" in str(exc_info.value)


def test_web_search_kb_must_not_carry_a_page():
    data = minimal_data()
    data["knowledge_bases"][3]["page_slug"] = "wizard-page"
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "knowledge_bases[3].course_id"


def test_real_lms_requires_url_token_and_launch_key():
    data = minimal_data(lms={"mock": False})
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "lms.base_url"

    data["lms"]["base_url"] = "https://lms.example.edu"
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "lms.api_token"

    data["lms"]["api_token"] = "tok"
    with pytest.raises(ConfigError) as exc_info:
        build_config(data)
    assert exc_info.value.field == "launch_public_key"

    data["launch_public_key"] = "zz" * 32  # not hex
    with pytest.raises(ConfigError):
        build_config(data)
    data["launch_public_key"] = "ab" * 16  # wrong length
    with pytest.raises(ConfigError):
        build_config(data)

    data["launch_public_key"] = "ab" * 32
    config = build_config(data)
    assert config.launch_public_key == "ab" * 32
    assert config.lms.api_token == "tok"


def test_env_overrides_beat_file_values():
    env = {
        "DCCI_LISTEN": "0.0.0.0:9000",
        "DCCI_SALT": "env-salt",
        "DCCI_ADMIN_TOKEN": "env-admin",
        "DCCI_LMS_TOKEN": "env-lms-token",
    }
    data = minimal_data(lms={"mock": False, "base_url": "https://lms.example.edu"})
    data["launch_public_key"] = "cd" * 32
    config = build_config(data, env=env)
    assert config.listen_host == "0.0.0.0"
    assert config.listen_port == 9000
    assert config.pseudonym_salt == "env-salt"
    assert config.admin_token == "env-admin"
    assert config.lms.api_token == "env-lms-token"


def test_env_overrides_apply_to_demo_config(monkeypatch):
    monkeypatch.setenv("DCCI_LISTEN", "127.0.0.1:8765")
    config = default_config(mock=True)
    assert (config.listen_host, config.listen_port) == ("127.0.0.1", 8765)


def test_empty_env_changes_nothing():
    config = build_config(minimal_data(), env={})
    assert config.pseudonym_salt == "s3cret"


def test_load_config_yaml(tmp_path):
    path = tmp_path / "gateway.yaml"
    path.write_text(
        "listen: 127.0.0.1:8123\n"
        "pseudonym_salt: s\n"
        "admin_token: a\n"
        "lms:\n"
        "  mock: true\n"
        "knowledge_bases:\n"
        "  - kb_id: w\n"
        "    display_name: Wizard\n"
        "    source_kind: web_search\n"
        "providers:\n"
        "  - provider_id: p0\n"
        "    endpoint: mock:echo\n"
        "    window_tokens: 4096\n"
        "    priority: 0\n"
    )
    config = load_config(path, env={})
    assert config.listen_port == 8123
    assert config.knowledge_bases[0].template_id == "web"
    assert config.providers[0].window_tokens == 4096


def test_load_config_rejects_bad_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("listen: [unclosed\n")
    with pytest.raises(ConfigError) as exc_info:
        load_config(path)
    assert exc_info.value.field == "config"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_secrets_never_appear_in_reprs():
    config = default_config(mock=True)
    for text in (repr(config), str(config), repr(config.lms)):
        assert config.pseudonym_salt not in text
        assert config.admin_token not in text
