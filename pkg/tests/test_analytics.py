import json
import random

import pytest

from coursegate.analytics import (
    AlreadyClosed,
    AnalyticsService,
    AppendLogStore,
    InMemoryStore,
    MissingSalt,
    OutOfRange,
    StoreError,
    UnknownKb,
    UnknownSession,
    UnknownTurn,
    export_jsonl,
    import_jsonl,
    pseudonymize,
)
from coursegate.clock import MockClock

from table_fixtures import REFERENCE_ROWS, counts_to_ratings, synthesize_counts

KBS = ("general-info", "tms-manual", "weekly-topic", "internet-wizard")


@pytest.fixture
def service(mock_clock):
    return AnalyticsService(InMemoryStore(), clock=mock_clock, known_kbs=KBS)


def add_turn(service, session_id, kb_id="general-info", rating=None, query="q", response="r"):
    turn_id = service.record_turn(
        session_id=session_id,
        kb_id=kb_id,
        query=query,
        response=response,
        provider_id="cloud-primary",
        fallback_used=False,
    )
    if rating is not None:
        service.rate_turn(turn_id, rating)
    return turn_id


# Sessions -------------------------------------------------------------------


def test_session_lifecycle(service, mock_clock):
    session_id = service.open_session("pseud-1")
    mock_clock.advance(600)
    service.close_session(session_id)
    doc = service.store.get("sessions", session_id)
    assert doc["ended_at"] - doc["started_at"] == pytest.approx(600)
    with pytest.raises(AlreadyClosed):
        service.close_session(session_id)
    with pytest.raises(UnknownSession):
        service.close_session("nope")


def test_idle_sweep_stamps_last_activity_as_end(service, mock_clock):
    session_id = service.open_session("pseud-1")
    mock_clock.advance(120)
    add_turn(service, session_id)
    activity_time = mock_clock.now()
    mock_clock.advance(30 * 60)
    closed = service.sweep_idle_sessions()
    assert closed == [session_id]
    doc = service.store.get("sessions", session_id)
    assert doc["ended_at"] == activity_time


def test_sweep_spares_active_sessions(service, mock_clock):
    active = service.open_session("pseud-1")
    idle = service.open_session("pseud-2")
    mock_clock.advance(29 * 60)
    add_turn(service, active)
    mock_clock.advance(60)
    assert service.sweep_idle_sessions() == [idle]
    assert service.store.get("sessions", active)["ended_at"] is None


# Turns and ratings ------------------------------------------------------------


def test_turn_record_carries_all_fields(service, mock_clock):
    session_id = service.open_session("pseud-1")
    turn_id = add_turn(service, session_id, kb_id="weekly-topic", query="what now", response="this")
    doc = service.store.get("turns", turn_id)
    assert doc["session_id"] == session_id
    assert doc["kb_id"] == "weekly-topic"
    assert doc["query"] == "what now"
    assert doc["response"] == "this"
    assert doc["provider_id"] == "cloud-primary"
    assert doc["fallback_used"] is False
    assert doc["rating"] is None
    assert doc["created_at"] == mock_clock.now()
    assert doc["latency_ms"] == 0


def test_turn_requires_open_session(service, mock_clock):
    session_id = service.open_session("pseud-1")
    service.close_session(session_id)
    with pytest.raises(UnknownSession):
        add_turn(service, session_id)
    with pytest.raises(UnknownSession):
        add_turn(service, "missing")


def test_turn_requires_known_kb(service):
    session_id = service.open_session("pseud-1")
    with pytest.raises(UnknownKb):
        add_turn(service, session_id, kb_id="not-registered")


def test_rating_bounds(service):
    session_id = service.open_session("pseud-1")
    turn_id = add_turn(service, session_id)
    for bad in (0, 6, -1, 2.5, "4", True):
        with pytest.raises(OutOfRange):
            service.rate_turn(turn_id, bad)
    with pytest.raises(UnknownTurn):
        service.rate_turn("missing", 3)
    service.rate_turn(turn_id, 4)
    assert service.store.get("turns", turn_id)["rating"] == 4


def test_rerate_overwrites(service):
    session_id = service.open_session("pseud-1")
    turn_id = add_turn(service, session_id, rating=4)
    service.rate_turn(turn_id, 5)
    assert service.store.get("turns", turn_id)["rating"] == 5


def test_same_rating_twice_is_byte_identical_on_disk(tmp_path, mock_clock):
    path = tmp_path / "turns.log"
    store = AppendLogStore(path)
    service = AnalyticsService(store, clock=mock_clock, known_kbs=KBS)
    session_id = service.open_session("pseud-1")
    turn_id = add_turn(service, session_id, rating=4)
    before = path.read_bytes()
    service.rate_turn(turn_id, 4)
    assert path.read_bytes() == before
    store.close()


# Aggregation ------------------------------------------------------------------


def test_all_fives(service):
    session_id = service.open_session("p")
    for _ in range(3):
        add_turn(service, session_id, rating=5)
    assert service.aggregate_ratings("general-info").average == 5.0


def test_one_of_each(service):
    session_id = service.open_session("p")
    for rating in (1, 2, 3, 4, 5):
        add_turn(service, session_id, rating=rating)
    agg = service.aggregate_ratings("general-info")
    assert agg.average == 3.0
    assert agg.n == 5
    assert all(pct == 20.0 for pct in agg.percentages.values())


def test_empty_store_has_no_average(service):
    agg = service.aggregate_ratings()
    assert agg.n == 0
    assert agg.average is None
    assert agg.total_average is None


def test_unrated_turns_do_not_count(service):
    session_id = service.open_session("p")
    add_turn(service, session_id)
    add_turn(service, session_id, rating=2)
    agg = service.aggregate_ratings("general-info")
    assert agg.n == 1
    assert agg.average == 2.0


def test_total_average_is_unweighted_across_kbs(service):
    session_id = service.open_session("p")
    # 4 ratings averaging 4.0 on one KB, a single 2 on another: the
    # turn-weighted mean would be 3.6, the per-KB mean is 3.0.
    for rating in (3, 5, 3, 5):
        add_turn(service, session_id, kb_id="general-info", rating=rating)
    add_turn(service, session_id, kb_id="tms-manual", rating=2)
    agg = service.aggregate_ratings("ALL")
    assert agg.total_average == pytest.approx(3.0)
    assert agg.average == pytest.approx(3.6)


def test_aggregate_matches_brute_force_on_random_stores(mock_clock):
    rng = random.Random(555)
    for _ in range(20):
        service = AnalyticsService(InMemoryStore(), clock=mock_clock, known_kbs=KBS)
        session_id = service.open_session("p")
        expected: dict[str, list[int]] = {}
        for _ in range(rng.randrange(1, 120)):
            kb = rng.choice(KBS)
            rating = rng.choice([None, 1, 2, 3, 4, 5])
            add_turn(service, session_id, kb_id=kb, rating=rating)
            if rating is not None:
                expected.setdefault(kb, []).append(rating)
        for kb, ratings in expected.items():
            agg = service.aggregate_ratings(kb)
            assert agg.n == len(ratings)
            assert agg.average == pytest.approx(sum(ratings) / len(ratings))
        everything = [r for ratings in expected.values() for r in ratings]
        if everything:
            assert service.aggregate_ratings().average == pytest.approx(
                sum(everything) / len(everything)
            )


def test_reference_distribution_row_reproduces_target_average(service):
    kb_id, percentages, target = REFERENCE_ROWS[2]  # the most skewed row
    session_id = service.open_session("p")
    counts = synthesize_counts(percentages, target)
    for rating in counts_to_ratings(counts):
        add_turn(service, session_id, kb_id=kb_id, rating=rating)
    agg = service.aggregate_ratings(kb_id)
    assert abs(agg.average - target) <= 0.001
    # Percentages round back to the reference row.
    for star, pct in zip((1, 2, 3, 4, 5), percentages):
        assert agg.percentages[star] == pytest.approx(pct, abs=0.06)


def test_usage_report(service, mock_clock):
    s1 = service.open_session("alice")
    mock_clock.advance(600)
    service.close_session(s1)
    s2 = service.open_session("bob")
    add_turn(service, s2, kb_id="general-info")
    add_turn(service, s2, kb_id="general-info")
    add_turn(service, s2, kb_id="weekly-topic")
    mock_clock.advance(1200)
    service.close_session(s2)
    report = service.usage_report()
    assert report.total_queries == 3
    assert report.per_kb_counts == {"general-info": 2, "weekly-topic": 1}
    assert report.session_count == 2
    assert report.unique_users == 2
    assert report.mean_session_minutes == pytest.approx(15.0)


def test_usage_report_time_range(service, mock_clock):
    s1 = service.open_session("alice")
    add_turn(service, s1)
    boundary = mock_clock.now() + 1
    mock_clock.advance(100)
    add_turn(service, s1)
    report = service.usage_report(start=boundary)
    assert report.total_queries == 1
    assert report.session_count == 0  # session started before the range


def test_usage_report_empty(service):
    report = service.usage_report()
    assert report.total_queries == 0
    assert report.session_count == 0
    assert report.unique_users == 0
    assert report.mean_session_minutes is None


# Pseudonyms -------------------------------------------------------------------


def test_pseudonym_is_deterministic_and_opaque():
    first = pseudonymize("student-42", "salt-a")
    assert first == pseudonymize("student-42", "salt-a")
    assert first != pseudonymize("student-42", "salt-b")
    assert first != pseudonymize("student-43", "salt-a")
    assert len(first) == 16
    assert "student" not in first
    with pytest.raises(MissingSalt):
        pseudonymize("student-42", "")


# Persistence ------------------------------------------------------------------


def test_append_log_round_trip(tmp_path, mock_clock):
    path = tmp_path / "store.log"
    store = AppendLogStore(path)
    service = AnalyticsService(store, clock=mock_clock, known_kbs=KBS)
    session_id = service.open_session("p")
    turn_id = add_turn(service, session_id, rating=3)
    service.rate_turn(turn_id, 5)  # update op must replay too
    service.close_session(session_id)
    store.close()

    reopened = AppendLogStore(path)
    assert reopened.scan("sessions") == store.scan("sessions")
    assert reopened.scan("turns") == store.scan("turns")
    assert reopened.get("turns", turn_id)["rating"] == 5
    reopened.close()


def test_compaction_preserves_state_and_shrinks_log(tmp_path, mock_clock):
    path = tmp_path / "store.log"
    store = AppendLogStore(path)
    service = AnalyticsService(store, clock=mock_clock, known_kbs=KBS)
    session_id = service.open_session("p")
    turn_id = add_turn(service, session_id)
    for rating in (1, 2, 3, 4, 5):
        service.rate_turn(turn_id, rating)
    lines_before = path.read_text().count("\n")
    snapshot = store.scan("turns")
    store.compact()
    assert path.read_text().count("\n") < lines_before
    assert store.scan("turns") == snapshot
    store.close()
    reopened = AppendLogStore(path, read_only=True)
    assert reopened.scan("turns") == snapshot


def test_duplicate_insert_rejected():
    store = InMemoryStore()
    store.insert("c", "id1", {"a": 1})
    with pytest.raises(StoreError):
        store.insert("c", "id1", {"a": 2})
    with pytest.raises(StoreError):
        store.update("c", "missing", {"a": 2})


def test_corrupt_log_line_reported(tmp_path):
    path = tmp_path / "store.log"
    path.write_text('{"op": "insert", "collection": "c", "id": "x", "doc": {}}\nnot json\n')
    with pytest.raises(StoreError) as exc_info:
        AppendLogStore(path)
    assert ":2:" in str(exc_info.value)


# Export / import --------------------------------------------------------------


def test_export_import_round_trip(tmp_path, service, mock_clock):
    s1 = service.open_session("alice")
    t1 = add_turn(service, s1, kb_id="general-info", rating=5)
    mock_clock.advance(60)
    add_turn(service, s1, kb_id="weekly-topic")
    service.close_session(s1)
    s2 = service.open_session("bob")
    add_turn(service, s2, kb_id="tms-manual", rating=2)

    out = tmp_path / "export"
    paths = export_jsonl(service.store, out)
    assert sorted(p.name for p in paths.values()) == [
        "ratings.jsonl",
        "sessions.jsonl",
        "turns.jsonl",
        "users.jsonl",
    ]

    ratings = [json.loads(line) for line in (out / "ratings.jsonl").read_text().splitlines()]
    assert {r["turn_id"] for r in ratings} == {t1} | {
        t["turn_id"] for t in service.store.scan("turns") if t["rating"] == 2
    }
    users = [json.loads(line) for line in (out / "users.jsonl").read_text().splitlines()]
    assert {u["user_pseudonym"] for u in users} == {"alice", "bob"}

    rebuilt = InMemoryStore()
    import_jsonl(out, rebuilt)
    original_turns = sorted(service.store.scan("turns"), key=lambda t: t["turn_id"])
    rebuilt_turns = sorted(rebuilt.scan("turns"), key=lambda t: t["turn_id"])
    assert rebuilt_turns == original_turns
    assert sorted(rebuilt.scan("sessions"), key=lambda s: s["session_id"]) == sorted(
        service.store.scan("sessions"), key=lambda s: s["session_id"]
    )


def test_import_requires_core_collections(tmp_path):
    with pytest.raises(StoreError):
        import_jsonl(tmp_path, InMemoryStore())
