"""Operator command line: serve the gateway, replay query logs, render reports.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analytics import AnalyticsService, AppendLogStore, OutOfRange, StoreError
from .clock import MockClock
from .config import ConfigError, build_config, default_knowledge_bases, load_config
from .gateway import TurnFailure, build_state, create_app, execute_turn
from .prompting import EmptyQuery
from .providers import default_profiles
from .reporting import render_rating_csv, render_rating_table, render_usage

log = logging.getLogger(__name__)

REPLAY_STEP_SECONDS = 30.0


class ParseError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coursegate",
        description="Course content gateway: LMS-grounded chat with rating analytics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--config", help="YAML config path (omit for the built-in mock demo)")

    replay = sub.add_parser("replay", help="replay a query log through mock content")
    replay.add_argument("--log", required=True, help="JSON-lines query log")
    replay.add_argument("--fixtures", help="JSON file with page bodies and search results")

    report = sub.add_parser("report", help="render the satisfaction table from a store")
    report.add_argument("--store", required=True, help="append-log store path")
    report.add_argument("--format", choices=("text", "csv"), default="text")
    return parser


def _cmd_serve(args: argparse.Namespace) -> int:
    try:
        if args.config:
            config = load_config(args.config)
        else:
            from .config import default_config

            config = default_config(mock=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    import uvicorn

    state = build_state(config)
    app = create_app(state)
    try:
        uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="info")
    finally:
        state.close()
    return 0


def _load_fixtures(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ParseError(f"cannot read fixtures {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"fixtures {path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"fixtures {path}: top level must be an object")
    return data


def _replay_events(path: str):
    """Yield (line_number, record) for each non-blank log line."""
    try:
        handle = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read log {path}: {exc}") from exc
    with handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError as exc:
                raise ParseError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"line {line_no}: expected an object")
            yield line_no, record


def run_replay(log_path: str, fixtures_path: str | None, out=None) -> None:
    """Drive the full pipeline over a recorded query log and print the
    usage and satisfaction report. Deterministic under the mock clock."""
    out = out or sys.stdout
    fixtures = _load_fixtures(fixtures_path)
    clock = MockClock()
    config = build_config(
        {
            "pseudonym_salt": "replay-salt",
            "admin_token": "replay-admin",
            "lms": {"mock": True},
            "knowledge_bases": default_knowledge_bases(),
            "providers": [
                {
                    "provider_id": p.provider_id,
                    "window_tokens": p.window_tokens,
                    "priority": p.priority,
                    "endpoint": p.endpoint,
                    "rpm_limit": p.rpm_limit,
                    "tpm_limit": p.tpm_limit,
                    "timeout": p.timeout,
                }
                for p in default_profiles()
            ],
            "search_fixtures": fixtures.get("search") or None,
        },
        env={},
    )
    state = build_state(config, clock=clock)
    try:
        pages = fixtures.get("pages", {})
        if not isinstance(pages, dict):
            raise ParseError("fixtures: pages must map course ids to {slug: body}")
        for course_id, slugs in pages.items():
            if not isinstance(slugs, dict):
                raise ParseError(f"fixtures: pages[{course_id!r}] must map slugs to bodies")
            for slug, body in slugs.items():
                state.mock_lms.upsert_page(str(course_id), str(slug), str(body))

        sessions: dict[str, str] = {}

        def session_for(key: str) -> str:
            if key not in sessions:
                sessions[key] = state.analytics.open_session(f"user-{key}")
            return sessions[key]

        for line_no, record in _replay_events(log_path):
            clock.advance(REPLAY_STEP_SECONDS)
            event = record.get("event")
            if event == "open":
                key = record.get("session")
                if not isinstance(key, str) or not key:
                    raise ParseError(f"line {line_no}: open event needs a session key")
                if key in sessions:
                    raise ParseError(f"line {line_no}: session {key!r} is already open")
                sessions[key] = state.analytics.open_session(f"user-{key}")
                continue
            if event == "close":
                key = record.get("session")
                if not isinstance(key, str) or key not in sessions:
                    raise ParseError(f"line {line_no}: close of unknown session {key!r}")
                state.analytics.close_session(sessions.pop(key))
                continue
            if event is not None:
                raise ParseError(f"line {line_no}: unknown event {event!r}")

            key = record.get("session")
            kb_id = record.get("kb_id")
            query = record.get("query")
            if not isinstance(key, str) or not key:
                raise ParseError(f"line {line_no}: turn needs a session key")
            if not isinstance(kb_id, str) or not isinstance(query, str):
                raise ParseError(f"line {line_no}: turn needs kb_id and query strings")
            session_id = session_for(key)
            try:
                result = execute_turn(state, session_id, f"Student {key}", kb_id, query)
            except (TurnFailure, EmptyQuery) as exc:
                raise ParseError(f"line {line_no}: {exc}") from exc
            rating = record.get("rating")
            if rating is not None:
                try:
                    state.analytics.rate_turn(result["turn_id"], rating)
                except OutOfRange as exc:
                    raise ParseError(f"line {line_no}: {exc}") from exc

        for key, session_id in sorted(sessions.items()):
            doc = state.store.get("sessions", session_id)
            state.analytics.close_session(session_id, now=doc["last_activity_at"])

        usage = state.analytics.usage_report()
        rows = state.analytics.aggregate_by_kb()
        total = state.analytics.aggregate_ratings("ALL")
        out.write(render_usage(usage))
        out.write("\n")
        out.write(render_rating_table(rows, total))
    finally:
        state.close()


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        run_replay(args.log, args.fixtures)
    except ParseError as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    try:
        store = AppendLogStore(args.store, read_only=True)
    except StoreError as exc:
        print(f"store error: {exc}", file=sys.stderr)
        return 2
    analytics = AnalyticsService(store)
    rows = analytics.aggregate_by_kb()
    total = analytics.aggregate_ratings("ALL")
    if args.format == "csv":
        sys.stdout.write(render_rating_csv(rows, total))
    else:
        sys.stdout.write(render_rating_table(rows, total))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    level = logging.INFO if args.command == "serve" else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "replay":
        return _cmd_replay(args)
    return _cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
