"""HTTP service wiring the pipeline together.

Launch validation opens a session and hands out a bearer token; /chat
runs retrieve -> assemble -> route -> record for one turn; ratings and
reports sit on top of the analytics store. Every turn is persisted
before its HTTP reply goes out, including provider-failure turns,
which are recorded with an error marker in the response field.
"""

from __future__ import annotations

import hmac
import json
import logging
import secrets
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Any

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse, RedirectResponse, Response

from . import websearch
from .analytics import (
    AnalyticsService,
    AppendLogStore,
    InMemoryStore,
    OutOfRange,
    RatingAggregate,
    UnknownSession,
    pseudonymize,
)
from .clock import Clock, SystemClock, utc_date
from .config import ServiceConfig
from .curriculum import NoActiveWeek
from .knowledge import ContextRetriever, KnowledgeRegistry, SourceUnavailable
from .launch import (
    LaunchContext,
    LaunchError,
    MockLaunchPlatform,
    NonceRegistry,
    validate_launch,
)
from .lms import LmsClient, LmsCredentials
from .mock_lms import MockLmsPlatform
from .prompting import EmptyQuery, assemble_prompt
from .providers import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    AllProvidersFailed,
    AllUnhealthy,
    CompletionRequest,
    NoCapableProvider,
    ProviderRegistry,
    complete_with_failover,
    select_provider,
)
from .tokens import BudgetTooSmall, TokenBudget

log = logging.getLogger(__name__)

PROVIDER_ERROR_MARKER = "[provider-error]"
SOURCE_ERROR_MARKER = "[source-unavailable]"

_PLACEHOLDER_UI = """<!doctype html>
<meta charset="utf-8">
<title>Course Assistant</title>
<p>The chat widget bundle is not built. Run <code>npm run build</code> in
frontend/ and restart, or talk to the JSON API directly.</p>
"""


class TurnFailure(Exception):
    """A turn that could not produce a model response; the turn may
    still have been recorded (turn_id set) for later analysis."""

    def __init__(self, status_code: int, detail: str, turn_id: str | None = None) -> None:
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail
        self.turn_id = turn_id


class _DemoSearchBackend:
    """Fixture lookup with a deterministic synthesized fallback, so the
    bundled demo configuration answers any query."""

    def __init__(self, fixtures: dict | str | Path | None = None) -> None:
        self._fixtures = websearch.FixtureSearchBackend(fixtures) if fixtures else None

    def run_query(self, query: str) -> dict:
        if self._fixtures is not None:
            result = self._fixtures.run_query(query)
            if result:
                return result
        return {
            "organic": [
                {
                    "title": f"About {query.strip()}",
                    "snippet": f"Background reading related to {query.strip()}.",
                    "url": "https://example.edu/library",
                }
            ]
        }


@dataclass
class GatewayState:
    config: ServiceConfig
    clock: Clock
    store: Any
    analytics: AnalyticsService
    knowledge: KnowledgeRegistry
    retriever: ContextRetriever
    registry: ProviderRegistry
    lms_client: LmsClient
    launch_key: Ed25519PublicKey
    nonces: NonceRegistry
    admin_token: str
    session_tokens: dict[str, dict] = field(default_factory=dict)
    launch_platform: MockLaunchPlatform | None = None
    mock_lms: MockLmsPlatform | None = None

    def close(self) -> None:
        self.lms_client.close()
        if self.mock_lms is not None:
            self.mock_lms.stop()
        close = getattr(self.store, "close", None)
        if close is not None:
            close()


def demo_curriculum_json(today, course_title: str = "Introduction to Software Testing") -> str:
    """A 14-week schedule placing today inside week 4."""
    topics = [
        "course logistics", "testing terminology", "test design basics",
        "black-box techniques", "white-box techniques", "unit testing",
        "integration testing", "system testing", "regression testing",
        "test management", "defect tracking", "automation frameworks",
        "performance testing", "course review",
    ]
    weeks = []
    first_start = today - timedelta(days=21)
    for index, topic in enumerate(topics, start=1):
        start = first_start + timedelta(days=(index - 1) * 7)
        end = start + timedelta(days=6)
        weeks.append(
            {
                "week": index,
                "title": topic.title(),
                "start_date": start.isoformat(),
                "end_date": end.isoformat(),
                "topics": [topic, f"exercises on {topic}"],
                "body": f"This week covers {topic}. Complete the reading before the lab session.",
            }
        )
    return json.dumps({"course": course_title, "weeks": weeks}, indent=2)


_DEMO_PAGES = {
    "general-course-information": (
        "<h1>General Course Information</h1>"
        "<p>The course runs for 14 weeks with weekly labs.</p>"
        "<p>The midterm exam is held in week 7; the final exam takes place in week 15, "
        "on the first Monday after lectures end.</p>"
        "<p>Grading: 40% exams, 40% lab assignments, 20% project. "
        "Office hours are Tuesdays 14:00-16:00 in room B204.</p>"
    ),
    "tms-user-manual": (
        "<h1>Test Management System Manual</h1>"
        "<p>Log in with your university account. Assignments appear under "
        "<b>My Test Runs</b> once published.</p>"
        "<p>To submit results, open the run, mark each case passed or failed, "
        "attach evidence, and press <b>Finalize</b>. Finalized runs lock after 24 hours.</p>"
        "<p>Export reports from the Reports tab as CSV or PDF.</p>"
    ),
}


def seed_demo_pages(platform: MockLmsPlatform, config: ServiceConfig, clock: Clock) -> None:
    today = utc_date(clock.now())
    for kb in config.knowledge_bases:
        if kb.page_ref is None:
            continue
        if kb.source_kind == "curriculum_navigator":
            body = demo_curriculum_json(today)
        else:
            body = _DEMO_PAGES.get(
                kb.page_ref.page_slug,
                f"<h1>{kb.display_name}</h1><p>Demo content for {kb.page_ref.page_slug}.</p>",
            )
        platform.upsert_page(kb.page_ref.course_id, kb.page_ref.page_slug, body)


def build_state(config: ServiceConfig, clock: Clock | None = None) -> GatewayState:
    clock = clock or SystemClock()
    store = AppendLogStore(config.store_path) if config.store_path else InMemoryStore()

    mock_lms = None
    launch_platform = None
    if config.lms.mock:
        mock_lms = MockLmsPlatform(clock=clock)
        base_url = mock_lms.start()
        seed_demo_pages(mock_lms, config, clock)
        creds = LmsCredentials(base_url=base_url, api_token=mock_lms.api_token)
        lms_client = LmsClient(creds, mock_enabled=True, clock=clock)
        launch_platform = MockLaunchPlatform(clock)
        launch_key = launch_platform.public_key
    else:
        creds = LmsCredentials(base_url=config.lms.base_url, api_token=config.lms.api_token)
        lms_client = LmsClient(creds, mock_enabled=False, clock=clock)
        launch_key = Ed25519PublicKey.from_public_bytes(bytes.fromhex(config.launch_public_key))

    if config.lms.mock:
        backend = _DemoSearchBackend(config.search_fixtures)
    elif config.search_fixtures is not None:
        backend = websearch.FixtureSearchBackend(config.search_fixtures)
    else:
        backend = None

    knowledge = KnowledgeRegistry(config.knowledge_bases)
    retriever = ContextRetriever(lms_client, clock, search_backend=backend)
    registry = ProviderRegistry(config.providers, clock=clock)
    analytics = AnalyticsService(
        store,
        clock=clock,
        known_kbs=knowledge.ids(),
        session_timeout_minutes=config.session_timeout_minutes,
    )
    return GatewayState(
        config=config,
        clock=clock,
        store=store,
        analytics=analytics,
        knowledge=knowledge,
        retriever=retriever,
        registry=registry,
        lms_client=lms_client,
        launch_key=launch_key,
        nonces=NonceRegistry(),
        admin_token=config.admin_token,
        launch_platform=launch_platform,
        mock_lms=mock_lms,
    )


def _budget_window(state: GatewayState) -> int:
    """Assemble against the window of the provider likely to answer;
    if everything is cooling down, use the largest window available."""
    try:
        provider_id = select_provider(0, state.registry)
        return state.registry.get(provider_id).window_tokens
    except AllUnhealthy:
        return max(p.window_tokens for p in state.registry.by_priority())


def execute_turn(
    state: GatewayState,
    session_id: str,
    display_name: str,
    kb_id: str,
    query: str,
) -> dict:
    """Run one chat turn through the full pipeline and persist it.

    Raises TurnFailure for source and provider outages; those turns are
    still recorded with a marker response so failures stay analyzable.
    """
    kb = state.knowledge.get(kb_id)
    if kb is None:
        raise TurnFailure(404, f"unknown knowledge base {kb_id!r}")
    if not query or not query.strip():
        raise EmptyQuery("query is empty")

    def record_marker(marker: str) -> str:
        return state.analytics.record_turn(
            session_id=session_id,
            kb_id=kb_id,
            query=query,
            response=marker,
            provider_id="none",
            fallback_used=False,
        )

    try:
        ctx = state.retriever.retrieve_for_query(kb, query)
    except NoActiveWeek:
        ctx = None
    except SourceUnavailable as exc:
        turn_id = record_marker(SOURCE_ERROR_MARKER)
        raise TurnFailure(503, f"content source unavailable: {exc}", turn_id) from exc

    budget = TokenBudget(
        window_tokens=_budget_window(state),
        reserved_output=DEFAULT_MAX_OUTPUT_TOKENS,
    )
    try:
        envelope = assemble_prompt(ctx, query, display_name, budget, template_id=kb.template_id)
    except BudgetTooSmall as exc:
        turn_id = record_marker(PROVIDER_ERROR_MARKER)
        raise TurnFailure(503, f"no provider window can fit this request: {exc}", turn_id) from exc

    request = CompletionRequest(envelope=envelope, max_output_tokens=DEFAULT_MAX_OUTPUT_TOKENS)
    try:
        result = complete_with_failover(request, state.registry)
    except (AllProvidersFailed, NoCapableProvider) as exc:
        turn_id = record_marker(PROVIDER_ERROR_MARKER)
        raise TurnFailure(503, f"completion failed: {exc}", turn_id) from exc

    turn_id = state.analytics.record_turn(
        session_id=session_id,
        kb_id=kb_id,
        query=query,
        response=result.text,
        provider_id=result.provider_id,
        fallback_used=result.fallback_used,
        latency_ms=result.latency_ms,
    )
    return {
        "turn_id": turn_id,
        "response_text": result.text,
        "kb_id": kb_id,
        "provider_id": result.provider_id,
        "fallback_used": result.fallback_used,
        "context_truncated": bool(envelope.metadata["context_truncated"]),
    }


def _kb_listing(state: GatewayState) -> list[dict]:
    return [
        {"kb_id": kb.kb_id, "display_name": kb.display_name, "source_kind": kb.source_kind}
        for kb in state.knowledge.all()
    ]


def _aggregate_payload(agg: RatingAggregate) -> dict:
    payload = {
        "kb_id": agg.kb_id,
        "counts": {str(value): count for value, count in agg.counts.items()},
        "percentages": {str(value): pct for value, pct in agg.percentages.items()},
        "average": agg.average,
        "n": agg.n,
    }
    if agg.total_average is not None:
        payload["total_average"] = agg.total_average
    return payload


def create_app(state: GatewayState) -> FastAPI:
    app = FastAPI(title="coursegate", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.gateway = state

    def bearer_token(request: Request) -> str | None:
        header = request.headers.get("authorization", "")
        scheme, _, token = header.partition(" ")
        if scheme.lower() != "bearer" or not token:
            return None
        return token.strip()

    def current_session(request: Request) -> dict | None:
        token = bearer_token(request)
        if token is None:
            return None
        return state.session_tokens.get(token)

    async def read_json(request: Request) -> dict | None:
        try:
            body = await request.json()
        except Exception:
            return None
        return body if isinstance(body, dict) else None

    def unauthorized(detail: str = "missing or invalid session token") -> JSONResponse:
        return JSONResponse({"detail": detail}, status_code=401)

    def issue_session(context: LaunchContext) -> str:
        state.analytics.sweep_idle_sessions()
        pseudonym = pseudonymize(context.user_id, state.config.pseudonym_salt)
        session_id = state.analytics.open_session(pseudonym)
        token = secrets.token_urlsafe(24)
        state.session_tokens[token] = {
            "session_id": session_id,
            "display_name": context.display_name,
            "course_id": context.course_id,
        }
        return token

    @app.post("/lti/launch")
    async def lti_launch(request: Request) -> JSONResponse:
        body = await read_json(request)
        signed = (body or {}).get("signed_launch")
        if not isinstance(signed, str) or not signed:
            return JSONResponse({"detail": "signed_launch is required"}, status_code=422)
        try:
            context = validate_launch(signed, state.launch_key, state.clock.now(), state.nonces)
        except LaunchError as exc:
            log.info("rejected launch: %s: %s", type(exc).__name__, exc)
            return JSONResponse(
                {"detail": f"launch rejected: {type(exc).__name__}"}, status_code=401
            )
        token = issue_session(context)
        return JSONResponse(
            {
                "session_token": token,
                "redirect": "/ui",
                "display_name": context.display_name,
                "course_id": context.course_id,
                "knowledge_bases": _kb_listing(state),
            }
        )

    @app.get("/demo/launch")
    async def demo_launch() -> Response:
        # Real deployments launch from the LMS; only the bundled mock
        # platform can sign a launch for itself.
        if state.launch_platform is None:
            return JSONResponse({"detail": "not found"}, status_code=404)
        course_id = next(
            (kb.page_ref.course_id for kb in state.knowledge.all() if kb.page_ref is not None),
            "101",
        )
        signed = state.launch_platform.launch_message("demo-student", "Demo Student", course_id)
        context = validate_launch(signed, state.launch_key, state.clock.now(), state.nonces)
        token = issue_session(context)
        return RedirectResponse(f"/ui#token={token}", status_code=303)

    @app.post("/chat")
    async def chat(request: Request) -> JSONResponse:
        session = current_session(request)
        if session is None:
            return unauthorized()
        body = await read_json(request)
        if body is None:
            return JSONResponse({"detail": "body must be a JSON object"}, status_code=422)
        kb_id = body.get("kb_id")
        query = body.get("query")
        if not isinstance(kb_id, str) or not kb_id:
            return JSONResponse({"detail": "kb_id is required"}, status_code=422)
        if not isinstance(query, str) or not query.strip():
            return JSONResponse({"detail": "query must be a non-empty string"}, status_code=422)
        state.analytics.sweep_idle_sessions()
        try:
            payload = execute_turn(
                state, session["session_id"], session["display_name"], kb_id, query
            )
        except TurnFailure as exc:
            body = {"detail": exc.detail}
            if exc.turn_id is not None:
                body["turn_id"] = exc.turn_id
            return JSONResponse(body, status_code=exc.status_code)
        except EmptyQuery:
            return JSONResponse({"detail": "query must be a non-empty string"}, status_code=422)
        except UnknownSession:
            return unauthorized("session has ended; launch again")
        return JSONResponse(payload)

    @app.post("/turns/{turn_id}/rating")
    async def rate(turn_id: str, request: Request) -> Response:
        session = current_session(request)
        if session is None:
            return unauthorized()
        body = await read_json(request)
        if body is None or "rating" not in body:
            return JSONResponse({"detail": "rating is required"}, status_code=422)
        turn = state.analytics.get_turn(turn_id)
        if turn is None:
            return JSONResponse({"detail": "unknown turn"}, status_code=404)
        if turn["session_id"] != session["session_id"]:
            return JSONResponse({"detail": "turn belongs to another session"}, status_code=403)
        try:
            state.analytics.rate_turn(turn_id, body["rating"])
        except OutOfRange as exc:
            return JSONResponse({"detail": str(exc)}, status_code=422)
        return Response(status_code=204)

    @app.get("/session/bootstrap")
    async def bootstrap(request: Request) -> JSONResponse:
        session = current_session(request)
        if session is None:
            return unauthorized()
        return JSONResponse(
            {
                "display_name": session["display_name"],
                "course_id": session["course_id"],
                "session_id": session["session_id"],
                "knowledge_bases": _kb_listing(state),
            }
        )

    @app.get("/session/turns")
    async def session_turns(request: Request) -> JSONResponse:
        session = current_session(request)
        if session is None:
            return unauthorized()
        turns = state.analytics.session_turns(session["session_id"])
        return JSONResponse(
            {
                "turns": [
                    {
                        "turn_id": t["turn_id"],
                        "kb_id": t["kb_id"],
                        "query": t["query"],
                        "response_text": t["response"],
                        "rating": t["rating"],
                        "fallback_used": t["fallback_used"],
                        "created_at": t["created_at"],
                    }
                    for t in turns
                ]
            }
        )

    @app.get("/admin/report")
    async def admin_report(request: Request) -> JSONResponse:
        token = bearer_token(request)
        if token is None or not hmac.compare_digest(token, state.admin_token):
            return unauthorized("admin token required")
        range_text = request.query_params.get("range", "all")
        start = end = None
        if range_text != "all":
            try:
                start_text, _, end_text = range_text.partition(":")
                start = float(start_text) if start_text else None
                end = float(end_text) if end_text else None
            except ValueError:
                return JSONResponse(
                    {"detail": "range must be 'all' or start:end epoch seconds"},
                    status_code=422,
                )
        usage = state.analytics.usage_report(start, end)
        rows = state.analytics.aggregate_by_kb()
        total = state.analytics.aggregate_ratings("ALL")
        return JSONResponse(
            {
                "usage": {
                    "total_queries": usage.total_queries,
                    "per_kb_counts": usage.per_kb_counts,
                    "session_count": usage.session_count,
                    "unique_users": usage.unique_users,
                    "mean_session_minutes": usage.mean_session_minutes,
                },
                "ratings": {
                    "rows": [_aggregate_payload(row) for row in rows],
                    "total": _aggregate_payload(total),
                },
            }
        )

    @app.get("/healthz")
    async def healthz() -> JSONResponse:
        now = state.clock.now()
        providers = [
            {"provider_id": p.provider_id, "healthy": state.registry.is_healthy(p.provider_id, now)}
            for p in state.registry.by_priority()
        ]
        store_ok = bool(state.store.ping())
        status = "ok" if store_ok and all(p["healthy"] for p in providers) else "degraded"
        return JSONResponse(
            {"status": status, "providers": providers, "store": "ok" if store_ok else "unavailable"},
            status_code=200 if store_ok else 503,
        )

    @app.get("/ui")
    async def ui() -> HTMLResponse:
        # Static shell only; all data access still requires the session
        # token, which the embedder passes to the widget.
        bundle = Path(__file__).resolve().parent.parent.parent / "frontend" / "dist" / "index.html"
        if bundle.exists():
            return HTMLResponse(bundle.read_text(encoding="utf-8"))
        return HTMLResponse(_PLACEHOLDER_UI)

    return app
