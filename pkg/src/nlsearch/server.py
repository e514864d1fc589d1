"""HTTP surface: query, suggest, remediate, and model info.

All endpoints are org-scoped and user-scoped; an unknown user or a
wrong org id is a client error, not an empty result, so that callers
cannot confuse "no access" with "no matches". The app holds its
SearchSystem behind a swappable state object, allowing a live reload
of model or fixture between requests.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .engine import PinError, RemediationError, response_to_dict
from .service import SearchSystem, ServiceState
from .suggest import Suggestion


class QueryRequest(BaseModel):
    q: str
    user: str
    org: str | None = None
    pins: dict[str, str] = Field(default_factory=dict)
    force_keyword: bool = False


class RemediateRequest(BaseModel):
    q: str
    user: str
    org: str | None = None
    pin: tuple[int, str]  # (annotation index, record id)


def _suggestion_to_dict(s: Suggestion) -> dict[str, Any]:
    return {"text": s.text, "score": s.score}


def _decode_pins(raw: dict[str, str]) -> dict[tuple[str, str], str]:
    """Wire pins are {"KIND:text": record_id}."""
    pins: dict[tuple[str, str], str] = {}
    for key, record_id in raw.items():
        kind, sep, text = key.partition(":")
        if not sep or kind not in ("ORG", "PERSON") or not text:
            raise HTTPException(status_code=422, detail=f"bad pin key {key!r}")
        pins[(kind, text.lower())] = record_id
    return pins


def create_app(state: ServiceState, frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="nlsearch", docs_url=None, redoc_url=None)
    app.state.search = state

    def system() -> SearchSystem:
        return state.system

    def check_org(org: str | None) -> None:
        if org is not None and org != system().fixture.org_id:
            raise HTTPException(status_code=400, detail=f"unknown org {org!r}")

    def check_user(user: str) -> None:
        if user not in system().fixture.users:
            raise HTTPException(status_code=400, detail=f"unknown user {user!r}")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/model/info")
    def model_info() -> dict:
        return system().info()

    @app.post("/query")
    def query(req: QueryRequest) -> dict:
        check_org(req.org)
        check_user(req.user)
        pins = _decode_pins(req.pins)
        try:
            resp = system().interpret(
                req.q, req.user, pins=pins, force_keyword=req.force_keyword
            )
        except PinError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return response_to_dict(resp)

    @app.get("/suggest")
    def suggest(
        q: str = Query(default=""),
        user: str = Query(...),
        org: str | None = Query(default=None),
        limit: int | None = Query(default=None, ge=1, le=50),
    ) -> dict:
        check_org(org)
        check_user(user)
        suggestions = system().suggest(q, user, k=limit)
        return {"q": q, "suggestions": [_suggestion_to_dict(s) for s in suggestions]}

    @app.post("/remediate")
    def do_remediate(req: RemediateRequest) -> dict:
        check_org(req.org)
        check_user(req.user)
        index, record_id = req.pin
        try:
            resp = system().remediate(req.q, req.user, index, record_id)
        except (RemediationError, PinError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return response_to_dict(resp)

    if frontend_dir is not None:
        dist = Path(frontend_dir)
        if dist.is_dir():
            app.mount("/", StaticFiles(directory=dist, html=True), name="frontend")

    return app


def build_app(
    fixture_path: str | Path,
    model_path: str | Path,
    suggest_grammar_path: str | Path | None = None,
    frontend_dir: str | Path | None = None,
) -> FastAPI:
    """Convenience constructor used by the CLI and by uvicorn factories."""
    from .grammar import parse_grammar
    from .schema import load_fixture
    from .tagger import load_model

    fixture = load_fixture(fixture_path)
    model = load_model(model_path)
    grammar = parse_grammar(suggest_grammar_path) if suggest_grammar_path else None
    state = ServiceState(SearchSystem(fixture, model, grammar))
    return create_app(state, frontend_dir=frontend_dir)
