"""HTTP session service: hosts sessions, persists them, streams their events.

Single-process FastAPI app. Mutations on one session are serialized behind a
per-session lock; reads go lock-free against the latest committed state.
Every event is durably appended (write-ahead, via storage hooks) before the
response that reflects it is built.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .agents import ACTION_KINDS, AgentAction, agent_to_dict
from .extraction import ExtractionFailed, extract_world_spec
from .layout import layout_scene, layout_to_dict
from .provider import ProviderConfig, build_provider
from .runtime import (
    EventRecord,
    GateError,
    Session,
    UnknownCharacterError,
    UnknownNodeError,
    advance_turn,
    effective_events,
    event_to_dict,
    pacing_to_dict,
    rewind_to,
    state_hash,
    story_graph_to_dict,
    switch_role,
)
from .storage import SessionStore, UnknownSessionError
from .worldspec import (
    ParseError,
    ValidationError,
    spec_from_dict,
    spec_to_dict,
    validate_world_spec,
)

STREAM_HEARTBEAT_SECONDS = 0.5


class ServiceError(Exception):
    """Maps a domain failure onto the uniform HTTP error body."""

    def __init__(self, status: int, code: str, message: str, detail=None):
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail
        super().__init__(f"{code}: {message}")


@dataclass
class SessionHandle:
    session: Session
    title: str
    created_at: str
    lock: threading.Lock = field(default_factory=threading.Lock)
    subscribers: list[queue.Queue] = field(default_factory=list)


class CreateSessionBody(BaseModel):
    story_text: str | None = None
    world_spec: dict | None = None
    seed: int | None = None


class ActionBody(BaseModel):
    kind: str
    target: str | None = None
    content: str | None = None


class RoleBody(BaseModel):
    character_id: str


class RewindBody(BaseModel):
    node_id: str


def _env_provider(data_dir: Path):
    config = ProviderConfig(
        base_url=os.environ.get("GENLARP_LLM_BASE_URL", ""),
        model_name=os.environ.get("GENLARP_LLM_MODEL", ""),
        api_key_ref="GENLARP_LLM_API_KEY",
        mode=os.environ.get("GENLARP_MODE", "replay"),
    )
    return build_provider(config, transcript_path=data_dir / "transcript.ndjson")


def create_app(
    data_dir: str | Path | None = None,
    provider=None,
    default_seed: int | None = None,
) -> FastAPI:
    data_dir = Path(data_dir or os.environ.get("GENLARP_DATA_DIR", "genlarp_data"))
    data_dir.mkdir(parents=True, exist_ok=True)
    if provider is None:
        provider = _env_provider(data_dir)
    if default_seed is None:
        env_seed = os.environ.get("GENLARP_SEED")
        default_seed = int(env_seed) if env_seed is not None else 0

    app = FastAPI(title="genlarp session service")
    store = SessionStore(data_dir)
    handles: dict[str, SessionHandle] = {}
    registry_lock = threading.Lock()

    # expose internals for integration tests and embedding
    app.state.store = store
    app.state.handles = handles
    app.state.provider = provider

    @app.exception_handler(ServiceError)
    async def service_error_handler(request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    def fanout(handle: SessionHandle):
        """Persist first, then push to stream subscribers."""
        persist = handle.session.on_event

        def on_event(record: EventRecord):
            if persist:
                persist(record)
            for subscriber in list(handle.subscribers):
                subscriber.put(record)

        handle.session.on_event = on_event

    def get_handle(session_id: str) -> SessionHandle:
        with registry_lock:
            handle = handles.get(session_id)
            if handle is not None:
                return handle
            try:
                session = store.load_session(session_id, provider)
                meta = store.load_meta(session_id)
            except UnknownSessionError:
                raise ServiceError(404, "UNKNOWN_SESSION", f"no session {session_id!r}")
            handle = SessionHandle(session=session, title=meta["title"], created_at=meta["created_at"])
            fanout(handle)
            handles[session_id] = handle
            return handle

    def descriptor(session_id: str, handle: SessionHandle) -> dict:
        session = handle.session
        return {
            "session_id": session_id,
            "title": handle.title,
            "created_at": handle.created_at,
            "active_branch": session.story.active_branch,
            "turn": session.turn,
            "controlled_character": session.controlled_character,
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        if (body.story_text is None) == (body.world_spec is None):
            raise ServiceError(
                400, "INVALID_REQUEST", "supply exactly one of story_text or world_spec"
            )
        if body.story_text is not None:
            try:
                result = extract_world_spec(body.story_text, provider)
            except ExtractionFailed as exc:
                raise ServiceError(
                    422,
                    "EXTRACTION_FAILED",
                    "could not extract a valid world from the story",
                    detail=[
                        {"code": v.code, "subject": v.subject, "message": v.message}
                        for v in exc.violations
                    ],
                )
            world = result.spec
        else:
            try:
                world = spec_from_dict(body.world_spec)
            except ParseError as exc:
                raise ServiceError(422, "PARSE_ERROR", str(exc))
            violations = validate_world_spec(world)
            if violations:
                raise ServiceError(
                    422,
                    "VALIDATION_ERROR",
                    "world spec is invalid",
                    detail=[
                        {"code": v.code, "subject": v.subject, "message": v.message}
                        for v in violations
                    ],
                )
        seed = body.seed if body.seed is not None else default_seed
        session = Session(world, seed=seed, provider=provider)
        session_id = uuid.uuid4().hex[:12]
        created_at = datetime.now(timezone.utc).isoformat()
        store.create(session, session_id, title=world.title, created_at=created_at)
        handle = SessionHandle(session=session, title=world.title, created_at=created_at)
        fanout(handle)
        with registry_lock:
            handles[session_id] = handle
        return descriptor(session_id, handle)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        handle = get_handle(session_id)
        return {**descriptor(session_id, handle), "pacing": pacing_to_dict(handle.session.pacing)}

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        handle = get_handle(session_id)
        session = handle.session
        controlled = session.controlled_character
        world = spec_to_dict(session.world)
        for character in world["characters"]:
            if character["id"] != controlled:
                character.pop("secret", None)
        agents = {}
        for character_id, state in sorted(session.agents.items()):
            full = agent_to_dict(state)
            view = {
                "character_id": full["character_id"],
                "location_id": full["location_id"],
                "affect": full["affect"],
                "suspended": full["suspended"],
            }
            if character_id == controlled:
                view.update(
                    beliefs=full["beliefs"], goals=full["goals"], memory=full["memory"]
                )
            agents[character_id] = view
        return {
            "session_id": session_id,
            "turn": session.turn,
            "active_branch": session.story.active_branch,
            "controlled_character": controlled,
            "state_hash": state_hash(session),
            "world": world,
            "agents": agents,
            "pacing": pacing_to_dict(session.pacing),
        }

    @app.post("/sessions/{session_id}/actions")
    def post_action(session_id: str, body: ActionBody):
        handle = get_handle(session_id)
        if body.kind not in ACTION_KINDS:
            raise ServiceError(
                400, "INVALID_ACTION", f"unknown action kind {body.kind!r}",
                detail={"allowed": list(ACTION_KINDS)},
            )
        try:
            action = AgentAction(kind=body.kind, target=body.target, content=body.content)
        except ValueError as exc:
            raise ServiceError(400, "INVALID_ACTION", str(exc))
        with handle.lock:
            try:
                events = advance_turn(handle.session, action)
            except GateError as exc:
                raise ServiceError(
                    409, "ACTION_BLOCKED", "action rejected by the gate",
                    detail={"reason": exc.reason},
                )
            return {
                "events": [event_to_dict(e) for e in events],
                "turn": handle.session.turn,
                "state_hash": state_hash(handle.session),
            }

    @app.post("/sessions/{session_id}/role")
    def post_role(session_id: str, body: RoleBody):
        handle = get_handle(session_id)
        with handle.lock:
            try:
                switch_role(handle.session, body.character_id)
            except UnknownCharacterError:
                raise ServiceError(
                    404, "UNKNOWN_CHARACTER", f"no character {body.character_id!r}"
                )
        return descriptor(session_id, handle)

    @app.post("/sessions/{session_id}/rewind")
    def post_rewind(session_id: str, body: RewindBody):
        handle = get_handle(session_id)
        with handle.lock:
            try:
                new_branch = rewind_to(handle.session, body.node_id)
            except UnknownNodeError:
                raise ServiceError(404, "UNKNOWN_NODE", f"no story node {body.node_id!r}")
        return {"new_branch_id": new_branch}

    @app.get("/sessions/{session_id}/graph")
    def get_graph(session_id: str):
        handle = get_handle(session_id)
        return story_graph_to_dict(handle.session.story)

    @app.get("/sessions/{session_id}/events")
    def get_events(session_id: str, branch: int | None = None, since_seq: int = -1):
        handle = get_handle(session_id)
        session = handle.session
        branch_id = session.story.active_branch if branch is None else branch
        if branch_id not in session.story.branches:
            raise ServiceError(404, "UNKNOWN_BRANCH", f"no branch {branch_id}")
        events = [e for e in effective_events(session, branch_id) if e.seq > since_seq]
        return {
            "branch": branch_id,
            "events": [event_to_dict(e) for e in events],
            "last_seq": events[-1].seq if events else since_seq,
        }

    @app.get("/sessions/{session_id}/layout")
    def get_layout(session_id: str):
        handle = get_handle(session_id)
        layout = layout_scene(handle.session.world.locations)
        if layout is None:
            raise ServiceError(
                409, "LAYOUT_UNSAT", "location adjacency admits no grid placement"
            )
        return layout_to_dict(layout)

    @app.get("/sessions/{session_id}/stream")
    def get_stream(session_id: str):
        handle = get_handle(session_id)
        subscriber: queue.Queue = queue.Queue()
        handle.subscribers.append(subscriber)

        def lines():
            try:
                while True:
                    try:
                        record = subscriber.get(timeout=STREAM_HEARTBEAT_SECONDS)
                    except queue.Empty:
                        yield "\n"  # keep-alive; consumers skip blank lines
                        continue
                    yield json.dumps(event_to_dict(record), sort_keys=True) + "\n"
            finally:
                if subscriber in handle.subscribers:
                    handle.subscribers.remove(subscriber)

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    return app
