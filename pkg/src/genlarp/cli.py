"""Command-line entry points: create, validate, play, replay, layout, serve.

Every subcommand runs against the same session core the HTTP service hosts.
With mode=replay (the default) nothing touches the network: extraction and
agent decisions are answered from the transcript file, and missing entries
degrade agent decisions to the observe fallback, which keeps `replay`
deterministic end to end.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .agents import ACTION_KINDS, AgentAction, AgentConfig, render_event_text
from .extraction import ExtractionFailed, extract_world_spec
from .layout import GridTooSmall, layout_scene, layout_to_dict
from .provider import MODES, ProviderConfig, ProviderError, build_provider
from .runtime import (
    SYSTEM_ACTOR,
    GateError,
    PacingConfig,
    Session,
    UnknownCharacterError,
    UnknownNodeError,
    advance_turn,
    observed_event,
    rewind_to,
    state_hash,
    switch_role,
)
from .storage import SessionStore, StorageError, UnknownSessionError
from .worldspec import ParseError, decode_world_spec, validate_world_spec


class DomainError(Exception):
    """Anything that should end the process with exit code 1."""


@dataclass
class CliConfig:
    data_dir: Path
    mode: str
    seed: int | None
    transcript_path: Path
    output_format: str  # "text" or "json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genlarp", description=__doc__.splitlines()[0])
    parser.add_argument("--data-dir", default=None, help="session storage root")
    parser.add_argument("--mode", default=None, choices=MODES, help="provider mode")
    parser.add_argument("--transcript", default=None, help="provider transcript path")
    parser.add_argument("--json", action="store_true", help="emit one JSON document")

    sub = parser.add_subparsers(dest="command", required=True)

    new = sub.add_parser("new", help="create a session from a story file")
    source = new.add_mutually_exclusive_group(required=True)
    source.add_argument("--story", help="file with the story text to extract from")
    source.add_argument("--spec", help="file with an already structured world spec")
    new.add_argument("--seed", type=int, default=None)

    validate = sub.add_parser("validate", help="validate a world spec file")
    validate.add_argument("specfile")

    play = sub.add_parser("play", help="interactive line-mode session loop")
    play.add_argument("--session", required=True)

    replay = sub.add_parser("replay", help="re-drive a session's log and print the state hash")
    replay.add_argument("--session", required=True)
    replay.add_argument("--transcript", dest="replay_transcript", default=None)

    layout = sub.add_parser("layout", help="print the tile layout for a spec file")
    layout.add_argument("specfile")
    layout.add_argument("--grid", type=_parse_grid, default=None, metavar="WxH")

    serve = sub.add_parser("serve", help="run the HTTP session service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    return parser


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        width, height = text.lower().split("x")
        return (int(width), int(height))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from exc


def resolve_config(args: argparse.Namespace) -> CliConfig:
    data_dir = Path(args.data_dir or os.environ.get("GENLARP_DATA_DIR", "genlarp_data"))
    mode = args.mode or os.environ.get("GENLARP_MODE", "replay")
    transcript = getattr(args, "replay_transcript", None) or args.transcript
    transcript_path = Path(transcript) if transcript else data_dir / "transcript.ndjson"
    env_seed = os.environ.get("GENLARP_SEED")
    seed = getattr(args, "seed", None)
    if seed is None and env_seed is not None:
        seed = int(env_seed)
    return CliConfig(
        data_dir=data_dir,
        mode=mode,
        seed=seed,
        transcript_path=transcript_path,
        output_format="json" if args.json else "text",
    )


def make_provider(config: CliConfig):
    provider_config = ProviderConfig(
        base_url=os.environ.get("GENLARP_LLM_BASE_URL", ""),
        model_name=os.environ.get("GENLARP_LLM_MODEL", ""),
        api_key_ref="GENLARP_LLM_API_KEY",
        mode=config.mode,
    )
    return build_provider(provider_config, transcript_path=config.transcript_path)


def emit(config: CliConfig, document: dict, text_lines: list[str]) -> None:
    """One JSON document in json mode; human lines otherwise."""
    if config.output_format == "json":
        print(json.dumps(document, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


# ---------------------------------------------------------------------------
# subcommands


def _load_spec_file(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc}")
    try:
        return decode_world_spec(text)
    except ParseError as exc:
        raise DomainError(f"spec does not parse: {exc}")


def cmd_new(config: CliConfig, args: argparse.Namespace) -> int:
    provider = make_provider(config)
    if args.story:
        try:
            story_text = Path(args.story).read_text(encoding="utf-8")
        except OSError as exc:
            raise DomainError(f"cannot read {args.story}: {exc}")
        try:
            world = extract_world_spec(story_text, provider).spec
        except ExtractionFailed as exc:
            raise DomainError(f"extraction failed after {exc.attempts} attempts")
    else:
        world = _load_spec_file(args.spec)
        violations = validate_world_spec(world)
        if violations:
            raise DomainError(
                "spec invalid: " + "; ".join(f"{v.code}[{v.subject}]" for v in violations)
            )
    seed = config.seed if config.seed is not None else 0
    session = Session(world, seed=seed, provider=provider)
    session_id = uuid.uuid4().hex[:12]
    store = SessionStore(config.data_dir)
    created_at = datetime.now(timezone.utc).isoformat()
    store.create(session, session_id, title=world.title, created_at=created_at)
    descriptor = {
        "session_id": session_id,
        "title": world.title,
        "seed": seed,
        "turn": session.turn,
        "active_branch": session.story.active_branch,
        "controlled_character": session.controlled_character,
    }
    emit(config, descriptor, [f"{key}: {value}" for key, value in descriptor.items()])
    return 0


def cmd_validate(config: CliConfig, args: argparse.Namespace) -> int:
    world = _load_spec_file(args.specfile)
    violations = validate_world_spec(world)
    document = {
        "violations": [
            {"code": v.code, "subject": v.subject, "message": v.message} for v in violations
        ]
    }
    lines = [f"{v.code} {v.subject}: {v.message}" for v in violations]
    if violations:
        emit(config, document, lines)
        return 1
    if config.output_format == "json":
        emit(config, document, [])
    return 0


def _parse_action_line(line: str) -> AgentAction | None:
    tokens = line.split()
    if not tokens:
        return None
    kind = tokens[0]
    if kind not in ACTION_KINDS:
        raise DomainError(f"unknown action {kind!r}; kinds: {', '.join(ACTION_KINDS)}")
    target = tokens[1] if len(tokens) > 1 else None
    content = " ".join(tokens[2:]) if len(tokens) > 2 else None
    return AgentAction(kind=kind, target=target, content=content)


def _scene_lines(session: Session) -> list[str]:
    state = session.agents[session.controlled_character]
    location = session.world.location(state.location_id)
    present = sorted(
        cid for cid, agent in session.agents.items() if agent.location_id == state.location_id
    )
    return [
        f"-- turn {session.turn} | {session.controlled_character} in {location.name}"
        f" | present: {', '.join(present)}",
    ]


def cmd_play(config: CliConfig, args: argparse.Namespace) -> int:
    store = SessionStore(config.data_dir)
    try:
        session = store.load_session(args.session, make_provider(config))
    except UnknownSessionError:
        raise DomainError(f"unknown session {args.session!r}")
    quiet = config.output_format == "json"

    def say(line: str):
        if not quiet:
            print(line)

    for line in _scene_lines(session):
        say(line)
    say("type: <kind> [target] [content...], 'switch <character>', 'rewind <node>', 'quit'")
    for raw in sys.stdin:
        line = raw.strip()
        if not line:
            continue
        if line in ("quit", "exit"):
            break
        try:
            if line.startswith("switch "):
                switch_role(session, line.split(None, 1)[1])
                say(f"now controlling {session.controlled_character}")
                continue
            if line.startswith("rewind "):
                branch = rewind_to(session, line.split(None, 1)[1])
                say(f"forked branch {branch}")
                continue
            action = _parse_action_line(line)
            if action is None:
                continue
            events = advance_turn(session, action)
        except GateError as exc:
            say(f"[blocked] {exc.reason}")
            continue
        except (DomainError, UnknownCharacterError, UnknownNodeError, ValueError) as exc:
            say(f"[error] {exc}")
            continue
        for event in events:
            if event.actor == SYSTEM_ACTOR:
                say(f"  * {event.kind} {json.dumps(event.payload, sort_keys=True)}")
            else:
                say(f"  {render_event_text(observed_event(event))}")
        for line_ in _scene_lines(session):
            say(line_)
    document = {
        "session_id": args.session,
        "turn": session.turn,
        "state_hash": state_hash(session),
    }
    emit(config, document, [f"state hash: {document['state_hash']}"])
    return 0


def cmd_replay(config: CliConfig, args: argparse.Namespace) -> int:
    """Re-drive the logged commands through a fresh engine; print the hash.

    User actions, role switches, and rewinds are read from the persisted
    logs in global order and re-executed; everything else (NPC decisions,
    derived events, pacing) is regenerated by the engine, so the printed
    hash certifies deterministic reproduction, not just file contents.
    """
    store = SessionStore(config.data_dir)
    try:
        meta = store.load_meta(args.session)
        world = store.load_world(args.session)
    except UnknownSessionError:
        raise DomainError(f"unknown session {args.session!r}")

    recorded = []
    for branch_id in sorted(meta["story"]["branches"], key=int):
        recorded.extend(store.read_branch_events(args.session, int(branch_id)))
    recorded.sort(key=lambda e: e.seq)

    session = Session(
        world,
        seed=meta["seed"],
        provider=make_provider(config),
        agent_config=AgentConfig(**meta["agent_config"]),
        pacing_config=PacingConfig(**meta["pacing_config"]),
        controlled_character=meta["initial_controlled_character"],
    )
    for event in recorded:
        if event.kind == "ROLE_SWITCH":
            switch_role(session, event.payload["to"])
        elif event.kind == "REWIND_MARK":
            rewind_to(session, event.payload["source_node"])
        elif event.actor != SYSTEM_ACTOR and "path" not in event.payload:
            action = AgentAction(
                kind=event.kind,
                target=event.payload.get("target"),
                content=event.payload.get("content"),
            )
            advance_turn(session, action)
    final_hash = state_hash(session)
    emit(
        config,
        {"session_id": args.session, "state_hash": final_hash, "turn": session.turn},
        [final_hash],
    )
    return 0


def cmd_layout(config: CliConfig, args: argparse.Namespace) -> int:
    world = _load_spec_file(args.specfile)
    try:
        layout = layout_scene(world.locations, args.grid)
    except GridTooSmall as exc:
        raise DomainError(str(exc))
    if layout is None:
        emit(config, {"satisfiable": False}, ["UNSAT"])
        return 1
    emit(config, layout_to_dict(layout), [json.dumps(layout_to_dict(layout), sort_keys=True)])
    return 0


def cmd_serve(config: CliConfig, args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(data_dir=config.data_dir, provider=make_provider(config))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


COMMANDS = {
    "new": cmd_new,
    "validate": cmd_validate,
    "play": cmd_play,
    "replay": cmd_replay,
    "layout": cmd_layout,
    "serve": cmd_serve,
}


def cmd_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    config = resolve_config(args)
    try:
        return COMMANDS[args.command](config, args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StorageError, ProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cmd_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
