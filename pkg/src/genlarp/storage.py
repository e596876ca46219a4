"""Durable session storage: hash-chained event logs, snapshots, replayable restore.

Directory layout per session:

    sessions/<id>/world.json             canonical World Spec
    sessions/<id>/meta.json              descriptor, configs, story graph (atomic)
    sessions/<id>/branches/branch-N.ndjson  one chained event per line
    sessions/<id>/snapshots/<ref>.json   content-addressed state payloads

The event logs are the source of truth. Each line carries a rolling hash
over its predecessor so truncation or tampering fails loudly on restore;
meta's turn/next_seq fields are advisory and recomputed by replay.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from pathlib import Path

from .agents import AgentConfig
from .runtime import (
    EventRecord,
    PacingConfig,
    Session,
    apply_state_payload,
    event_from_dict,
    event_to_dict,
    replay_events,
    story_graph_from_dict,
    story_graph_to_dict,
)
from .worldspec import parse_world_spec, serialize_world_spec

CHAIN_SEED = "0" * 64


class StorageError(Exception):
    pass


class SequenceGapError(StorageError):
    pass


class UnknownSessionError(StorageError):
    pass


class CorruptLogError(StorageError):
    pass


def _canonical(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _chain_hash(prev: str, event_data: dict) -> str:
    return hashlib.sha256((prev + _canonical(event_data)).encode("utf-8")).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)


class SessionStore:
    """Filesystem persistence for sessions; wires itself into runtime hooks."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        # (session_id, branch_id) -> (last_seq, last_chain); None = empty log
        self._tails: dict[tuple[str, int], tuple[int, str] | None] = {}
        self._known_branches: dict[str, set[int]] = {}
        self._headers: dict[str, dict] = {}

    # -- paths ------------------------------------------------------------

    def session_dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def _branch_path(self, session_id: str, branch_id: int) -> Path:
        return self.session_dir(session_id) / "branches" / f"branch-{branch_id}.ndjson"

    def _snapshot_path(self, session_id: str, ref: str) -> Path:
        return self.session_dir(session_id) / "snapshots" / f"{ref}.json"

    def exists(self, session_id: str) -> bool:
        return (self.session_dir(session_id) / "meta.json").is_file()

    def list_sessions(self) -> list[str]:
        return sorted(p.name for p in (self.root / "sessions").iterdir() if p.is_dir())

    # -- creation ----------------------------------------------------------

    def create(self, session: Session, session_id: str, title: str, created_at: str) -> None:
        base = self.session_dir(session_id)
        (base / "branches").mkdir(parents=True, exist_ok=True)
        (base / "snapshots").mkdir(parents=True, exist_ok=True)
        _atomic_write(base / "world.json", serialize_world_spec(session.world))
        self._headers[session_id] = {
            "title": title,
            "created_at": created_at,
            "initial_controlled_character": session.controlled_character,
        }
        for ref, payload in session.snapshots.items():
            self.save_snapshot(session_id, ref, payload)
        self._branch_path(session_id, 0).touch()
        self._tails[(session_id, 0)] = None
        self._known_branches[session_id] = set()
        self.save_meta(session_id, session)
        self.wire(session, session_id)

    def wire(self, session: Session, session_id: str) -> None:
        """Attach persistence hooks; events are durable before control returns."""
        session.on_event = lambda record: self._handle_event(session_id, session, record)
        session.on_snapshot = lambda ref, payload: self.save_snapshot(session_id, ref, payload)
        session.on_meta = lambda: self.save_meta(session_id, session)

    # -- writes ------------------------------------------------------------

    def _handle_event(self, session_id: str, session: Session, record: EventRecord) -> None:
        if record.branch_id not in self._known_branches.get(session_id, set()):
            # first event of a new branch: record the branch before its log
            self.save_meta(session_id, session)
        self.persist_event(session_id, record)

    def persist_event(self, session_id: str, record: EventRecord) -> None:
        key = (session_id, record.branch_id)
        if key not in self._tails:
            self._tails[key] = self._load_tail(session_id, record.branch_id)
        tail = self._tails[key]
        if tail is not None and record.seq != tail[0] + 1:
            raise SequenceGapError(
                f"branch {record.branch_id} expected seq {tail[0] + 1}, got {record.seq}"
            )
        prev = tail[1] if tail is not None else CHAIN_SEED
        event_data = event_to_dict(record)
        chain = _chain_hash(prev, event_data)
        line = _canonical({"chain": chain, "event": event_data})
        path = self._branch_path(session_id, record.branch_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")
            handle.flush()
            os.fsync(handle.fileno())
        self._tails[key] = (record.seq, chain)

    def save_meta(self, session_id: str, session: Session) -> None:
        header = self._headers[session_id]
        meta = {
            "session_id": session_id,
            "title": header["title"],
            "created_at": header["created_at"],
            "initial_controlled_character": header["initial_controlled_character"],
            "seed": session.seed,
            "agent_config": dataclasses.asdict(session.agent_config),
            "pacing_config": dataclasses.asdict(session.pacing_config),
            "story": story_graph_to_dict(session.story),
            "controlled_character": session.controlled_character,
            "turn": session.turn,  # advisory; replay recomputes
            "next_seq": session.next_seq,  # advisory; replay recomputes
        }
        _atomic_write(self.session_dir(session_id) / "meta.json", _canonical(meta) + "\n")
        self._known_branches[session_id] = set(session.story.branches)

    def save_snapshot(self, session_id: str, ref: str, payload: dict) -> None:
        path = self._snapshot_path(session_id, ref)
        if path.is_file():
            return  # content-addressed: same ref, same bytes
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, _canonical(payload) + "\n")

    # -- reads -------------------------------------------------------------

    def _load_tail(self, session_id: str, branch_id: int) -> tuple[int, str] | None:
        events, chain = self._read_branch(session_id, branch_id)
        if not events:
            return None
        return (events[-1].seq, chain)

    def _read_branch(self, session_id: str, branch_id: int) -> tuple[list[EventRecord], str]:
        path = self._branch_path(session_id, branch_id)
        if not path.is_file():
            return [], CHAIN_SEED
        raw = path.read_text(encoding="utf-8")
        chain = CHAIN_SEED
        events: list[EventRecord] = []
        lines = raw.split("\n")
        for index, line in enumerate(lines):
            if line == "":
                if index == len(lines) - 1:
                    continue  # normal trailing newline
                raise CorruptLogError(f"{path.name}: blank line {index}")
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptLogError(f"{path.name}: torn or corrupt line {index}") from exc
            event_data = entry.get("event")
            expected = _chain_hash(chain, event_data) if event_data is not None else None
            if expected is None or entry.get("chain") != expected:
                raise CorruptLogError(f"{path.name}: hash chain mismatch at line {index}")
            chain = entry["chain"]
            events.append(event_from_dict(event_data))
        for previous, current in zip(events, events[1:]):
            if current.seq != previous.seq + 1:
                raise CorruptLogError(
                    f"{path.name}: seq gap {previous.seq} -> {current.seq}"
                )
        return events, chain

    def read_branch_events(self, session_id: str, branch_id: int) -> list[EventRecord]:
        if not self.exists(session_id):
            raise UnknownSessionError(session_id)
        events, _ = self._read_branch(session_id, branch_id)
        return events

    def load_world(self, session_id: str):
        if not self.exists(session_id):
            raise UnknownSessionError(session_id)
        text = (self.session_dir(session_id) / "world.json").read_text(encoding="utf-8")
        return parse_world_spec(text)

    def load_meta(self, session_id: str) -> dict:
        if not self.exists(session_id):
            raise UnknownSessionError(session_id)
        raw = (self.session_dir(session_id) / "meta.json").read_text(encoding="utf-8")
        return json.loads(raw)

    def load_session(self, session_id: str, provider) -> Session:
        """Rebuild a session: origin snapshot of the active branch plus replay.

        Every branch is self-contained (its origin snapshot already folds in
        ancestor history), so restore never replays other branches; their
        logs are still loaded because pacing looks back across the fork.
        """
        meta = self.load_meta(session_id)
        world = self.load_world(session_id)
        session = Session(
            world,
            seed=meta["seed"],
            provider=provider,
            agent_config=AgentConfig(**meta["agent_config"]),
            pacing_config=PacingConfig(**meta["pacing_config"]),
            controlled_character=meta["initial_controlled_character"],
        )
        story = story_graph_from_dict(meta["story"])
        branch_events: dict[int, list[EventRecord]] = {}
        for branch_id in story.branches:
            events, chain = self._read_branch(session_id, branch_id)
            branch_events[branch_id] = events
            self._tails[(session_id, branch_id)] = (
                (events[-1].seq, chain) if events else None
            )
        snapshots: dict[str, dict] = {}
        snapshot_dir = self.session_dir(session_id) / "snapshots"
        if snapshot_dir.is_dir():
            for path in snapshot_dir.glob("*.json"):
                snapshots[path.stem] = json.loads(path.read_text(encoding="utf-8"))

        session.story = story
        session.branch_events = branch_events
        session.snapshots = snapshots
        all_seqs = [e.seq for events in branch_events.values() for e in events]
        session.next_seq = max(all_seqs) + 1 if all_seqs else 0

        origin_ref = story.branches[story.active_branch].origin_ref
        if origin_ref not in snapshots:
            raise CorruptLogError(f"missing origin snapshot {origin_ref}")
        apply_state_payload(session, snapshots[origin_ref])
        replay_events(session, branch_events[story.active_branch])

        self._headers[session_id] = {
            "title": meta["title"],
            "created_at": meta["created_at"],
            "initial_controlled_character": meta["initial_controlled_character"],
        }
        self._known_branches[session_id] = set(story.branches)
        self.wire(session, session_id)
        return session
