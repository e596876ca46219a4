"""Session runtime: turn loop, role switching, snapshots, rewind, pacing.

Everything that happens in a session is an EventRecord appended to a
per-branch log; `apply_event` is the only code path that mutates agent and
world state, and it is shared by live play and log replay, which is what
makes sessions restorable and branches replayable bit-for-bit.

Randomness comes from streams derived from (seed, branch, turn), so there is
no cursor-style rng state to persist: a restored session draws exactly what
an uninterrupted one would have drawn.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace

from .agents import (
    AgentAction,
    AgentConfig,
    BehaviorEntry,
    BehaviorLog,
    GateResult,
    ObservedEvent,
    SceneContext,
    agent_from_dict,
    agent_to_dict,
    behavior_log_from_list,
    behavior_log_to_list,
    decay_arousal,
    decide,
    event_visible_to,
    gate_action,
    graph_from_dict,
    graph_to_dict,
    init_agents,
    perceive,
    render_event_text,
)
from .worldspec import WorldSpec, spec_from_dict, spec_to_dict

SYSTEM_ACTOR = "SYSTEM"
SYSTEM_KINDS = (
    "SCENE_CHANGE",
    "QUEST_UPDATE",
    "ALLIANCE_DISSOLVED",
    "SIDE_QUEST_OFFERED",
    "REWIND_MARK",
    "ROLE_SWITCH",
)
KEY_EVENT_KINDS = frozenset({"betray", "share_secret", "ALLIANCE_DISSOLVED", "QUEST_UPDATE"})
INTERACTIVE_KINDS = frozenset({"say", "give", "cooperate", "betray", "share_secret"})
RECENT_EVENT_WINDOW = 5


class GateError(Exception):
    """User action rejected by the gate; carries the machine-readable reason."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"action blocked: {reason}")


class UnknownCharacterError(Exception):
    pass


class UnknownNodeError(Exception):
    pass


@dataclass(frozen=True)
class EventRecord:
    seq: int  # global, dense across all branches
    turn: int
    branch_id: int
    actor: str  # character id or SYSTEM
    kind: str
    payload: dict
    conflict_relevant: bool


def event_to_dict(event: EventRecord) -> dict:
    return {
        "seq": event.seq,
        "turn": event.turn,
        "branch_id": event.branch_id,
        "actor": event.actor,
        "kind": event.kind,
        "payload": event.payload,
        "conflict_relevant": event.conflict_relevant,
    }


def event_from_dict(data: dict) -> EventRecord:
    return EventRecord(
        seq=data["seq"],
        turn=data["turn"],
        branch_id=data["branch_id"],
        actor=data["actor"],
        kind=data["kind"],
        payload=data["payload"],
        conflict_relevant=data["conflict_relevant"],
    )


@dataclass(frozen=True)
class StoryNode:
    node_id: str
    branch_id: int
    seq: int
    snapshot_ref: str


@dataclass(frozen=True)
class BranchInfo:
    parent_branch: int | None
    fork_seq: int  # -1 for the root branch (opened before any event)
    origin_ref: str  # snapshot the branch starts from


@dataclass
class StoryGraph:
    nodes: list[StoryNode] = field(default_factory=list)
    branches: dict[int, BranchInfo] = field(default_factory=dict)
    active_branch: int = 0

    def node(self, node_id: str) -> StoryNode | None:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        return None


def story_graph_to_dict(story: StoryGraph) -> dict:
    return {
        "nodes": [
            {"node_id": n.node_id, "branch_id": n.branch_id, "seq": n.seq, "snapshot_ref": n.snapshot_ref}
            for n in story.nodes
        ],
        "branches": {
            str(branch_id): {
                "parent_branch": info.parent_branch,
                "fork_seq": info.fork_seq,
                "origin_ref": info.origin_ref,
            }
            for branch_id, info in sorted(story.branches.items())
        },
        "active_branch": story.active_branch,
    }


def story_graph_from_dict(data: dict) -> StoryGraph:
    return StoryGraph(
        nodes=[
            StoryNode(n["node_id"], n["branch_id"], n["seq"], n["snapshot_ref"]) for n in data["nodes"]
        ],
        branches={
            int(branch_id): BranchInfo(info["parent_branch"], info["fork_seq"], info["origin_ref"])
            for branch_id, info in data["branches"].items()
        },
        active_branch=data["active_branch"],
    )


@dataclass
class PacingConfig:
    heat_decay: float = 0.8  # γ
    density_window: int = 10  # W, in turns
    heat_low: float = 0.5
    heat_high: float = 3.0
    step: float = 0.1  # δ
    p_min: float = 0.1
    p_max: float = 0.8
    initial_prob: float = 0.3


@dataclass
class PacingState:
    plot_heat: float = 0.0
    interaction_density: float = 0.0
    npc_initiative_prob: float = 0.3
    side_quest_queue: list[str] = field(default_factory=list)


def pacing_to_dict(pacing: PacingState) -> dict:
    return {
        "plot_heat": pacing.plot_heat,
        "interaction_density": pacing.interaction_density,
        "npc_initiative_prob": pacing.npc_initiative_prob,
        "side_quest_queue": list(pacing.side_quest_queue),
    }


def pacing_from_dict(data: dict) -> PacingState:
    return PacingState(
        plot_heat=data["plot_heat"],
        interaction_density=data["interaction_density"],
        npc_initiative_prob=data["npc_initiative_prob"],
        side_quest_queue=list(data["side_quest_queue"]),
    )


class Session:
    """One running narrative: world, agents, event logs, story graph, pacing."""

    def __init__(
        self,
        world: WorldSpec,
        seed: int,
        provider,
        agent_config: AgentConfig | None = None,
        pacing_config: PacingConfig | None = None,
        controlled_character: str | None = None,
    ):
        self.world = world
        self.seed = seed
        self.provider = provider
        self.agent_config = agent_config or AgentConfig()
        self.pacing_config = pacing_config or PacingConfig()

        self.agents, self.graph = init_agents(world)
        controlled = controlled_character or world.characters[0].id
        if controlled not in self.agents:
            raise UnknownCharacterError(controlled)
        self.controlled_character = controlled
        self.agents[controlled].suspended = True

        self.turn = 0
        self.next_seq = 0
        self.pacing = PacingState(npc_initiative_prob=self.pacing_config.initial_prob)
        self.behavior_log = BehaviorLog()
        self.branch_events: dict[int, list[EventRecord]] = {0: []}
        self.snapshots: dict[str, dict] = {}

        # persistence hooks; no-ops for in-memory sessions
        self.on_event = None  # callable(EventRecord), invoked before apply
        self.on_snapshot = None  # callable(ref, payload)
        self.on_meta = None  # callable(), invoked after structural changes

        genesis = snapshot(self)
        self.story = StoryGraph(branches={0: BranchInfo(None, -1, genesis)}, active_branch=0)


# ---------------------------------------------------------------------------
# state identity


def state_payload(session: Session) -> dict:
    """The restorable portion of session state as plain JSON data.

    Story graph, event logs, and seq counter are excluded: they are
    append-only structures that rewinding never truncates.
    """
    return {
        "world": spec_to_dict(session.world),
        "agents": {cid: agent_to_dict(state) for cid, state in sorted(session.agents.items())},
        "graph": graph_to_dict(session.graph),
        "pacing": pacing_to_dict(session.pacing),
        "controlled_character": session.controlled_character,
        "turn": session.turn,
        "seed": session.seed,
        "behavior_log": behavior_log_to_list(session.behavior_log),
    }


def _canonical(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def state_hash(session: Session) -> str:
    return hashlib.sha256(_canonical(state_payload(session)).encode("utf-8")).hexdigest()


def snapshot(session: Session) -> str:
    """Content-addressed deep copy of the restorable state; returns its ref."""
    payload = state_payload(session)
    ref = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    frozen = json.loads(_canonical(payload))  # detach from live objects
    session.snapshots[ref] = frozen
    if session.on_snapshot:
        session.on_snapshot(ref, frozen)
    return ref


def apply_state_payload(session: Session, payload: dict) -> None:
    session.world = spec_from_dict(payload["world"])
    session.agents = {cid: agent_from_dict(data) for cid, data in payload["agents"].items()}
    session.graph = graph_from_dict(payload["graph"])
    session.pacing = pacing_from_dict(payload["pacing"])
    session.controlled_character = payload["controlled_character"]
    session.turn = payload["turn"]
    session.seed = payload["seed"]
    session.behavior_log = behavior_log_from_list(payload["behavior_log"])


# ---------------------------------------------------------------------------
# event history


def effective_events(session: Session, branch_id: int | None = None) -> list[EventRecord]:
    """Events visible on a branch: inherited prefix of each ancestor plus its own.

    Global seq numbering makes the concatenation seq-ordered.
    """
    branch = session.story.active_branch if branch_id is None else branch_id
    chain: list[tuple[int, int | None]] = []  # (branch, cap_seq)
    cap: int | None = None
    current: int | None = branch
    while current is not None:
        info = session.story.branches[current]
        chain.append((current, cap))
        cap = info.fork_seq
        current = info.parent_branch
    events: list[EventRecord] = []
    for branch_id_, cap_seq in reversed(chain):
        for event in session.branch_events.get(branch_id_, []):
            if cap_seq is None or event.seq <= cap_seq:
                events.append(event)
    return events


def observed_event(event: EventRecord) -> ObservedEvent:
    return ObservedEvent(
        turn=event.turn,
        actor=event.actor,
        kind=event.kind,
        target=event.payload.get("target"),
        content=event.payload.get("content"),
        location=event.payload.get("location"),
    )


def _present_ids(session: Session, location_id: str) -> list[str]:
    return sorted(cid for cid, state in session.agents.items() if state.location_id == location_id)


def conflict_relevant_for(world: WorldSpec, actor: str, kind: str, target: str | None) -> bool:
    if kind in ("betray", "share_secret", "ALLIANCE_DISSOLVED"):
        return True
    if target is None:
        return False
    return any(actor in c.parties and target in c.parties for c in world.conflicts)


def is_key_event(event: EventRecord, spec: WorldSpec) -> bool:
    """Key events anchor story-graph nodes worth snapshotting and revisiting."""
    if event.kind in KEY_EVENT_KINDS:
        return True
    if not event.conflict_relevant:
        return False
    present = set(event.payload.get("present", []))
    actor, target = event.actor, event.payload.get("target")
    for conflict in spec.conflicts:
        if actor in conflict.parties and target in conflict.parties:
            if all(party in present for party in conflict.parties):
                return True
    return False


# ---------------------------------------------------------------------------
# the single mutation path


@dataclass(frozen=True)
class _Draft:
    kind: str
    payload: dict
    conflict_relevant: bool


def apply_event(session: Session, event: EventRecord) -> list[_Draft]:
    """Fold one event into session state; returns derived system events.

    Live play emits the returned drafts as records; replay skips them (they
    are already in the log, and their own application is a no-op).
    """
    if event.actor == SYSTEM_ACTOR:
        if event.kind == "ROLE_SWITCH":
            old, new = event.payload["from"], event.payload["to"]
            session.agents[old].suspended = False
            session.agents[new].suspended = True
            session.controlled_character = new
        # other system kinds record outcomes already applied elsewhere
        return []

    if "path" in event.payload:
        # NPC decision: reconstruct the behavior entry so replay rebuilds the
        # log identically instead of rerunning the decision pipeline.
        session.behavior_log.append(
            BehaviorEntry(
                turn=event.turn,
                character_id=event.actor,
                action=AgentAction(
                    kind=event.kind,
                    target=event.payload.get("target"),
                    content=event.payload.get("content"),
                ),
                rationale_tag=event.payload["path"],
            )
        )

    drafts: list[_Draft] = []
    observed = observed_event(event)
    new_graph = session.graph
    for agent_id in sorted(session.agents):
        state = session.agents[agent_id]
        if state.suspended or not event_visible_to(state, observed):
            continue
        allied_before = {key for key, edge in new_graph.edges.items() if edge.alliance}
        new_state, new_graph = perceive(state, new_graph, observed, session.agent_config)
        session.agents[agent_id] = new_state
        for key in allied_before:
            edge = new_graph.edges.get(key)
            if edge is not None and not edge.alliance:
                drafts.append(
                    _Draft(
                        "ALLIANCE_DISSOLVED",
                        {"from": key[0], "to": key[1], "location": event.payload.get("location")},
                        True,
                    )
                )
    session.graph = new_graph

    if event.kind == "move":
        mover = session.agents[event.actor]
        origin = mover.location_id
        destination = event.payload["target"]
        mover.location_id = destination
        drafts.append(
            _Draft(
                "SCENE_CHANGE",
                {
                    "character": event.actor,
                    "from": origin,
                    "to": destination,
                    "location": destination,
                    "present": _present_ids(session, destination),
                },
                False,
            )
        )
    return drafts


def _emit(session: Session, actor: str, kind: str, payload: dict, conflict_relevant: bool) -> list[EventRecord]:
    """Append one record, persist it, apply it, and emit whatever it derives."""
    record = EventRecord(
        seq=session.next_seq,
        turn=session.turn,
        branch_id=session.story.active_branch,
        actor=actor,
        kind=kind,
        payload=payload,
        conflict_relevant=conflict_relevant,
    )
    session.next_seq += 1
    session.branch_events.setdefault(session.story.active_branch, []).append(record)
    if session.on_event:
        session.on_event(record)
    emitted = [record]
    for draft in apply_event(session, record):
        emitted.extend(_emit(session, SYSTEM_ACTOR, draft.kind, draft.payload, draft.conflict_relevant))
    return emitted


def _action_payload(session: Session, actor: str, action: AgentAction, path: str | None) -> dict:
    location = session.agents[actor].location_id
    payload: dict = {"location": location, "present": _present_ids(session, location)}
    if action.target is not None:
        payload["target"] = action.target
    if action.content is not None:
        payload["content"] = action.content
    if path is not None:
        payload["path"] = path
    return payload


def _emit_action(session: Session, actor: str, action: AgentAction, path: str | None = None) -> list[EventRecord]:
    relevant = conflict_relevant_for(session.world, actor, action.kind, action.target)
    return _emit(session, actor, action.kind, _action_payload(session, actor, action, path), relevant)


# ---------------------------------------------------------------------------
# pacing


def compute_plot_heat(events: list[EventRecord], now_turn: int, heat_decay: float) -> float:
    """Recency-weighted count of conflict-relevant events: Σ γ^(now - turn)."""
    return sum(
        heat_decay ** (now_turn - event.turn)
        for event in events
        if event.conflict_relevant and event.turn <= now_turn
    )


def compute_interaction_density(events: list[EventRecord], now_turn: int, window: int) -> float:
    """Fraction of the last `window` turns containing a character-to-character event."""
    interactive_turns = {
        event.turn
        for event in events
        if event.actor != SYSTEM_ACTOR
        and event.kind in INTERACTIVE_KINDS
        and now_turn - window < event.turn <= now_turn
    }
    return len(interactive_turns) / window


def pacing_adjust(
    pacing: PacingState,
    heat: float,
    density: float,
    config: PacingConfig,
    untriggered_quests: list[str] | None = None,
) -> PacingState:
    """Steer NPC initiative toward the heat band and offer side quests when cold.

    Candidate quest ids come in as a parameter so this stays a pure rule;
    when heat is low the lowest untriggered id is enqueued.
    """
    prob = pacing.npc_initiative_prob
    queue = list(pacing.side_quest_queue)
    if heat < config.heat_low:
        prob += config.step
        candidates = sorted(q for q in (untriggered_quests or []) if q not in queue)
        if candidates:
            queue.append(candidates[0])
    elif heat > config.heat_high:
        prob -= config.step
    prob = min(max(prob, config.p_min), config.p_max)
    return PacingState(
        plot_heat=heat,
        interaction_density=density,
        npc_initiative_prob=prob,
        side_quest_queue=queue,
    )


# ---------------------------------------------------------------------------
# the turn loop


def turn_rng(session: Session) -> random.Random:
    """Stream derived from (seed, branch, turn); restores need no rng cursor."""
    key = f"{session.seed}:{session.story.active_branch}:{session.turn}"
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
    return random.Random(int(digest[:16], 16))


def _scene_for(session: Session, character_id: str) -> SceneContext:
    state = session.agents[character_id]
    character = session.world.character(character_id)
    location = session.world.location(state.location_id)
    present = tuple(
        session.world.character(cid) for cid in _present_ids(session, state.location_id)
    )
    recent: list[str] = []
    for event in reversed(effective_events(session)):
        if event.actor == SYSTEM_ACTOR:
            continue
        observed = observed_event(event)
        if event_visible_to(state, observed):
            recent.append(render_event_text(observed))
            if len(recent) >= RECENT_EVENT_WINDOW:
                break
    return SceneContext(
        turn=session.turn,
        character=character,
        location=location,
        present=present,
        recent_events=tuple(reversed(recent)),
    )


def finish_turn(session: Session, emit_queue_events: bool = True) -> list[EventRecord]:
    """Turn-end bookkeeping: pacing update, turn increment, arousal decay.

    Replay calls this with emit_queue_events=False because SIDE_QUEST_OFFERED
    records are already in the log it is consuming.
    """
    history = effective_events(session)
    heat = compute_plot_heat(history, session.turn, session.pacing_config.heat_decay)
    density = compute_interaction_density(history, session.turn, session.pacing_config.density_window)
    untriggered = [q.id for q in session.world.quests if q.id not in session.pacing.side_quest_queue]
    before = list(session.pacing.side_quest_queue)
    session.pacing = pacing_adjust(session.pacing, heat, density, session.pacing_config, untriggered)

    emitted: list[EventRecord] = []
    if emit_queue_events:
        for quest_id in session.pacing.side_quest_queue[len(before):]:
            emitted.extend(_emit(session, SYSTEM_ACTOR, "SIDE_QUEST_OFFERED", {"quest_id": quest_id}, False))

    session.turn += 1
    for agent_id in sorted(session.agents):
        state = session.agents[agent_id]
        if not state.suspended:
            state.affect = decay_arousal(state.affect)
    return emitted


def advance_turn(session: Session, user_action: AgentAction) -> list[EventRecord]:
    """Run one full turn driven by the controlled character's action.

    Order: gate, user event, NPC initiative round (id order, rng decides
    participation), pacing adjustment, turn increment, then a snapshot node
    if the turn produced a key event. Raises GateError before any mutation
    if the action is blocked.
    """
    actor = session.controlled_character
    state = session.agents[actor]
    location = session.world.location(state.location_id)
    gate: GateResult = gate_action(user_action, state, session.graph, session.agent_config, location=location)
    if not gate.allowed:
        raise GateError(gate.reason or "BLOCKED")

    turn_events = _emit_action(session, actor, user_action)

    rng = turn_rng(session)
    for agent_id in sorted(session.agents):
        agent = session.agents[agent_id]
        if agent.suspended:
            continue
        if rng.random() >= session.pacing.npc_initiative_prob:
            continue
        scene = _scene_for(session, agent_id)
        action, entry = decide(agent, session.graph, scene, session.provider, session.agent_config)
        turn_events.extend(_emit_action(session, agent_id, action, path=entry.rationale_tag))

    turn_events.extend(finish_turn(session))

    if any(is_key_event(event, session.world) for event in turn_events):
        ref = snapshot(session)
        anchor = turn_events[-1].seq
        session.story.nodes.append(
            StoryNode(node_id=f"node-{anchor}", branch_id=session.story.active_branch, seq=anchor, snapshot_ref=ref)
        )
    if session.on_meta:
        session.on_meta()
    return turn_events


def switch_role(session: Session, character_id: str) -> list[EventRecord]:
    """Hand control to another character; both agents keep their full state."""
    if character_id not in session.agents:
        raise UnknownCharacterError(character_id)
    events = _emit(
        session,
        SYSTEM_ACTOR,
        "ROLE_SWITCH",
        {"from": session.controlled_character, "to": character_id},
        False,
    )
    if session.on_meta:
        session.on_meta()
    return events


def rewind_to(session: Session, node_id: str) -> int:
    """Fork a new branch at a story node and restore its snapshot; nothing is deleted."""
    node = session.story.node(node_id)
    if node is None:
        raise UnknownNodeError(node_id)
    new_branch = max(session.story.branches) + 1
    session.story.branches[new_branch] = BranchInfo(
        parent_branch=node.branch_id, fork_seq=node.seq, origin_ref=node.snapshot_ref
    )
    apply_state_payload(session, session.snapshots[node.snapshot_ref])
    session.story.active_branch = new_branch
    session.branch_events[new_branch] = []
    _emit(
        session,
        SYSTEM_ACTOR,
        "REWIND_MARK",
        {"source_node": node_id, "parent_branch": node.branch_id},
        False,
    )
    if session.on_meta:
        session.on_meta()
    return new_branch


def replay_events(session: Session, events: list[EventRecord]) -> None:
    """Re-apply logged events, rerunning turn-end bookkeeping at turn boundaries.

    The caller must already have the full branch logs in session.branch_events
    (turn-filtered pacing lookback reads them); this function only re-applies
    state changes for the given suffix. A turn boundary closes when the turn
    number changes or the log ends; only groups containing an action event
    came from advance_turn, so only those rerun finish_turn.
    """
    group: list[EventRecord] = []

    def close_group():
        if any(e.actor != SYSTEM_ACTOR for e in group):
            finish_turn(session, emit_queue_events=False)
        group.clear()

    for event in events:
        if group and event.turn > group[-1].turn:
            close_group()
        apply_event(session, event)
        group.append(event)
    if group:
        close_group()
