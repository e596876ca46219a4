"""Character agents: explicit internal state with deterministic update rules.

Each character is an agent holding memories, affect, beliefs, goals, and a
relationship graph edge set. All state dynamics (belief updates, trust
learning, memory decay, alliance breakage) are small closed-form rules so a
session replays bit-for-bit; the language model only chooses actions, and
its output is schema-checked and gated before the state machine sees it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .provider import ChatMessage, PromptRequest, ProviderError
from .worldspec import (
    AffectVector,
    CharacterSpec,
    GoalSpec,
    LocationSpec,
    WorldSpec,
)

ACTION_KINDS = ("say", "move", "give", "cooperate", "betray", "share_secret", "observe")
CHARACTER_TARGET_KINDS = frozenset({"say", "give", "cooperate", "betray", "share_secret"})

# fixed perception tables keep agent dynamics deterministic and testable
EVENT_SALIENCE = {
    "betray": 0.9,
    "share_secret": 0.8,
    "cooperate": 0.6,
    "give": 0.5,
    "say": 0.4,
    "move": 0.2,
    "observe": 0.1,
}
EVENT_VALENCE_SHIFT = {"betray": -0.3, "cooperate": 0.2, "give": 0.1}
AROUSAL_SHIFT_KINDS = frozenset({"betray", "cooperate"})
AROUSAL_SHIFT = 0.1
AROUSAL_DECAY = 0.95  # per turn, toward 0

MEMORY_RECENCY_WEIGHT = 0.9  # retrieval rank = salience * 0.9^(now - turn)
BELIEF_PROMPT_FLOOR = 0.5
NEW_PROPOSITION_PRIOR = 0.5
EVENT_EVIDENCE_STRENGTH = 1.0

AGENT_TEMPERATURE = 0.7
AGENT_MAX_OUTPUT_TOKENS = 256

DEFAULT_EDGE_TRUST = 0.5

REASON_TRUST = "TRUST_BELOW_THRESHOLD"
REASON_ADJACENCY = "NOT_ADJACENT"
REASON_PARSE = "PARSE_ERROR"


class RangeError(ValueError):
    """Scalar input outside its documented closed interval."""


class VisibilityError(Exception):
    """Agent asked to perceive an event it cannot see."""


class SuspendedAgentError(Exception):
    """Autonomous operation requested for a human-controlled agent."""


class ActionParseError(Exception):
    """Model output does not decode to one well-formed action."""


def clamp(value: float, low: float, high: float) -> float:
    return low if value < low else high if value > high else value


@dataclass(frozen=True)
class AgentAction:
    kind: str
    target: str | None = None
    content: str | None = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ActionParseError(f"unknown action kind {self.kind!r}")
        if self.kind in CHARACTER_TARGET_KINDS and not self.target:
            raise ActionParseError(f"{self.kind} requires a character target")
        if self.kind == "move" and not self.target:
            raise ActionParseError("move requires a location target")


def serialize_action(action: AgentAction) -> str:
    """Canonical single-line JSON form, the same shape the model is told to emit."""
    payload: dict[str, str] = {"kind": action.kind}
    if action.target is not None:
        payload["target"] = action.target
    if action.content is not None:
        payload["content"] = action.content
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def parse_action(text: str) -> AgentAction:
    """Decode one action from model output; raises ActionParseError otherwise."""
    stripped = text.strip()
    if stripped.startswith("```"):
        lines = [line for line in stripped.splitlines() if not line.startswith("```")]
        stripped = "\n".join(lines).strip()
    try:
        data = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ActionParseError(f"not a JSON object: {exc}") from exc
    if not isinstance(data, dict):
        raise ActionParseError("action must be a JSON object")
    kind = data.get("kind")
    if not isinstance(kind, str):
        raise ActionParseError("action.kind must be a string")
    target = data.get("target")
    if target is not None and not isinstance(target, str):
        raise ActionParseError("action.target must be a string")
    content = data.get("content")
    if content is not None and not isinstance(content, str):
        raise ActionParseError("action.content must be a string")
    return AgentAction(kind=kind, target=target, content=content)


@dataclass
class MemoryEntry:
    turn: int
    content: str
    salience: float  # in [0, 1]
    pinned: bool = False


@dataclass
class AgentState:
    character_id: str
    location_id: str
    affect: AffectVector = field(default_factory=AffectVector)
    beliefs: dict[str, float] = field(default_factory=dict)  # proposition -> credence
    goals: list[GoalSpec] = field(default_factory=list)
    memory: list[MemoryEntry] = field(default_factory=list)
    suspended: bool = False


@dataclass
class RelationshipEdge:
    trust: float = DEFAULT_EDGE_TRUST  # in [0, 1]
    power: float = 0.0  # in [-1, 1]
    dependency: float = 0.0  # in [0, 1]
    alliance: bool = False


@dataclass
class RelationshipGraph:
    edges: dict[tuple[str, str], RelationshipEdge] = field(default_factory=dict)

    def get(self, from_id: str, to_id: str) -> RelationshipEdge | None:
        return self.edges.get((from_id, to_id))

    def trust(self, from_id: str, to_id: str) -> float:
        edge = self.get(from_id, to_id)
        return edge.trust if edge is not None else DEFAULT_EDGE_TRUST

    def with_edge(self, from_id: str, to_id: str, edge: RelationshipEdge) -> RelationshipGraph:
        edges = dict(self.edges)
        edges[(from_id, to_id)] = edge
        return RelationshipGraph(edges=edges)


@dataclass(frozen=True)
class BehaviorEntry:
    turn: int
    character_id: str
    action: AgentAction
    rationale_tag: str  # normal | repair:<reason> | fallback


class BehaviorLog:
    """Append-only action log with non-decreasing turns."""

    def __init__(self, entries: list[BehaviorEntry] | None = None):
        self._entries: list[BehaviorEntry] = []
        for entry in entries or []:
            self.append(entry)

    def append(self, entry: BehaviorEntry) -> None:
        if self._entries and entry.turn < self._entries[-1].turn:
            raise ValueError(
                f"behavior log turns must be non-decreasing: {entry.turn} after {self._entries[-1].turn}"
            )
        self._entries.append(entry)

    @property
    def entries(self) -> tuple[BehaviorEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class ObservedEvent:
    """What an agent can see of one event: the runtime adapts its records to this."""

    turn: int
    actor: str
    kind: str
    target: str | None = None
    content: str | None = None
    location: str | None = None


@dataclass(frozen=True)
class GateResult:
    allowed: bool
    reason: str | None = None


ALLOWED = GateResult(True)


@dataclass(frozen=True)
class SceneContext:
    turn: int
    character: CharacterSpec
    location: LocationSpec
    present: tuple[CharacterSpec, ...] = ()
    recent_events: tuple[str, ...] = ()


@dataclass
class AgentConfig:
    belief_rate: float = 0.4  # α
    trust_rate_up: float = 0.3  # η
    trust_rate_down: float = 0.5  # η⁻
    memory_decay: float = 0.95  # λ
    prune_threshold: float = 0.05  # ε
    secret_trust_threshold: float = 0.6  # τ
    alliance_break_threshold: float = 0.2
    memory_top_k: int = 8


# ---------------------------------------------------------------------------
# state update rules


def init_agents(spec: WorldSpec) -> tuple[dict[str, AgentState], RelationshipGraph]:
    """Build one agent per character and the relationship graph from a valid spec."""
    agents: dict[str, AgentState] = {}
    for character in spec.characters:
        memory = []
        if character.secret:
            memory.append(MemoryEntry(turn=0, content=character.secret, salience=1.0, pinned=True))
        agents[character.id] = AgentState(
            character_id=character.id,
            location_id=character.initial_location or "",
            affect=AffectVector(character.initial_affect.valence, character.initial_affect.arousal),
            beliefs={},
            goals=[GoalSpec(g.description, g.priority) for g in character.goals],
            memory=memory,
        )

    edges: dict[tuple[str, str], RelationshipEdge] = {}
    for rel in spec.relationships:
        edges[(rel.from_id, rel.to_id)] = RelationshipEdge(
            trust=rel.trust, power=rel.power, dependency=rel.dependency, alliance=rel.alliance
        )
    # missing conflict-party pairs get the same defaults template completion uses
    for conflict in spec.conflicts:
        for a in conflict.parties:
            for b in conflict.parties:
                if a != b and (a, b) not in edges:
                    edges[(a, b)] = RelationshipEdge()
    return agents, RelationshipGraph(edges=edges)


def update_belief(credence: float, evidence_strength: float, belief_rate: float) -> float:
    """credence' = (1 - α) * credence + α * s, clamped to [0, 1]."""
    if not (0.0 <= credence <= 1.0):
        raise RangeError(f"credence {credence} outside [0, 1]")
    if not (0.0 <= evidence_strength <= 1.0):
        raise RangeError(f"evidence strength {evidence_strength} outside [0, 1]")
    if not (0.0 < belief_rate <= 1.0):
        raise RangeError(f"belief rate {belief_rate} outside (0, 1]")
    return clamp((1.0 - belief_rate) * credence + belief_rate * evidence_strength, 0.0, 1.0)


def update_trust(trust: float, outcome: str, config: AgentConfig) -> float:
    """Pull trust toward 1 on cooperation and toward 0 on betrayal."""
    if not (0.0 <= trust <= 1.0):
        raise RangeError(f"trust {trust} outside [0, 1]")
    if outcome == "cooperate":
        return clamp((1.0 - config.trust_rate_up) * trust + config.trust_rate_up, 0.0, 1.0)
    if outcome == "betray":
        return clamp((1.0 - config.trust_rate_down) * trust, 0.0, 1.0)
    raise RangeError(f"trust outcome must be cooperate or betray, got {outcome!r}")


def maybe_break_alliance(edge: RelationshipEdge, config: AgentConfig) -> RelationshipEdge:
    """Drop the alliance flag when trust has fallen strictly below the threshold.

    Alliances never re-form here; only an explicit cooperate event that lifts
    trust to at least twice the threshold re-forms one (see perceive), which
    keeps the flag from flickering at the boundary.
    """
    if edge.alliance and edge.trust < config.alliance_break_threshold:
        return replace(edge, alliance=False)
    return edge


def decay_memory(memory: list[MemoryEntry], memory_decay: float, prune_threshold: float) -> list[MemoryEntry]:
    """Multiply unpinned salience by λ and prune what falls below ε."""
    result: list[MemoryEntry] = []
    for entry in memory:
        if entry.pinned:
            result.append(entry)
            continue
        salience = entry.salience * memory_decay
        if salience >= prune_threshold:
            result.append(replace(entry, salience=salience))
    return result


def decay_arousal(affect: AffectVector) -> AffectVector:
    """Per-turn arousal relaxation toward 0; the runtime applies this at turn end."""
    return AffectVector(affect.valence, clamp(affect.arousal * AROUSAL_DECAY, 0.0, 1.0))


_MEMORY_VERBS = {
    "say": "said to",
    "move": "moved to",
    "give": "gave something to",
    "cooperate": "cooperated with",
    "betray": "betrayed",
    "share_secret": "shared a secret with",
    "observe": "observed",
}


def render_event_text(event: ObservedEvent) -> str:
    verb = _MEMORY_VERBS.get(event.kind, event.kind)
    target = event.target or "the scene"
    line = f"{event.actor} {verb} {target}"
    if event.content:
        line += f': "{event.content}"'
    return line


def proposition_for(event: ObservedEvent) -> str:
    return f"{event.actor}_did_{event.kind}_{event.target or 'none'}"


def event_visible_to(state: AgentState, event: ObservedEvent) -> bool:
    return event.location == state.location_id or event.target == state.character_id


def perceive(
    state: AgentState,
    graph: RelationshipGraph,
    event: ObservedEvent,
    config: AgentConfig,
) -> tuple[AgentState, RelationshipGraph]:
    """Fold one visible event into an agent's memory, beliefs, trust, and affect.

    Order: record the memory, update the evidenced belief, adjust trust and
    alliance when this agent is the target of cooperation or betrayal, shift
    affect, then decay memory. Every scalar is clamped to its range.
    """
    if not event_visible_to(state, event):
        raise VisibilityError(
            f"{state.character_id} at {state.location_id} cannot see event at {event.location}"
        )

    memory = list(state.memory)
    memory.append(
        MemoryEntry(
            turn=event.turn,
            content=render_event_text(event),
            salience=EVENT_SALIENCE.get(event.kind, 0.1),
        )
    )

    beliefs = dict(state.beliefs)
    proposition = proposition_for(event)
    prior = beliefs.get(proposition, NEW_PROPOSITION_PRIOR)
    beliefs[proposition] = update_belief(prior, EVENT_EVIDENCE_STRENGTH, config.belief_rate)

    new_graph = graph
    if event.kind in ("cooperate", "betray") and event.target == state.character_id:
        key = (state.character_id, event.actor)
        edge = graph.get(*key) or RelationshipEdge()
        edge = replace(edge, trust=update_trust(edge.trust, event.kind, config))
        if event.kind == "betray":
            edge = maybe_break_alliance(edge, config)
        elif edge.trust >= 2.0 * config.alliance_break_threshold:
            edge = replace(edge, alliance=True)
        new_graph = graph.with_edge(*key, edge)

    valence = clamp(state.affect.valence + EVENT_VALENCE_SHIFT.get(event.kind, 0.0), -1.0, 1.0)
    arousal = state.affect.arousal
    if event.kind in AROUSAL_SHIFT_KINDS:
        arousal = clamp(arousal + AROUSAL_SHIFT, 0.0, 1.0)

    memory = decay_memory(memory, config.memory_decay, config.prune_threshold)

    new_state = replace(
        state,
        affect=AffectVector(valence, arousal),
        beliefs=beliefs,
        memory=memory,
    )
    return new_state, new_graph


# ---------------------------------------------------------------------------
# action gating


def gate_action(
    action: AgentAction,
    actor_state: AgentState,
    graph: RelationshipGraph,
    config: AgentConfig,
    location: LocationSpec | None = None,
) -> GateResult:
    """Trust-gate secrets and adjacency-gate movement; everything else passes.

    The actor's current location carries the adjacency list; without it a
    move is conservatively blocked.
    """
    if action.kind == "share_secret":
        if graph.trust(actor_state.character_id, action.target) < config.secret_trust_threshold:
            return GateResult(False, REASON_TRUST)
        return ALLOWED
    if action.kind == "move":
        if location is None or action.target not in location.adjacent_to:
            return GateResult(False, REASON_ADJACENCY)
        return ALLOWED
    return ALLOWED


# ---------------------------------------------------------------------------
# prompting and decisions


def rank_memories(memory: list[MemoryEntry], now_turn: int, top_k: int) -> list[MemoryEntry]:
    """Top-k retrieval by salience times recency weight, stable on ties."""
    scored = sorted(
        enumerate(memory),
        key=lambda pair: (-pair[1].salience * MEMORY_RECENCY_WEIGHT ** (now_turn - pair[1].turn), pair[0]),
    )
    return [entry for _, entry in scored[:top_k]]


_ACTION_INSTRUCTION = (
    "Reply with exactly one action as a single-line JSON object "
    '{"kind": one of say|move|give|cooperate|betray|share_secret|observe, '
    '"target": character or location id if the kind needs one, '
    '"content": optional short text}. '
    "say, give, cooperate, betray and share_secret need a character target; "
    "move needs an adjacent location id. No prose outside the JSON object."
)


def build_agent_prompt(
    state: AgentState,
    graph: RelationshipGraph,
    scene: SceneContext,
    config: AgentConfig,
) -> PromptRequest:
    """Deterministic decision prompt from the agent's current state and scene."""
    if state.suspended:
        raise SuspendedAgentError(f"{state.character_id} is under human control")

    card = scene.character
    lines = [
        f"You are {card.name} ({card.archetype or 'character'}).",
        card.public_description or "",
        "",
        f"Scene, turn {scene.turn}: {scene.location.name}. {scene.location.description}".rstrip(),
        "Adjacent locations: " + (", ".join(scene.location.adjacent_to) or "none") + ".",
        "Present: " + (", ".join(f"{c.name} ({c.id})" for c in scene.present) or "nobody else") + ".",
    ]

    goals = sorted(state.goals, key=lambda g: -g.priority)
    if goals:
        lines.append("Your goals, most important first:")
        lines += [f"- ({g.priority:.2f}) {g.description}" for g in goals]

    memories = rank_memories(state.memory, scene.turn, config.memory_top_k)
    if memories:
        lines.append("You remember:")
        lines += [f"- turn {m.turn}: {m.content}" for m in memories]

    held = sorted(
        (p, c) for p, c in state.beliefs.items() if c >= BELIEF_PROMPT_FLOOR
    )
    if held:
        lines.append("You believe:")
        lines += [f"- {prop} (credence {credence:.2f})" for prop, credence in held]

    others = [c for c in scene.present if c.id != state.character_id]
    if others:
        lines.append("Your relationships with those present:")
        for other in sorted(others, key=lambda c: c.id):
            edge = graph.get(state.character_id, other.id) or RelationshipEdge()
            status = "allied" if edge.alliance else "not allied"
            lines.append(
                f"- {other.id}: trust {edge.trust:.2f}, power {edge.power:+.2f}, {status}"
            )

    if scene.recent_events:
        lines.append("Recently:")
        lines += [f"- {text}" for text in scene.recent_events]

    system_text = (
        "You play one character in a live role-play scene. Stay in character, "
        "act on your goals and feelings, and never narrate other characters. "
        + _ACTION_INSTRUCTION
    )
    return PromptRequest(
        system_text=system_text,
        messages=(ChatMessage("user", "\n".join(line for line in lines if line != "")),),
        temperature=AGENT_TEMPERATURE,
        max_output_tokens=AGENT_MAX_OUTPUT_TOKENS,
        tag=f"decide:{state.character_id}",
    )


def _repair_request(base: PromptRequest, raw_reply: str, reason: str) -> PromptRequest:
    note = (
        f"Your last reply was rejected ({reason}). "
        "Answer again with exactly one valid single-line JSON action object."
    )
    messages = base.messages + (
        ChatMessage("assistant", raw_reply or "(empty)"),
        ChatMessage("user", note),
    )
    return PromptRequest(
        system_text=base.system_text,
        messages=messages,
        temperature=base.temperature,
        max_output_tokens=base.max_output_tokens,
        tag=base.tag + ":repair",
    )


FALLBACK_ACTION = AgentAction(kind="observe")


def decide(
    state: AgentState,
    graph: RelationshipGraph,
    scene: SceneContext,
    provider,
    config: AgentConfig,
    rng=None,
) -> tuple[AgentAction, BehaviorEntry]:
    """Choose one gated action via the model, with one repair round and a safe fallback.

    The rng parameter is accepted for interface stability but unused: the
    decision path is deterministic given the prompt and the provider. After
    two failed attempts (unparseable or blocked output, or provider errors)
    the agent falls back to observing, so no invalid action ever escapes.
    """
    request = build_agent_prompt(state, graph, scene, config)
    first_reason: str | None = None

    for attempt in range(2):
        try:
            response = provider.complete(request)
        except ProviderError:
            break
        try:
            action = parse_action(response.text)
        except ActionParseError:
            reason = REASON_PARSE
        else:
            gate = gate_action(action, state, graph, config, location=scene.location)
            if gate.allowed:
                tag = "normal" if attempt == 0 else f"repair:{first_reason}"
                return action, BehaviorEntry(scene.turn, state.character_id, action, tag)
            reason = gate.reason or "BLOCKED"
        if attempt == 0:
            first_reason = reason
            request = _repair_request(request, response.text, reason)

    entry = BehaviorEntry(scene.turn, state.character_id, FALLBACK_ACTION, "fallback")
    return FALLBACK_ACTION, entry


# ---------------------------------------------------------------------------
# snapshot serialization


def action_to_dict(action: AgentAction) -> dict:
    data: dict = {"kind": action.kind}
    if action.target is not None:
        data["target"] = action.target
    if action.content is not None:
        data["content"] = action.content
    return data


def action_from_dict(data: dict) -> AgentAction:
    return AgentAction(kind=data["kind"], target=data.get("target"), content=data.get("content"))


def agent_to_dict(state: AgentState) -> dict:
    return {
        "character_id": state.character_id,
        "location_id": state.location_id,
        "affect": {"valence": state.affect.valence, "arousal": state.affect.arousal},
        "beliefs": dict(sorted(state.beliefs.items())),
        "goals": [{"description": g.description, "priority": g.priority} for g in state.goals],
        "memory": [
            {"turn": m.turn, "content": m.content, "salience": m.salience, "pinned": m.pinned}
            for m in state.memory
        ],
        "suspended": state.suspended,
    }


def agent_from_dict(data: dict) -> AgentState:
    return AgentState(
        character_id=data["character_id"],
        location_id=data["location_id"],
        affect=AffectVector(data["affect"]["valence"], data["affect"]["arousal"]),
        beliefs=dict(data["beliefs"]),
        goals=[GoalSpec(g["description"], g["priority"]) for g in data["goals"]],
        memory=[
            MemoryEntry(m["turn"], m["content"], m["salience"], m["pinned"]) for m in data["memory"]
        ],
        suspended=data["suspended"],
    )


def graph_to_dict(graph: RelationshipGraph) -> dict:
    edges = []
    for (from_id, to_id), edge in sorted(graph.edges.items()):
        edges.append(
            {
                "from": from_id,
                "to": to_id,
                "trust": edge.trust,
                "power": edge.power,
                "dependency": edge.dependency,
                "alliance": edge.alliance,
            }
        )
    return {"edges": edges}


def graph_from_dict(data: dict) -> RelationshipGraph:
    edges = {}
    for item in data["edges"]:
        edges[(item["from"], item["to"])] = RelationshipEdge(
            trust=item["trust"],
            power=item["power"],
            dependency=item["dependency"],
            alliance=item["alliance"],
        )
    return RelationshipGraph(edges=edges)


def behavior_log_to_list(log: BehaviorLog) -> list[dict]:
    return [
        {
            "turn": entry.turn,
            "character_id": entry.character_id,
            "action": action_to_dict(entry.action),
            "rationale_tag": entry.rationale_tag,
        }
        for entry in log.entries
    ]


def behavior_log_from_list(items: list[dict]) -> BehaviorLog:
    return BehaviorLog(
        [
            BehaviorEntry(
                item["turn"],
                item["character_id"],
                action_from_dict(item["action"]),
                item["rationale_tag"],
            )
            for item in items
        ]
    )
