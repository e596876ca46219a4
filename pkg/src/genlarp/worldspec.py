"""World spec data protocol: parse, serialize, validate, complete.

A world spec is the structured narrative document every other part of the
engine consumes: locations, characters, relationships, conflicts, quests.
The wire format is a JSON document with a required ``schema_version`` field;
serialization is canonical (sorted keys, fixed formatting) so golden files
and content hashes stay stable.

Validation never raises on violations: it returns a list of `Violation`
records with machine-readable codes. Template completion fills absent
elements deterministically and never rewrites user-supplied content;
contradictions it cannot resolve (duplicate ids, dangling references,
out-of-range values) raise `CompletionError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

SCHEMA_VERSION = 1

# Violation codes. Kept flat and string-valued so they survive JSON round
# trips and can be quoted verbatim in repair prompts.
DUPLICATE_ID = "DUPLICATE_ID"
UNKNOWN_REFERENCE = "UNKNOWN_REFERENCE"
VALUE_OUT_OF_RANGE = "VALUE_OUT_OF_RANGE"
ADJACENCY_ASYMMETRIC = "ADJACENCY_ASYMMETRIC"
SELF_ADJACENT = "SELF_ADJACENT"
SELF_RELATION = "SELF_RELATION"
DUPLICATE_EDGE = "DUPLICATE_EDGE"
TOO_FEW_PARTIES = "TOO_FEW_PARTIES"
DUPLICATE_PARTY = "DUPLICATE_PARTY"
MIN_LOCATIONS = "MIN_LOCATIONS"
MIN_CHARACTERS = "MIN_CHARACTERS"
MIN_CONFLICTS = "MIN_CONFLICTS"
EMPTY_TITLE = "EMPTY_TITLE"
MISSING_GOALS = "MISSING_GOALS"
UNPLACED_CHARACTER = "UNPLACED_CHARACTER"

# Violations completion can repair by synthesizing absent elements. Anything
# outside this set is a contradiction: fixing it would alter user content.
_COMPLETABLE_CODES = frozenset(
    {
        MIN_LOCATIONS,
        MIN_CHARACTERS,
        MIN_CONFLICTS,
        EMPTY_TITLE,
        MISSING_GOALS,
        UNPLACED_CHARACTER,
        ADJACENCY_ASYMMETRIC,
    }
)

# Characters synthesized when a partial spec has fewer than two; ids are
# skipped if already taken so completion stays collision-free.
_DEFAULT_CHARACTERS = (
    ("protagonist", "The Protagonist", "seeker"),
    ("antagonist", "The Antagonist", "rival"),
    ("bystander", "The Bystander", "witness"),
)

_DEFAULT_LOCATION_ID = "commons"
_DEFAULT_GOAL = "pursue the central conflict"
_DEFAULT_GOAL_PRIORITY = 0.5
_DEFAULT_TRUST = 0.5


class ParseError(Exception):
    """Malformed world spec text (syntax or shape), with position if known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class ValidationError(Exception):
    """Well-formed document that violates spec invariants."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        summary = "; ".join(f"{v.code}[{v.subject}]" for v in violations)
        super().__init__(f"world spec invalid: {summary}")


class CompletionError(Exception):
    """Partial spec contains contradictions template completion cannot fix."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        summary = "; ".join(f"{v.code}[{v.subject}]" for v in violations)
        super().__init__(f"cannot complete contradictory spec: {summary}")


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


@dataclass
class AffectVector:
    valence: float = 0.0  # in [-1, 1]
    arousal: float = 0.0  # in [0, 1]


@dataclass
class GoalSpec:
    description: str
    priority: float  # in [0, 1]


@dataclass
class LocationSpec:
    id: str
    name: str
    description: str = ""
    adjacent_to: list[str] = field(default_factory=list)


@dataclass
class CharacterSpec:
    id: str
    name: str
    archetype: str = ""
    public_description: str = ""
    secret: str | None = None
    goals: list[GoalSpec] = field(default_factory=list)
    initial_location: str | None = None
    initial_affect: AffectVector = field(default_factory=AffectVector)


@dataclass
class RelationshipSpec:
    from_id: str  # serialized as "from"
    to_id: str  # serialized as "to"
    trust: float = _DEFAULT_TRUST  # in [0, 1]
    power: float = 0.0  # in [-1, 1], positive = from dominates
    dependency: float = 0.0  # in [0, 1]
    alliance: bool = False


@dataclass
class ConflictSpec:
    id: str
    description: str
    parties: list[str] = field(default_factory=list)
    stakes: str = ""


@dataclass
class QuestSpec:
    id: str
    description: str
    assigned_to: str = ""
    trigger: str = ""
    resolution: str = ""


@dataclass
class WorldSpec:
    schema_version: int = SCHEMA_VERSION
    title: str = ""
    temporal_cue: str = ""
    locations: list[LocationSpec] = field(default_factory=list)
    characters: list[CharacterSpec] = field(default_factory=list)
    relationships: list[RelationshipSpec] = field(default_factory=list)
    conflicts: list[ConflictSpec] = field(default_factory=list)
    quests: list[QuestSpec] = field(default_factory=list)

    def location(self, loc_id: str) -> LocationSpec | None:
        for loc in self.locations:
            if loc.id == loc_id:
                return loc
        return None

    def character(self, char_id: str) -> CharacterSpec | None:
        for ch in self.characters:
            if ch.id == char_id:
                return ch
        return None


# ---------------------------------------------------------------------------
# dict <-> dataclass conversion


def _is_int(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: object) -> bool:
    return (isinstance(value, (int, float)) and not isinstance(value, bool))


def _req_str(obj: dict, key: str, path: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise ParseError(f"{path}.{key}: expected string")
    return value


def _opt_str(obj: dict, key: str, path: str, default: str = "") -> str:
    value = obj.get(key, default)
    if not isinstance(value, str):
        raise ParseError(f"{path}.{key}: expected string")
    return value


def _opt_float(obj: dict, key: str, path: str, default: float) -> float:
    value = obj.get(key, default)
    if not _is_number(value):
        raise ParseError(f"{path}.{key}: expected number")
    return float(value)


def _opt_bool(obj: dict, key: str, path: str, default: bool = False) -> bool:
    value = obj.get(key, default)
    if not isinstance(value, bool):
        raise ParseError(f"{path}.{key}: expected boolean")
    return value


def _str_list(obj: dict, key: str, path: str) -> list[str]:
    value = obj.get(key, [])
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise ParseError(f"{path}.{key}: expected list of strings")
    return list(value)


def _obj_list(obj: dict, key: str, path: str) -> list[dict]:
    value = obj.get(key, [])
    if not isinstance(value, list) or any(not isinstance(v, dict) for v in value):
        raise ParseError(f"{path}.{key}: expected list of objects")
    return list(value)


def spec_from_dict(data: dict) -> WorldSpec:
    """Build a WorldSpec from a decoded JSON object.

    Shape problems (wrong types, missing required fields) raise ParseError;
    semantic invariants are deliberately not checked here so partial specs
    can be loaded for validation and completion.
    """
    if not isinstance(data, dict):
        raise ParseError("top level: expected JSON object")
    if "schema_version" not in data:
        raise ParseError("top level: missing required field schema_version")
    if not _is_int(data["schema_version"]):
        raise ParseError("schema_version: expected integer")

    locations = []
    for i, raw in enumerate(_obj_list(data, "locations", "top level")):
        path = f"locations[{i}]"
        locations.append(
            LocationSpec(
                id=_req_str(raw, "id", path),
                name=_opt_str(raw, "name", path),
                description=_opt_str(raw, "description", path),
                adjacent_to=_str_list(raw, "adjacent_to", path),
            )
        )

    characters = []
    for i, raw in enumerate(_obj_list(data, "characters", "top level")):
        path = f"characters[{i}]"
        goals = []
        for j, raw_goal in enumerate(_obj_list(raw, "goals", path)):
            goal_path = f"{path}.goals[{j}]"
            goals.append(
                GoalSpec(
                    description=_req_str(raw_goal, "description", goal_path),
                    priority=_opt_float(raw_goal, "priority", goal_path, 0.5),
                )
            )
        secret = raw.get("secret")
        if secret is not None and not isinstance(secret, str):
            raise ParseError(f"{path}.secret: expected string or null")
        initial_location = raw.get("initial_location")
        if initial_location is not None and not isinstance(initial_location, str):
            raise ParseError(f"{path}.initial_location: expected string or null")
        raw_affect = raw.get("initial_affect", {})
        if not isinstance(raw_affect, dict):
            raise ParseError(f"{path}.initial_affect: expected object")
        affect = AffectVector(
            valence=_opt_float(raw_affect, "valence", f"{path}.initial_affect", 0.0),
            arousal=_opt_float(raw_affect, "arousal", f"{path}.initial_affect", 0.0),
        )
        characters.append(
            CharacterSpec(
                id=_req_str(raw, "id", path),
                name=_opt_str(raw, "name", path),
                archetype=_opt_str(raw, "archetype", path),
                public_description=_opt_str(raw, "public_description", path),
                secret=secret,
                goals=goals,
                initial_location=initial_location,
                initial_affect=affect,
            )
        )

    relationships = []
    for i, raw in enumerate(_obj_list(data, "relationships", "top level")):
        path = f"relationships[{i}]"
        relationships.append(
            RelationshipSpec(
                from_id=_req_str(raw, "from", path),
                to_id=_req_str(raw, "to", path),
                trust=_opt_float(raw, "trust", path, _DEFAULT_TRUST),
                power=_opt_float(raw, "power", path, 0.0),
                dependency=_opt_float(raw, "dependency", path, 0.0),
                alliance=_opt_bool(raw, "alliance", path),
            )
        )

    conflicts = []
    for i, raw in enumerate(_obj_list(data, "conflicts", "top level")):
        path = f"conflicts[{i}]"
        conflicts.append(
            ConflictSpec(
                id=_req_str(raw, "id", path),
                description=_opt_str(raw, "description", path),
                parties=_str_list(raw, "parties", path),
                stakes=_opt_str(raw, "stakes", path),
            )
        )

    quests = []
    for i, raw in enumerate(_obj_list(data, "quests", "top level")):
        path = f"quests[{i}]"
        quests.append(
            QuestSpec(
                id=_req_str(raw, "id", path),
                description=_opt_str(raw, "description", path),
                assigned_to=_opt_str(raw, "assigned_to", path),
                trigger=_opt_str(raw, "trigger", path),
                resolution=_opt_str(raw, "resolution", path),
            )
        )

    return WorldSpec(
        schema_version=data["schema_version"],
        title=_opt_str(data, "title", "top level"),
        temporal_cue=_opt_str(data, "temporal_cue", "top level"),
        locations=locations,
        characters=characters,
        relationships=relationships,
        conflicts=conflicts,
        quests=quests,
    )


def spec_to_dict(spec: WorldSpec) -> dict:
    """Dict form of a spec with wire field names; None-valued options omitted."""
    characters = []
    for ch in spec.characters:
        raw: dict = {
            "id": ch.id,
            "name": ch.name,
            "archetype": ch.archetype,
            "public_description": ch.public_description,
            "goals": [
                {"description": g.description, "priority": g.priority} for g in ch.goals
            ],
            "initial_affect": {
                "valence": ch.initial_affect.valence,
                "arousal": ch.initial_affect.arousal,
            },
        }
        if ch.secret is not None:
            raw["secret"] = ch.secret
        if ch.initial_location is not None:
            raw["initial_location"] = ch.initial_location
        characters.append(raw)

    return {
        "schema_version": spec.schema_version,
        "title": spec.title,
        "temporal_cue": spec.temporal_cue,
        "locations": [
            {
                "id": loc.id,
                "name": loc.name,
                "description": loc.description,
                "adjacent_to": list(loc.adjacent_to),
            }
            for loc in spec.locations
        ],
        "characters": characters,
        "relationships": [
            {
                "from": rel.from_id,
                "to": rel.to_id,
                "trust": rel.trust,
                "power": rel.power,
                "dependency": rel.dependency,
                "alliance": rel.alliance,
            }
            for rel in spec.relationships
        ],
        "conflicts": [
            {
                "id": c.id,
                "description": c.description,
                "parties": list(c.parties),
                "stakes": c.stakes,
            }
            for c in spec.conflicts
        ],
        "quests": [
            {
                "id": q.id,
                "description": q.description,
                "assigned_to": q.assigned_to,
                "trigger": q.trigger,
                "resolution": q.resolution,
            }
            for q in spec.quests
        ],
    }


# ---------------------------------------------------------------------------
# parse / serialize


def decode_world_spec(text: str | bytes) -> WorldSpec:
    """Decode spec text without semantic validation; total over any input."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from exc
    except (TypeError, ValueError, RecursionError) as exc:
        raise ParseError(f"undecodable input: {exc}") from exc
    try:
        return spec_from_dict(data)
    except ParseError:
        raise
    except (TypeError, ValueError, KeyError, AttributeError, RecursionError) as exc:
        # Shape surprises must surface as ParseError, never crash the caller.
        raise ParseError(f"malformed world spec: {exc}") from exc


def parse_world_spec(text: str | bytes) -> WorldSpec:
    """Parse and validate canonical spec text.

    Raises ParseError on malformed input and ValidationError (carrying every
    violation, not just the first) on invariant failures.
    """
    spec = decode_world_spec(text)
    violations = validate_world_spec(spec)
    if violations:
        raise ValidationError(violations)
    return spec


def serialize_world_spec(spec: WorldSpec) -> str:
    """Canonical serialization: sorted keys, 2-space indent, shortest floats."""
    return json.dumps(spec_to_dict(spec), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# validate


def _check_range(
    value: float, lo: float, hi: float, subject: str, out: list[Violation]
) -> None:
    if not (lo <= value <= hi):
        out.append(
            Violation(
                VALUE_OUT_OF_RANGE,
                subject,
                f"{subject} = {value!r} outside [{lo}, {hi}]",
            )
        )


def _check_duplicates(ids: list[str], kind: str, out: list[Violation]) -> None:
    seen: set[str] = set()
    flagged: set[str] = set()
    for item_id in ids:
        if item_id in seen and item_id not in flagged:
            out.append(Violation(DUPLICATE_ID, item_id, f"duplicate {kind} id {item_id!r}"))
            flagged.add(item_id)
        seen.add(item_id)


def validate_world_spec(spec: WorldSpec) -> list[Violation]:
    """Check every structural invariant; returns all violations found."""
    out: list[Violation] = []

    if spec.schema_version < 1:
        out.append(
            Violation(
                VALUE_OUT_OF_RANGE,
                "schema_version",
                f"schema_version = {spec.schema_version} must be >= 1",
            )
        )
    if not spec.title.strip():
        out.append(Violation(EMPTY_TITLE, "title", "title must be non-empty"))

    _check_duplicates([loc.id for loc in spec.locations], "location", out)
    _check_duplicates([ch.id for ch in spec.characters], "character", out)
    _check_duplicates([c.id for c in spec.conflicts], "conflict", out)
    _check_duplicates([q.id for q in spec.quests], "quest", out)

    location_ids = {loc.id for loc in spec.locations}
    character_ids = {ch.id for ch in spec.characters}

    for loc in spec.locations:
        neighbours = set(loc.adjacent_to)
        if loc.id in neighbours:
            out.append(Violation(SELF_ADJACENT, loc.id, f"location {loc.id!r} adjacent to itself"))
        for other_id in sorted(neighbours - {loc.id}):
            if other_id not in location_ids:
                out.append(
                    Violation(
                        UNKNOWN_REFERENCE,
                        other_id,
                        f"location {loc.id!r} adjacent to undeclared location {other_id!r}",
                    )
                )
            else:
                other = spec.location(other_id)
                if other is not None and loc.id not in other.adjacent_to:
                    out.append(
                        Violation(
                            ADJACENCY_ASYMMETRIC,
                            f"{loc.id}->{other_id}",
                            f"location {loc.id!r} lists {other_id!r} but not vice versa",
                        )
                    )

    for ch in spec.characters:
        if ch.initial_location is None:
            out.append(
                Violation(
                    UNPLACED_CHARACTER, ch.id, f"character {ch.id!r} has no initial location"
                )
            )
        elif ch.initial_location not in location_ids:
            out.append(
                Violation(
                    UNKNOWN_REFERENCE,
                    ch.initial_location,
                    f"character {ch.id!r} placed at undeclared location {ch.initial_location!r}",
                )
            )
        if not ch.goals:
            out.append(Violation(MISSING_GOALS, ch.id, f"character {ch.id!r} has no goals"))
        for i, goal in enumerate(ch.goals):
            _check_range(goal.priority, 0.0, 1.0, f"{ch.id}.goals[{i}].priority", out)
        _check_range(ch.initial_affect.valence, -1.0, 1.0, f"{ch.id}.initial_affect.valence", out)
        _check_range(ch.initial_affect.arousal, 0.0, 1.0, f"{ch.id}.initial_affect.arousal", out)

    seen_edges: set[tuple[str, str]] = set()
    for rel in spec.relationships:
        edge = f"{rel.from_id}->{rel.to_id}"
        if rel.from_id == rel.to_id:
            out.append(Violation(SELF_RELATION, edge, f"relationship {edge} is reflexive"))
        for endpoint in (rel.from_id, rel.to_id):
            if endpoint not in character_ids:
                out.append(
                    Violation(
                        UNKNOWN_REFERENCE,
                        endpoint,
                        f"relationship {edge} references undeclared character {endpoint!r}",
                    )
                )
        if (rel.from_id, rel.to_id) in seen_edges:
            out.append(Violation(DUPLICATE_EDGE, edge, f"more than one edge for {edge}"))
        seen_edges.add((rel.from_id, rel.to_id))
        _check_range(rel.trust, 0.0, 1.0, f"{edge}.trust", out)
        _check_range(rel.power, -1.0, 1.0, f"{edge}.power", out)
        _check_range(rel.dependency, 0.0, 1.0, f"{edge}.dependency", out)

    for conflict in spec.conflicts:
        if len(conflict.parties) < 2:
            out.append(
                Violation(
                    TOO_FEW_PARTIES,
                    conflict.id,
                    f"conflict {conflict.id!r} needs at least 2 parties",
                )
            )
        if len(set(conflict.parties)) != len(conflict.parties):
            out.append(
                Violation(
                    DUPLICATE_PARTY, conflict.id, f"conflict {conflict.id!r} repeats a party"
                )
            )
        for party in conflict.parties:
            if party not in character_ids:
                out.append(
                    Violation(
                        UNKNOWN_REFERENCE,
                        party,
                        f"conflict {conflict.id!r} names undeclared character {party!r}",
                    )
                )

    for quest in spec.quests:
        if quest.assigned_to not in character_ids:
            out.append(
                Violation(
                    UNKNOWN_REFERENCE,
                    quest.assigned_to,
                    f"quest {quest.id!r} assigned to undeclared character {quest.assigned_to!r}",
                )
            )

    if len(spec.locations) < 1:
        out.append(Violation(MIN_LOCATIONS, "locations", "a complete spec needs >= 1 location"))
    if len(spec.characters) < 2:
        out.append(Violation(MIN_CHARACTERS, "characters", "a complete spec needs >= 2 characters"))
    if len(spec.conflicts) < 1:
        out.append(Violation(MIN_CONFLICTS, "conflicts", "a complete spec needs >= 1 conflict"))

    return out


# ---------------------------------------------------------------------------
# template completion


def _copy_spec(spec: WorldSpec) -> WorldSpec:
    return spec_from_dict(spec_to_dict(spec))


def _unique_id(wanted: str, taken: set[str]) -> str:
    if wanted not in taken:
        return wanted
    n = 2
    while f"{wanted}_{n}" in taken:
        n += 1
    return f"{wanted}_{n}"


def complete_with_report(partial: WorldSpec) -> tuple[WorldSpec, list[str]]:
    """Complete a partial spec; returns (completed spec, synthesis actions).

    Deterministic and idempotent. Only absent elements are synthesized:
    default title, a commons location, placeholder characters up to the
    two-character minimum, symmetric adjacency closure, placements for
    unplaced characters, a fallback goal per goalless character, one central
    conflict between the two highest-priority-goal characters, and neutral
    relationship edges for conflict pairs.
    """
    contradictions = [
        v for v in validate_world_spec(partial) if v.code not in _COMPLETABLE_CODES
    ]
    if contradictions:
        raise CompletionError(contradictions)

    spec = _copy_spec(partial)
    actions: list[str] = []

    if not spec.title.strip():
        spec.title = "Untitled World"
        actions.append("synthesized title 'Untitled World'")

    if not spec.locations:
        spec.locations.append(
            LocationSpec(
                id=_DEFAULT_LOCATION_ID,
                name="The Commons",
                description="A shared gathering space where the story begins.",
            )
        )
        actions.append(f"synthesized location '{_DEFAULT_LOCATION_ID}'")

    taken_character_ids = {ch.id for ch in spec.characters}
    for default_id, default_name, default_archetype in _DEFAULT_CHARACTERS:
        if len(spec.characters) >= 2:
            break
        if default_id in taken_character_ids:
            continue
        spec.characters.append(
            CharacterSpec(id=default_id, name=default_name, archetype=default_archetype)
        )
        taken_character_ids.add(default_id)
        actions.append(f"synthesized character '{default_id}'")

    for loc in spec.locations:
        for other_id in loc.adjacent_to:
            other = spec.location(other_id)
            if other is not None and loc.id not in other.adjacent_to:
                other.adjacent_to.append(loc.id)
                actions.append(f"synthesized adjacency {other_id}->{loc.id}")

    first_location = spec.locations[0].id
    for ch in spec.characters:
        if ch.initial_location is None:
            ch.initial_location = first_location
            actions.append(f"placed character '{ch.id}' at '{first_location}'")

    for ch in spec.characters:
        if not ch.goals:
            ch.goals.append(GoalSpec(_DEFAULT_GOAL, _DEFAULT_GOAL_PRIORITY))
            actions.append(f"synthesized goal for '{ch.id}'")

    if not spec.conflicts:
        # Two highest-priority-goal characters; ties keep declaration order.
        ranked = sorted(
            range(len(spec.characters)),
            key=lambda i: (-max(g.priority for g in spec.characters[i].goals), i),
        )
        a = spec.characters[ranked[0]]
        b = spec.characters[ranked[1]]
        goal_a = max(a.goals, key=lambda g: g.priority).description
        goal_b = max(b.goals, key=lambda g: g.priority).description
        conflict_id = _unique_id("central_conflict", {c.id for c in spec.conflicts})
        spec.conflicts.append(
            ConflictSpec(
                id=conflict_id,
                description=(
                    f"{a.name} wants to {goal_a}, while {b.name} wants to {goal_b}."
                ),
                parties=[a.id, b.id],
                stakes=f"Whose will prevails between {a.name} and {b.name}.",
            )
        )
        actions.append(f"synthesized conflict '{conflict_id}' between '{a.id}' and '{b.id}'")

    existing_edges = {(rel.from_id, rel.to_id) for rel in spec.relationships}
    for conflict in spec.conflicts:
        for from_id in conflict.parties:
            for to_id in conflict.parties:
                if from_id == to_id or (from_id, to_id) in existing_edges:
                    continue
                spec.relationships.append(RelationshipSpec(from_id=from_id, to_id=to_id))
                existing_edges.add((from_id, to_id))
                actions.append(f"synthesized relationship {from_id}->{to_id}")

    remaining = validate_world_spec(spec)
    if remaining:  # pragma: no cover - template rules cover every completable code
        raise CompletionError(remaining)
    return spec, actions


def complete_world_spec(partial: WorldSpec) -> WorldSpec:
    """Deterministic template completion; see complete_with_report."""
    completed, _ = complete_with_report(partial)
    return completed
