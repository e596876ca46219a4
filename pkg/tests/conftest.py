from __future__ import annotations

from pathlib import Path

import pytest

from genlarp.worldspec import (
    AffectVector,
    CharacterSpec,
    ConflictSpec,
    GoalSpec,
    LocationSpec,
    QuestSpec,
    RelationshipSpec,
    WorldSpec,
)

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "fixtures" / "worldspecs"


def make_duo_spec() -> WorldSpec:
    """Minimal complete spec: one location, two characters, one conflict."""
    return WorldSpec(
        schema_version=1,
        title="The Locked Room",
        temporal_cue="a stormy midnight",
        locations=[LocationSpec(id="study", name="The Study", description="Dark panelled walls.")],
        characters=[
            CharacterSpec(
                id="ava",
                name="Ava",
                archetype="detective",
                public_description="A sharp-eyed investigator.",
                secret="Ava tampered with the will years ago.",
                goals=[GoalSpec("expose the forger", 0.9)],
                initial_location="study",
                initial_affect=AffectVector(valence=0.1, arousal=0.4),
            ),
            CharacterSpec(
                id="bram",
                name="Bram",
                archetype="heir",
                public_description="The nervous heir to the estate.",
                goals=[GoalSpec("protect the inheritance", 0.8)],
                initial_location="study",
                initial_affect=AffectVector(valence=-0.2, arousal=0.6),
            ),
        ],
        relationships=[
            RelationshipSpec(from_id="ava", to_id="bram", trust=0.5, power=0.3, dependency=0.2),
            RelationshipSpec(from_id="bram", to_id="ava", trust=0.4, power=-0.3, dependency=0.6),
        ],
        conflicts=[
            ConflictSpec(
                id="the_will",
                description="Who inherits the estate, and who forged the will.",
                parties=["ava", "bram"],
                stakes="the estate and a reputation",
            )
        ],
        quests=[
            QuestSpec(
                id="find_ledger",
                description="Locate the estate ledger.",
                assigned_to="ava",
                trigger="the study is searched",
                resolution="the ledger surfaces",
            )
        ],
    )


def make_village_spec() -> WorldSpec:
    """Richer fixture: three locations in a chain, three characters, quests."""
    return WorldSpec(
        schema_version=1,
        title="The Miller's Feud",
        temporal_cue="a dry harvest autumn",
        locations=[
            LocationSpec(id="mill", name="The Mill", description="Creaking wheel.", adjacent_to=["square"]),
            LocationSpec(
                id="square",
                name="Village Square",
                description="Dusty cobbles.",
                adjacent_to=["mill", "tavern"],
            ),
            LocationSpec(id="tavern", name="The Tavern", description="Low beams.", adjacent_to=["square"]),
        ],
        characters=[
            CharacterSpec(
                id="mara",
                name="Mara",
                archetype="miller",
                public_description="Runs the mill with an iron hand.",
                secret="The grain ledger is forged.",
                goals=[GoalSpec("keep the water rights", 0.9), GoalSpec("hide the ledger", 0.7)],
                initial_location="mill",
                initial_affect=AffectVector(valence=0.0, arousal=0.3),
            ),
            CharacterSpec(
                id="tomas",
                name="Tomas",
                archetype="innkeeper",
                public_description="Friendly face, long memory.",
                goals=[GoalSpec("win the water rights", 0.8)],
                initial_location="tavern",
                initial_affect=AffectVector(valence=0.2, arousal=0.2),
            ),
            CharacterSpec(
                id="petra",
                name="Petra",
                archetype="reeve",
                public_description="Keeps the village books.",
                secret="Petra suspects the ledger already.",
                goals=[GoalSpec("audit the mill", 0.6)],
                initial_location="square",
                initial_affect=AffectVector(valence=0.0, arousal=0.1),
            ),
        ],
        relationships=[
            RelationshipSpec(from_id="mara", to_id="tomas", trust=0.3, power=0.4, dependency=0.2),
            RelationshipSpec(from_id="tomas", to_id="mara", trust=0.3, power=-0.4, dependency=0.5),
            RelationshipSpec(
                from_id="tomas", to_id="petra", trust=0.7, power=0.0, dependency=0.3, alliance=True
            ),
            RelationshipSpec(
                from_id="petra", to_id="tomas", trust=0.7, power=0.0, dependency=0.3, alliance=True
            ),
        ],
        conflicts=[
            ConflictSpec(
                id="water_rights",
                description="Mill and tavern both claim the stream.",
                parties=["mara", "tomas"],
                stakes="the village water supply",
            )
        ],
        quests=[
            QuestSpec(
                id="audit",
                description="Audit the mill's grain ledger.",
                assigned_to="petra",
                trigger="the reeve reaches the mill",
                resolution="the forgery is exposed or buried",
            ),
            QuestSpec(
                id="brew_festival",
                description="Host the harvest tasting.",
                assigned_to="tomas",
                trigger="the square fills at dusk",
                resolution="the tavern's standing rises",
            ),
        ],
    )


@pytest.fixture
def duo_spec() -> WorldSpec:
    return make_duo_spec()


@pytest.fixture
def village_spec() -> WorldSpec:
    return make_village_spec()
