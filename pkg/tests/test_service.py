"""HTTP service tests: endpoints, error bodies, persistence, streaming."""

from __future__ import annotations

import json
import threading

import pytest
from fastapi.testclient import TestClient

from genlarp.provider import scripted_provider
from genlarp.service import create_app
from genlarp.worldspec import serialize_world_spec, spec_to_dict

from conftest import make_duo_spec, make_village_spec

SAY = '{"kind": "say", "target": "ava", "content": "hm"}'


@pytest.fixture
def client(tmp_path):
    app = create_app(data_dir=tmp_path / "data", provider=scripted_provider([SAY] * 500))
    with TestClient(app) as test_client:
        yield test_client


def create_session(client, spec=None, seed: int = 7) -> dict:
    spec = spec or make_duo_spec()
    reply = client.post("/sessions", json={"world_spec": spec_to_dict(spec), "seed": seed})
    assert reply.status_code == 201, reply.text
    return reply.json()


class TestCreateSession:
    def test_valid_spec_starts_at_turn_zero(self, client):
        descriptor = create_session(client)
        assert descriptor["turn"] == 0
        assert descriptor["active_branch"] == 0
        assert descriptor["controlled_character"] == "ava"
        assert descriptor["title"] == "The Locked Room"
        events = client.get(f"/sessions/{descriptor['session_id']}/events").json()
        assert events["events"] == []

    def test_both_inputs_rejected(self, client):
        reply = client.post(
            "/sessions",
            json={"story_text": "x", "world_spec": spec_to_dict(make_duo_spec())},
        )
        assert reply.status_code == 400
        body = reply.json()
        assert body["code"] == "INVALID_REQUEST"
        assert set(body) == {"code", "message", "detail"}

    def test_neither_input_rejected(self, client):
        assert client.post("/sessions", json={"seed": 1}).status_code == 400

    def test_invalid_spec_reports_violations(self, client):
        broken = spec_to_dict(make_duo_spec())
        broken["conflicts"][0]["parties"] = ["ava", "ghost"]
        reply = client.post("/sessions", json={"world_spec": broken})
        assert reply.status_code == 422
        body = reply.json()
        assert body["code"] == "VALIDATION_ERROR"
        assert any(v["code"] == "UNKNOWN_REFERENCE" for v in body["detail"])

    def test_story_text_runs_extraction(self, tmp_path):
        good = serialize_world_spec(make_duo_spec())
        app = create_app(data_dir=tmp_path / "data", provider=scripted_provider([good]))
        with TestClient(app) as client:
            reply = client.post(
                "/sessions", json={"story_text": "Two rivals locked in a study.", "seed": 1}
            )
            assert reply.status_code == 201
            assert reply.json()["title"] == "The Locked Room"

    def test_failed_extraction_reports_code(self, tmp_path):
        app = create_app(
            data_dir=tmp_path / "data",
            provider=scripted_provider(["not json"] * 3),
        )
        with TestClient(app) as client:
            reply = client.post("/sessions", json={"story_text": "gibberish", "seed": 1})
            assert reply.status_code == 422
            assert reply.json()["code"] == "EXTRACTION_FAILED"


class TestDescriptorAndState:
    def test_descriptor_includes_pacing(self, client):
        sid = create_session(client)["session_id"]
        body = client.get(f"/sessions/{sid}").json()
        assert body["pacing"]["npc_initiative_prob"] == 0.3
        assert body["pacing"]["side_quest_queue"] == []

    def test_unknown_session_error_body(self, client):
        reply = client.get("/sessions/nope")
        assert reply.status_code == 404
        assert reply.json()["code"] == "UNKNOWN_SESSION"

    def test_state_hides_non_controlled_secrets(self, client):
        sid = create_session(client, make_village_spec())["session_id"]
        state = client.get(f"/sessions/{sid}/state").json()
        by_id = {c["id"]: c for c in state["world"]["characters"]}
        assert "secret" in by_id["mara"]  # controlled character keeps hers
        assert "secret" not in by_id["petra"]
        assert "secret" not in by_id["tomas"]

    def test_state_exposes_controlled_internals_only(self, client):
        sid = create_session(client)["session_id"]
        client.post(f"/sessions/{sid}/actions", json={"kind": "say", "target": "bram", "content": "hi"})
        state = client.get(f"/sessions/{sid}/state").json()
        assert "memory" in state["agents"]["ava"]
        assert "memory" not in state["agents"]["bram"]
        assert state["agents"]["bram"]["location_id"] == "study"
        assert "state_hash" in state


class TestActions:
    def test_action_returns_events_and_advances_turn(self, client):
        sid = create_session(client)["session_id"]
        reply = client.post(
            f"/sessions/{sid}/actions",
            json={"kind": "say", "target": "bram", "content": "hello"},
        )
        assert reply.status_code == 200
        body = reply.json()
        assert body["turn"] == 1
        assert body["events"][0]["actor"] == "ava"
        assert body["events"][0]["kind"] == "say"

    def test_blocked_action_maps_to_conflict_status(self, client):
        sid = create_session(client)["session_id"]
        reply = client.post(f"/sessions/{sid}/actions", json={"kind": "move", "target": "study"})
        assert reply.status_code == 409
        body = reply.json()
        assert body["code"] == "ACTION_BLOCKED"
        assert body["detail"]["reason"] == "NOT_ADJACENT"

    def test_unknown_kind_rejected(self, client):
        sid = create_session(client)["session_id"]
        reply = client.post(f"/sessions/{sid}/actions", json={"kind": "dance"})
        assert reply.status_code == 400
        assert reply.json()["code"] == "INVALID_ACTION"

    def test_events_persisted_before_response(self, client, tmp_path):
        sid = create_session(client)["session_id"]
        client.post(f"/sessions/{sid}/actions", json={"kind": "say", "target": "bram", "content": "x"})
        log = tmp_path / "data" / "sessions" / sid / "branches" / "branch-0.ndjson"
        lines = [json.loads(line) for line in log.read_text().splitlines() if line]
        assert any(entry["event"]["payload"].get("content") == "x" for entry in lines)


class TestRoleAndRewind:
    def test_role_switch_updates_descriptor(self, client):
        sid = create_session(client)["session_id"]
        reply = client.post(f"/sessions/{sid}/role", json={"character_id": "bram"})
        assert reply.status_code == 200
        assert reply.json()["controlled_character"] == "bram"

    def test_unknown_character(self, client):
        sid = create_session(client)["session_id"]
        reply = client.post(f"/sessions/{sid}/role", json={"character_id": "ghost"})
        assert reply.status_code == 404
        assert reply.json()["code"] == "UNKNOWN_CHARACTER"

    def test_rewind_creates_branch_and_keeps_old_events(self, client):
        sid = create_session(client)["session_id"]
        client.post(f"/sessions/{sid}/actions", json={"kind": "betray", "target": "bram"})
        graph = client.get(f"/sessions/{sid}/graph").json()
        assert len(graph["nodes"]) == 1
        node_id = graph["nodes"][0]["node_id"]
        reply = client.post(f"/sessions/{sid}/rewind", json={"node_id": node_id})
        assert reply.status_code == 200
        assert reply.json()["new_branch_id"] == 1
        graph = client.get(f"/sessions/{sid}/graph").json()
        assert graph["active_branch"] == 1
        assert set(graph["branches"]) == {"0", "1"}
        old = client.get(f"/sessions/{sid}/events", params={"branch": 0}).json()
        assert any(e["kind"] == "betray" for e in old["events"])

    def test_unknown_node(self, client):
        sid = create_session(client)["session_id"]
        reply = client.post(f"/sessions/{sid}/rewind", json={"node_id": "node-99"})
        assert reply.status_code == 404
        assert reply.json()["code"] == "UNKNOWN_NODE"


class TestEventsEndpoint:
    def test_since_seq_pagination(self, client):
        sid = create_session(client)["session_id"]
        for i in range(3):
            client.post(
                f"/sessions/{sid}/actions",
                json={"kind": "say", "target": "bram", "content": f"t{i}"},
            )
        full = client.get(f"/sessions/{sid}/events").json()
        assert full["last_seq"] == full["events"][-1]["seq"]
        partial = client.get(
            f"/sessions/{sid}/events", params={"since_seq": full["events"][0]["seq"]}
        ).json()
        assert all(e["seq"] > full["events"][0]["seq"] for e in partial["events"])

    def test_unknown_branch(self, client):
        sid = create_session(client)["session_id"]
        reply = client.get(f"/sessions/{sid}/events", params={"branch": 7})
        assert reply.status_code == 404
        assert reply.json()["code"] == "UNKNOWN_BRANCH"


class TestLayoutEndpoint:
    def test_layout_export_shape(self, client):
        sid = create_session(client, make_village_spec())["session_id"]
        body = client.get(f"/sessions/{sid}/layout").json()
        assert set(body) == {"grid", "tiles"}
        assert {tile["id"] for tile in body["tiles"]} == {"mill", "square", "tavern"}

    def test_unsatisfiable_layout_reports_conflict(self, client):
        spec = make_duo_spec()
        from genlarp.worldspec import LocationSpec

        spec.locations = [
            LocationSpec(id="a", name="A", adjacent_to=["b", "c"]),
            LocationSpec(id="b", name="B", adjacent_to=["a", "c"]),
            LocationSpec(id="c", name="C", adjacent_to=["a", "b"]),
        ]
        for character in spec.characters:
            character.initial_location = "a"
        spec.quests = []
        reply = client.post("/sessions", json={"world_spec": spec_to_dict(spec), "seed": 1})
        assert reply.status_code == 201, reply.text
        sid = reply.json()["session_id"]
        layout = client.get(f"/sessions/{sid}/layout")
        assert layout.status_code == 409
        assert layout.json()["code"] == "LAYOUT_UNSAT"


class TestPersistenceAcrossApps:
    def test_session_survives_process_restart(self, tmp_path):
        data_dir = tmp_path / "data"
        app = create_app(data_dir=data_dir, provider=scripted_provider([SAY] * 100))
        with TestClient(app) as client:
            sid = create_session(client)["session_id"]
            client.post(f"/sessions/{sid}/actions", json={"kind": "betray", "target": "bram"})
            before = client.get(f"/sessions/{sid}/state").json()["state_hash"]

        fresh_app = create_app(data_dir=data_dir, provider=scripted_provider([SAY] * 100))
        with TestClient(fresh_app) as client:
            state = client.get(f"/sessions/{sid}/state").json()
            assert state["state_hash"] == before
            reply = client.post(
                f"/sessions/{sid}/actions",
                json={"kind": "say", "target": "bram", "content": "still here"},
            )
            assert reply.status_code == 200


class TestIsolation:
    def test_sessions_do_not_leak_state(self, client):
        first = create_session(client, seed=1)["session_id"]
        second = create_session(client, seed=2)["session_id"]
        baseline = client.get(f"/sessions/{second}/state").json()["state_hash"]
        client.post(f"/sessions/{first}/actions", json={"kind": "betray", "target": "bram"})
        assert client.get(f"/sessions/{second}/state").json()["state_hash"] == baseline
        assert client.get(f"/sessions/{second}/events").json()["events"] == []


class TestStream:
    def test_stream_delivers_new_events_as_ndjson(self, tmp_path):
        # the in-process test client buffers whole bodies, so the endless
        # stream needs a real server on an ephemeral port
        import time

        import requests
        import uvicorn

        app = create_app(data_dir=tmp_path / "data", provider=scripted_provider([SAY] * 100))
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 10
        while not server.started:
            assert time.monotonic() < deadline, "server did not start"
            time.sleep(0.01)
        port = server.servers[0].sockets[0].getsockname()[1]
        base = f"http://127.0.0.1:{port}"

        try:
            reply = requests.post(
                f"{base}/sessions",
                json={"world_spec": spec_to_dict(make_duo_spec()), "seed": 7},
                timeout=10,
            )
            sid = reply.json()["session_id"]
            received: list[dict] = []
            done = threading.Event()

            def consume():
                with requests.get(f"{base}/sessions/{sid}/stream", stream=True, timeout=10) as r:
                    for line in r.iter_lines():
                        if not line:
                            continue  # heartbeat
                        received.append(json.loads(line))
                        done.set()
                        return

            consumer = threading.Thread(target=consume, daemon=True)
            consumer.start()
            for _ in range(200):  # wait for the subscriber to attach
                if app.state.handles[sid].subscribers:
                    break
                time.sleep(0.01)
            requests.post(
                f"{base}/sessions/{sid}/actions",
                json={"kind": "say", "target": "bram", "content": "streamed"},
                timeout=10,
            )
            assert done.wait(timeout=10), "no event arrived on the stream"
            consumer.join(timeout=10)
            assert received[0]["actor"] == "ava"
            assert received[0]["payload"]["content"] == "streamed"
        finally:
            server.should_exit = True
            thread.join(timeout=10)
