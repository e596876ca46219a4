// @vitest-environment happy-dom

import { describe, expect, it } from "vitest";

import type { EventRecord, LayoutView } from "../src/api.js";
import { buildTimeline, resetFeed } from "../src/model.js";
import {
  renderBanner,
  renderFeed,
  renderMap,
  renderPacing,
  renderTimeline,
} from "../src/render.js";

function event(seq: number, overrides: Partial<EventRecord> = {}): EventRecord {
  return {
    seq,
    turn: 1,
    branch_id: 0,
    actor: "ava",
    kind: "say",
    payload: { target: "bram", content: "hello" },
    conflict_relevant: false,
    ...overrides,
  };
}

function host(): HTMLElement {
  const element = document.createElement("div");
  document.body.appendChild(element);
  return element;
}

describe("renderFeed", () => {
  it("renders one bubble per event in seq order with role classes", () => {
    const element = host();
    const feed = resetFeed([
      event(2, { actor: "SYSTEM", kind: "SCENE_CHANGE", payload: { from: "a", to: "b" } }),
      event(1),
      event(3, { actor: "bram" }),
    ]);
    renderFeed(element, feed, "ava");
    const bubbles = Array.from(element.querySelectorAll<HTMLElement>(".bubble"));
    expect(bubbles.map((b) => b.dataset.seq)).toEqual(["1", "2", "3"]);
    expect(bubbles[0]?.classList.contains("own")).toBe(true);
    expect(bubbles[1]?.classList.contains("system")).toBe(true);
    expect(bubbles[2]?.classList.contains("own")).toBe(false);
    expect(bubbles[0]?.textContent).toContain("ava to bram: hello");
  });
});

describe("renderTimeline", () => {
  it("renders a lane per branch and wires rewind buttons", () => {
    const element = host();
    const timeline = buildTimeline({
      nodes: [{ node_id: "node-5", branch_id: 0, seq: 5, snapshot_ref: "x" }],
      branches: {
        "0": { parent_branch: null, fork_seq: -1, origin_ref: "g" },
        "1": { parent_branch: 0, fork_seq: 5, origin_ref: "x" },
      },
      active_branch: 1,
    });
    const clicked: string[] = [];
    renderTimeline(element, timeline, (nodeId) => clicked.push(nodeId));
    const lanes = element.querySelectorAll(".lane");
    expect(lanes.length).toBe(2);
    expect(lanes[1]?.classList.contains("active")).toBe(true);
    const button = element.querySelector<HTMLButtonElement>("button.node");
    expect(button?.textContent).toBe("node-5");
    button?.click();
    expect(clicked).toEqual(["node-5"]);
  });
});

describe("renderMap", () => {
  it("draws the full grid with markers on occupied tiles", () => {
    const element = host();
    const layout: LayoutView = {
      grid: [2, 2],
      tiles: [
        { id: "study", x: 0, y: 0 },
        { id: "hall", x: 1, y: 0 },
      ],
    };
    renderMap(element, layout, [
      { characterId: "ava", locationId: "study", x: 0, y: 0, controlled: true },
    ]);
    const tiles = element.querySelectorAll(".tile");
    expect(tiles.length).toBe(4);
    expect(element.querySelectorAll(".tile.empty").length).toBe(2);
    const marker = element.querySelector<HTMLElement>(".marker");
    expect(marker?.classList.contains("controlled")).toBe(true);
    expect(marker?.parentElement?.dataset.location).toBe("study");
  });
});

describe("renderPacing and renderBanner", () => {
  it("shows gauges and the quest queue", () => {
    const element = host();
    renderPacing(element, {
      plot_heat: 1.5,
      interaction_density: 0.4,
      npc_initiative_prob: 0.8,
      side_quest_queue: ["find_ledger"],
    });
    expect(element.textContent).toContain("heat 1.50");
    expect(element.textContent).toContain("initiative 0.80");
    expect(element.textContent).toContain("quests: find_ledger");
  });

  it("hides the banner when the error clears", () => {
    const element = host();
    renderBanner(element, "EXTRACTION_FAILED: no luck");
    expect(element.hidden).toBe(false);
    renderBanner(element, null);
    expect(element.hidden).toBe(true);
    expect(element.textContent).toBe("");
  });
});
