// DOM rendering. Each function redraws one panel from view-model data; no
// panel keeps hidden state, so a full redraw after any API response is safe.

import type { LayoutView, PacingView, StateView } from "./api.js";
import type { CharacterMarker, FeedState, TimelineView } from "./model.js";
import { describeEvent } from "./model.js";

function clear(element: HTMLElement): void {
  while (element.firstChild) {
    element.removeChild(element.firstChild);
  }
}

function div(className: string, text?: string): HTMLDivElement {
  const node = document.createElement("div");
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderBanner(element: HTMLElement, message: string | null): void {
  clear(element);
  element.hidden = message === null;
  if (message !== null) {
    element.appendChild(div("banner-text", message));
  }
}

export function renderFeed(element: HTMLElement, feed: FeedState, controlled: string): void {
  clear(element);
  for (const event of feed.events) {
    const bubble = div(event.actor === controlled ? "bubble own" : "bubble");
    if (event.actor === "SYSTEM") bubble.className = "bubble system";
    bubble.dataset.seq = String(event.seq);
    bubble.dataset.kind = event.kind;
    bubble.appendChild(div("bubble-meta", `#${event.seq} turn ${event.turn}`));
    bubble.appendChild(div("bubble-body", describeEvent(event)));
    element.appendChild(bubble);
  }
  element.scrollTop = element.scrollHeight;
}

export function renderCharacterCards(element: HTMLElement, state: StateView): void {
  clear(element);
  for (const character of state.world.characters) {
    const agent = state.agents[character.id];
    const card = div(character.id === state.controlled_character ? "card controlled" : "card");
    card.appendChild(div("card-name", `${character.name} (${character.archetype})`));
    card.appendChild(div("card-desc", character.public_description));
    if (agent) {
      card.appendChild(
        div("card-where", `at ${agent.location_id}, valence ${agent.affect.valence.toFixed(2)}`),
      );
    }
    if (character.secret) {
      card.appendChild(div("card-secret", `secret: ${character.secret}`));
    }
    element.appendChild(card);
  }
}

export function renderMap(
  element: HTMLElement,
  layout: LayoutView,
  markers: CharacterMarker[],
): void {
  clear(element);
  const [width, height] = layout.grid;
  element.style.gridTemplateColumns = `repeat(${width}, 48px)`;
  const tileByPos = new Map(layout.tiles.map((tile) => [`${tile.x},${tile.y}`, tile]));
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const tile = tileByPos.get(`${x},${y}`);
      const cell = div(tile ? "tile" : "tile empty", tile ? tile.id : "");
      if (tile) {
        cell.dataset.location = tile.id;
        for (const marker of markers.filter((m) => m.locationId === tile.id)) {
          cell.appendChild(
            div(marker.controlled ? "marker controlled" : "marker", marker.characterId[0] ?? "?"),
          );
        }
      }
      element.appendChild(cell);
    }
  }
}

export function renderTimeline(
  element: HTMLElement,
  timeline: TimelineView,
  onRewind: (nodeId: string) => void,
): void {
  clear(element);
  for (const row of timeline.rows) {
    const lane = div(row.active ? "lane active" : "lane");
    lane.style.marginLeft = `${row.depth * 16}px`;
    lane.appendChild(div("lane-label", `branch ${row.branchId}`));
    for (const node of row.nodes) {
      const dot = document.createElement("button");
      dot.className = "node";
      dot.textContent = node.node_id;
      dot.title = `rewind to ${node.node_id} (seq ${node.seq})`;
      dot.addEventListener("click", () => onRewind(node.node_id));
      lane.appendChild(dot);
    }
    element.appendChild(lane);
  }
}

export function renderPacing(element: HTMLElement, pacing: PacingView): void {
  clear(element);
  element.appendChild(div("gauge", `heat ${pacing.plot_heat.toFixed(2)}`));
  element.appendChild(div("gauge", `density ${pacing.interaction_density.toFixed(2)}`));
  element.appendChild(div("gauge", `initiative ${pacing.npc_initiative_prob.toFixed(2)}`));
  if (pacing.side_quest_queue.length > 0) {
    element.appendChild(div("gauge", `quests: ${pacing.side_quest_queue.join(", ")}`));
  }
}
