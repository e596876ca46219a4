// Pure view-model logic. No DOM, no network: every function maps API data to
// render-ready structures, so the narrative truth always lives on the server.

import type {
  EventRecord,
  LayoutView,
  StateView,
  StoryGraphView,
  StoryNode,
} from "./api.js";

// --- event feed -------------------------------------------------------------

export interface FeedState {
  events: EventRecord[];
  lastSeq: number;
}

export function emptyFeed(): FeedState {
  return { events: [], lastSeq: -1 };
}

// Insert in seq order, dropping duplicates: the same event can arrive via the
// action response and the stream.
export function applyEvent(feed: FeedState, event: EventRecord): FeedState {
  if (feed.events.some((e) => e.seq === event.seq)) {
    return feed;
  }
  const events = [...feed.events, event].sort((a, b) => a.seq - b.seq);
  const last = events[events.length - 1];
  return { events, lastSeq: last ? last.seq : -1 };
}

export function applyEvents(feed: FeedState, events: EventRecord[]): FeedState {
  return events.reduce(applyEvent, feed);
}

// Wholesale replacement after a branch switch or a hard refresh.
export function resetFeed(events: EventRecord[]): FeedState {
  return applyEvents(emptyFeed(), events);
}

export function describeEvent(event: EventRecord): string {
  const target = typeof event.payload.target === "string" ? event.payload.target : "";
  const content = typeof event.payload.content === "string" ? event.payload.content : "";
  switch (event.kind) {
    case "say":
      return `${event.actor} to ${target}: ${content}`;
    case "move":
      return `${event.actor} moves to ${target}`;
    case "give":
      return `${event.actor} gives something to ${target}`;
    case "cooperate":
      return `${event.actor} cooperates with ${target}`;
    case "betray":
      return `${event.actor} betrays ${target}`;
    case "share_secret":
      return `${event.actor} shares a secret with ${target}`;
    case "observe":
      return `${event.actor} observes the scene`;
    case "SCENE_CHANGE":
      return `scene: ${event.payload.from} -> ${event.payload.to}`;
    case "ROLE_SWITCH":
      return `control: ${event.payload.from} -> ${event.payload.to}`;
    case "REWIND_MARK":
      return `timeline forked from ${event.payload.source_node}`;
    case "SIDE_QUEST_OFFERED":
      return `side quest offered: ${event.payload.quest_id}`;
    case "ALLIANCE_DISSOLVED":
      return `alliance dissolved: ${event.payload.from} / ${event.payload.to}`;
    case "QUEST_UPDATE":
      return `quest update: ${event.payload.quest_id}`;
    default:
      return `${event.actor} ${event.kind}`;
  }
}

// --- timeline ---------------------------------------------------------------

export interface TimelineBranch {
  branchId: number;
  parent: number | null;
  depth: number;
  active: boolean;
  nodes: StoryNode[];
}

export interface TimelineView {
  branchCount: number;
  rows: TimelineBranch[];
}

// Depth-first branch tree: children under their parent, ordered by id, with
// this branch's key-event nodes attached in seq order.
export function buildTimeline(graph: StoryGraphView): TimelineView {
  const parents = new Map<number, number | null>();
  for (const [id, info] of Object.entries(graph.branches)) {
    parents.set(Number(id), info.parent_branch);
  }
  const children = new Map<number, number[]>();
  const roots: number[] = [];
  for (const [id, parent] of parents) {
    if (parent === null) {
      roots.push(id);
    } else {
      const siblings = children.get(parent) ?? [];
      siblings.push(id);
      children.set(parent, siblings);
    }
  }
  const nodesByBranch = new Map<number, StoryNode[]>();
  for (const node of graph.nodes) {
    const list = nodesByBranch.get(node.branch_id) ?? [];
    list.push(node);
    nodesByBranch.set(node.branch_id, list);
  }
  const rows: TimelineBranch[] = [];
  const visit = (branchId: number, depth: number) => {
    rows.push({
      branchId,
      parent: parents.get(branchId) ?? null,
      depth,
      active: branchId === graph.active_branch,
      nodes: (nodesByBranch.get(branchId) ?? []).sort((a, b) => a.seq - b.seq),
    });
    for (const child of (children.get(branchId) ?? []).sort((a, b) => a - b)) {
      visit(child, depth + 1);
    }
  };
  for (const root of roots.sort((a, b) => a - b)) {
    visit(root, 0);
  }
  return { branchCount: rows.length, rows };
}

// --- composer (advisory gate mirror; the server stays authoritative) --------

const CHARACTER_TARGET_KINDS = new Set(["say", "give", "cooperate", "betray", "share_secret"]);

export function composerIssues(
  kind: string,
  target: string,
  content: string,
  state: StateView,
): string[] {
  const issues: string[] = [];
  const characterIds = new Set(state.world.characters.map((c) => c.id));
  if (CHARACTER_TARGET_KINDS.has(kind)) {
    if (!target) {
      issues.push(`${kind} needs a character target`);
    } else if (!characterIds.has(target)) {
      issues.push(`no character ${target}`);
    } else if (target === state.controlled_character) {
      issues.push(`${kind} cannot target yourself`);
    }
  } else if (kind === "move") {
    const controlled = state.agents[state.controlled_character];
    const here = state.world.locations.find((l) => l.id === controlled?.location_id);
    if (!target) {
      issues.push("move needs a location target");
    } else if (!here) {
      issues.push("current location unknown");
    } else if (!here.adjacent_to.includes(target)) {
      issues.push(`${target} is not adjacent to ${here.id}`);
    }
  } else if (kind !== "observe") {
    issues.push(`unknown action kind ${kind}`);
  }
  if (kind === "say" && !content.trim()) {
    issues.push("say needs content");
  }
  return issues;
}

// --- map --------------------------------------------------------------------

export interface CharacterMarker {
  characterId: string;
  locationId: string;
  x: number;
  y: number;
  controlled: boolean;
}

export function characterMarkers(layout: LayoutView, state: StateView): CharacterMarker[] {
  const tileById = new Map(layout.tiles.map((tile) => [tile.id, tile]));
  const markers: CharacterMarker[] = [];
  for (const agent of Object.values(state.agents)) {
    const tile = tileById.get(agent.location_id);
    if (!tile) continue; // location without a tile: not drawable
    markers.push({
      characterId: agent.character_id,
      locationId: agent.location_id,
      x: tile.x,
      y: tile.y,
      controlled: agent.character_id === state.controlled_character,
    });
  }
  return markers.sort((a, b) => a.characterId.localeCompare(b.characterId));
}
