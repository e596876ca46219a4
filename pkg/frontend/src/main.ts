// Application wiring: one session view per page, driven entirely by API
// responses and the event stream. Optimistic rendering is deliberately
// absent; only server-confirmed events reach the feed.

import { ApiError, Client } from "./api.js";
import type { EventRecord, LayoutView, StateView } from "./api.js";
import {
  applyEvent,
  applyEvents,
  buildTimeline,
  characterMarkers,
  composerIssues,
  emptyFeed,
  resetFeed,
} from "./model.js";
import type { FeedState } from "./model.js";
import {
  renderBanner,
  renderCharacterCards,
  renderFeed,
  renderMap,
  renderPacing,
  renderTimeline,
} from "./render.js";

const REFRESH_KINDS = new Set([
  "SCENE_CHANGE",
  "ROLE_SWITCH",
  "ALLIANCE_DISSOLVED",
  "move",
]);

export interface View {
  banner: HTMLElement;
  feed: HTMLElement;
  cards: HTMLElement;
  map: HTMLElement;
  timeline: HTMLElement;
  pacing: HTMLElement;
  composer: HTMLFormElement;
  issues: HTMLElement;
  roleSelect: HTMLSelectElement;
}

function mustGet<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class App {
  private readonly client: Client;
  private sessionId = "";
  private feed: FeedState = emptyFeed();
  private state: StateView | null = null;
  private layout: LayoutView | null = null;
  private streamAbort: AbortController | null = null;

  constructor(
    baseUrl: string,
    private readonly view: View,
  ) {
    this.client = new Client(baseUrl);
  }

  // Accepts prose for LLM extraction, or a pasted world-spec JSON document
  // (handy against an offline replay-mode server).
  async start(input: string): Promise<void> {
    const trimmed = input.trim();
    const descriptor = trimmed.startsWith("{")
      ? await this.client.createFromSpec(JSON.parse(trimmed))
      : await this.client.createFromStory(trimmed);
    this.sessionId = descriptor.session_id;
    this.layout = await this.client.getLayout(this.sessionId).catch((error) => {
      if (error instanceof ApiError && error.code === "LAYOUT_UNSAT") return null;
      throw error;
    });
    this.feed = resetFeed((await this.client.getEvents(this.sessionId)).events);
    await this.refresh();
    this.subscribe();
  }

  // Single stream subscription; on drop, resume from the last seen seq.
  private subscribe(): void {
    this.streamAbort?.abort();
    const abort = new AbortController();
    this.streamAbort = abort;
    const pump = async (): Promise<void> => {
      while (!abort.signal.aborted) {
        try {
          await this.client.stream(this.sessionId, (event) => this.onStreamEvent(event), abort.signal);
        } catch {
          // fall through to resume
        }
        if (abort.signal.aborted) return;
        const page = await this.client.getEvents(this.sessionId, undefined, this.feed.lastSeq);
        this.feed = applyEvents(this.feed, page.events);
        this.drawFeed();
      }
    };
    void pump();
  }

  private onStreamEvent(event: EventRecord): void {
    if (event.kind === "REWIND_MARK") {
      // branch switch: rebuild the feed from the new branch's history
      void this.client.getEvents(this.sessionId).then((page) => {
        this.feed = resetFeed(page.events);
        return this.refresh();
      });
      return;
    }
    this.feed = applyEvent(this.feed, event);
    this.drawFeed();
    if (REFRESH_KINDS.has(event.kind)) {
      void this.refresh();
    }
  }

  private drawFeed(): void {
    renderFeed(this.view.feed, this.feed, this.state?.controlled_character ?? "");
  }

  private async refresh(): Promise<void> {
    this.state = await this.client.getState(this.sessionId);
    const graph = await this.client.getGraph(this.sessionId);
    renderCharacterCards(this.view.cards, this.state);
    renderPacing(this.view.pacing, this.state.pacing);
    renderTimeline(this.view.timeline, buildTimeline(graph), (nodeId) => {
      void this.rewind(nodeId);
    });
    if (this.layout) {
      renderMap(this.view.map, this.layout, characterMarkers(this.layout, this.state));
    }
    this.syncRoleOptions();
    this.drawFeed();
  }

  private syncRoleOptions(): void {
    if (!this.state) return;
    const select = this.view.roleSelect;
    while (select.firstChild) select.removeChild(select.firstChild);
    for (const character of this.state.world.characters) {
      const option = document.createElement("option");
      option.value = character.id;
      option.textContent = character.name;
      option.selected = character.id === this.state.controlled_character;
      select.appendChild(option);
    }
  }

  async submitAction(kind: string, target: string, content: string): Promise<void> {
    if (!this.state) return;
    const issues = composerIssues(kind, target, content, this.state);
    this.view.issues.textContent = issues.join("; ");
    if (issues.length > 0) return;
    try {
      const result = await this.client.postAction(this.sessionId, {
        kind,
        target: target || null,
        content: content || null,
      });
      this.feed = applyEvents(this.feed, result.events);
      renderBanner(this.view.banner, null);
      await this.refresh();
    } catch (error) {
      if (error instanceof ApiError && error.code === "ACTION_BLOCKED") {
        const reason = (error.detail as { reason?: string } | null)?.reason ?? "blocked";
        this.view.issues.textContent = `blocked: ${reason}`;
        return; // non-fatal notice
      }
      throw error;
    }
  }

  async switchRole(characterId: string): Promise<void> {
    await this.client.switchRole(this.sessionId, characterId);
    await this.refresh();
  }

  async rewind(nodeId: string): Promise<void> {
    await this.client.rewind(this.sessionId, nodeId);
    const page = await this.client.getEvents(this.sessionId);
    this.feed = resetFeed(page.events);
    await this.refresh();
  }
}

function wire(): void {
  const view: View = {
    banner: mustGet("banner"),
    feed: mustGet("feed"),
    cards: mustGet("cards"),
    map: mustGet("map"),
    timeline: mustGet("timeline"),
    pacing: mustGet("pacing"),
    composer: mustGet<HTMLFormElement>("composer"),
    issues: mustGet("issues"),
    roleSelect: mustGet<HTMLSelectElement>("role-select"),
  };
  const app = new App("", view);

  const startForm = mustGet<HTMLFormElement>("start-form");
  startForm.addEventListener("submit", (submitEvent) => {
    submitEvent.preventDefault();
    const story = (mustGet<HTMLTextAreaElement>("story-text").value ?? "").trim();
    if (!story) return;
    app.start(story).catch((error) => {
      const message =
        error instanceof ApiError ? `${error.code}: ${error.message}` : String(error);
      renderBanner(view.banner, message);
    });
  });

  view.composer.addEventListener("submit", (submitEvent) => {
    submitEvent.preventDefault();
    const kind = mustGet<HTMLSelectElement>("action-kind").value;
    const target = mustGet<HTMLInputElement>("action-target").value.trim();
    const content = mustGet<HTMLInputElement>("action-content").value;
    void app.submitAction(kind, target, content);
  });

  view.roleSelect.addEventListener("change", () => {
    void app.switchRole(view.roleSelect.value);
  });
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", wire);
}
