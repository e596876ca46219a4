// Typed client for the session service HTTP API. This module is the only
// place that talks to the network; everything above it works on plain data.

export interface SessionDescriptor {
  session_id: string;
  title: string;
  created_at: string;
  active_branch: number;
  turn: number;
  controlled_character: string;
}

export interface PacingView {
  plot_heat: number;
  interaction_density: number;
  npc_initiative_prob: number;
  side_quest_queue: string[];
}

export interface EventRecord {
  seq: number;
  turn: number;
  branch_id: number;
  actor: string;
  kind: string;
  payload: Record<string, unknown>;
  conflict_relevant: boolean;
}

export interface StoryNode {
  node_id: string;
  branch_id: number;
  seq: number;
  snapshot_ref: string;
}

export interface BranchInfo {
  parent_branch: number | null;
  fork_seq: number;
  origin_ref: string;
}

export interface StoryGraphView {
  nodes: StoryNode[];
  branches: Record<string, BranchInfo>;
  active_branch: number;
}

export interface GoalView {
  description: string;
  priority: number;
}

export interface CharacterView {
  id: string;
  name: string;
  archetype: string;
  public_description: string;
  secret?: string;
  goals: GoalView[];
  initial_location?: string;
  initial_affect: { valence: number; arousal: number };
}

export interface LocationView {
  id: string;
  name: string;
  description: string;
  adjacent_to: string[];
}

export interface RelationshipView {
  from: string;
  to: string;
  trust: number;
  power: number;
  dependency: number;
  alliance: boolean;
}

export interface WorldView {
  schema_version: number;
  title: string;
  temporal_cue: string;
  locations: LocationView[];
  characters: CharacterView[];
  relationships: RelationshipView[];
  conflicts: { id: string; description: string; parties: string[]; stakes: string }[];
  quests: { id: string; description: string; assigned_to: string; trigger: string; resolution: string }[];
}

export interface AgentView {
  character_id: string;
  location_id: string;
  affect: { valence: number; arousal: number };
  suspended: boolean;
  beliefs?: Record<string, number>;
  goals?: GoalView[];
  memory?: { turn: number; content: string; salience: number; pinned: boolean }[];
}

export interface StateView {
  session_id: string;
  turn: number;
  active_branch: number;
  controlled_character: string;
  state_hash: string;
  world: WorldView;
  agents: Record<string, AgentView>;
  pacing: PacingView;
}

export interface ActionResult {
  events: EventRecord[];
  turn: number;
  state_hash: string;
}

export interface EventsPage {
  branch: number;
  events: EventRecord[];
  last_seq: number;
}

export interface LayoutView {
  grid: [number, number];
  tiles: { id: string; x: number; y: number }[];
}

export interface ActionRequest {
  kind: string;
  target?: string | null;
  content?: string | null;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly detail: unknown = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function asApiError(response: Response): Promise<ApiError> {
  let code = "HTTP_ERROR";
  let message = `${response.status} ${response.statusText}`;
  let detail: unknown = null;
  try {
    const body = await response.json();
    if (body && typeof body.code === "string") {
      code = body.code;
      message = body.message ?? message;
      detail = body.detail ?? null;
    }
  } catch {
    // non-JSON error body; keep the HTTP fallback
  }
  return new ApiError(response.status, code, message, detail);
}

export class Client {
  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      throw await asApiError(response);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createFromStory(storyText: string, seed?: number): Promise<SessionDescriptor> {
    return this.post("/sessions", { story_text: storyText, seed });
  }

  createFromSpec(spec: unknown, seed?: number): Promise<SessionDescriptor> {
    return this.post("/sessions", { world_spec: spec, seed });
  }

  getSession(sessionId: string): Promise<SessionDescriptor & { pacing: PacingView }> {
    return this.request(`/sessions/${sessionId}`);
  }

  getState(sessionId: string): Promise<StateView> {
    return this.request(`/sessions/${sessionId}/state`);
  }

  postAction(sessionId: string, action: ActionRequest): Promise<ActionResult> {
    return this.post(`/sessions/${sessionId}/actions`, action);
  }

  switchRole(sessionId: string, characterId: string): Promise<SessionDescriptor> {
    return this.post(`/sessions/${sessionId}/role`, { character_id: characterId });
  }

  rewind(sessionId: string, nodeId: string): Promise<{ new_branch_id: number }> {
    return this.post(`/sessions/${sessionId}/rewind`, { node_id: nodeId });
  }

  getGraph(sessionId: string): Promise<StoryGraphView> {
    return this.request(`/sessions/${sessionId}/graph`);
  }

  getEvents(sessionId: string, branch?: number, sinceSeq?: number): Promise<EventsPage> {
    const params = new URLSearchParams();
    if (branch !== undefined) params.set("branch", String(branch));
    if (sinceSeq !== undefined) params.set("since_seq", String(sinceSeq));
    const query = params.toString();
    return this.request(`/sessions/${sessionId}/events${query ? `?${query}` : ""}`);
  }

  getLayout(sessionId: string): Promise<LayoutView> {
    return this.request(`/sessions/${sessionId}/layout`);
  }

  // Reads the ND-JSON event stream until aborted; blank heartbeat lines are
  // skipped. Resolves when the server closes the stream or `signal` aborts.
  async stream(
    sessionId: string,
    onEvent: (event: EventRecord) => void,
    signal: AbortSignal,
  ): Promise<void> {
    const response = await fetch(`${this.baseUrl}/sessions/${sessionId}/stream`, { signal });
    if (!response.ok) {
      throw await asApiError(response);
    }
    if (!response.body) {
      throw new ApiError(response.status, "NO_BODY", "stream response has no body");
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let newline = buffer.indexOf("\n");
        while (newline >= 0) {
          const line = buffer.slice(0, newline).trim();
          buffer = buffer.slice(newline + 1);
          if (line) {
            onEvent(JSON.parse(line) as EventRecord);
          }
          newline = buffer.indexOf("\n");
        }
      }
    } catch (error) {
      if (!signal.aborted) throw error;
    } finally {
      reader.releaseLock();
    }
  }
}
