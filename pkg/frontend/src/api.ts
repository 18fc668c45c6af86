// Thin fetch client for the verification service.

import type {
  CharacterEntry,
  MessageResponse,
  SceneSpan,
  SessionOverrides,
  StorySummary,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    headers: { 'content-type': 'application/json' },
    ...init,
  });
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (body.detail !== undefined) {
        detail = typeof body.detail === 'string' ? body.detail : JSON.stringify(body.detail);
      }
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ServiceClient {
  constructor(private readonly baseUrl: string) {}

  listStories(): Promise<StorySummary[]> {
    return request(`${this.baseUrl}/v1/stories`);
  }

  listCharacters(storyId: string): Promise<CharacterEntry[]> {
    return request(`${this.baseUrl}/v1/stories/${encodeURIComponent(storyId)}/characters`);
  }

  getTimeline(storyId: string): Promise<SceneSpan[]> {
    return request(`${this.baseUrl}/v1/stories/${encodeURIComponent(storyId)}/timeline`);
  }

  async createSession(options: {
    storyId: string;
    character: string;
    method: string;
    cutoff?: number | null;
    overrides?: SessionOverrides;
  }): Promise<string> {
    const body: Record<string, unknown> = {
      story_id: options.storyId,
      character: options.character,
      method: options.method,
    };
    if (options.cutoff !== undefined && options.cutoff !== null) {
      body.cutoff = options.cutoff;
    }
    if (options.overrides) {
      body.overrides = options.overrides;
    }
    const payload = await request<{ session_id: string }>(`${this.baseUrl}/v1/sessions`, {
      method: 'POST',
      body: JSON.stringify(body),
    });
    return payload.session_id;
  }

  sendMessage(
    sessionId: string,
    text: string,
    overrides?: SessionOverrides,
  ): Promise<MessageResponse> {
    const body: Record<string, unknown> = { text };
    if (overrides && Object.keys(overrides).length > 0) {
      body.overrides = overrides;
    }
    return request(`${this.baseUrl}/v1/sessions/${encodeURIComponent(sessionId)}/message`, {
      method: 'POST',
      body: JSON.stringify(body),
    });
  }
}
