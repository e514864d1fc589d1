/** Typed client for the three search endpoints. All semantics live on
 * the server; this file only moves JSON. */

export interface Suggestion {
  text: string;
  score: number;
}

/** record id, display name */
export type Alternative = [string, string];

export interface Annotation {
  span: [number, number];
  kind: string;
  text: string;
  explanation: string;
  chosen: string | null;
  alternatives: Alternative[];
  pinned: boolean;
}

export interface Interpretation {
  entity: string;
  logical_form: string;
  tags: string[];
  tokens: string[];
  score: number;
  annotations: Annotation[];
}

export interface ResultRow {
  id: string;
  entity: string;
  name: string | null;
  modified_at: string;
  values: Record<string, unknown>;
}

export interface QueryResponse {
  query: string;
  intent: string;
  interpretations: Interpretation[];
  results: ResultRow[];
  fallback_available: boolean;
  trace: Record<string, unknown>;
}

export interface QueryOptions {
  forceKeyword?: boolean;
  pins?: Record<string, string>;
}

export interface ApiLike {
  suggest(q: string, limit: number, signal?: AbortSignal): Promise<Suggestion[]>;
  query(q: string, options?: QueryOptions): Promise<QueryResponse>;
  remediate(q: string, annotationIndex: number, recordId: string): Promise<QueryResponse>;
}

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "ApiError";
  }
}

export class SearchApi implements ApiLike {
  constructor(
    private readonly base = "",
    private readonly user = "u_alice",
  ) {}

  async suggest(q: string, limit: number, signal?: AbortSignal): Promise<Suggestion[]> {
    const params = new URLSearchParams({ q, user: this.user, limit: String(limit) });
    const data = await this.call(`/suggest?${params}`, { signal });
    return (data as { suggestions: Suggestion[] }).suggestions;
  }

  async query(q: string, options: QueryOptions = {}): Promise<QueryResponse> {
    return (await this.call("/query", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        q,
        user: this.user,
        pins: options.pins ?? {},
        force_keyword: options.forceKeyword ?? false,
      }),
    })) as QueryResponse;
  }

  async remediate(q: string, annotationIndex: number, recordId: string): Promise<QueryResponse> {
    return (await this.call("/remediate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ q, user: this.user, pin: [annotationIndex, recordId] }),
    })) as QueryResponse;
  }

  private async call(path: string, init: RequestInit): Promise<unknown> {
    let response: Response;
    try {
      response = await fetch(this.base + path, init);
    } catch (err) {
      if (err instanceof Error && err.name === "AbortError") throw err;
      throw new ApiError("search service unreachable");
    }
    if (!response.ok) {
      let detail = `request failed (${response.status})`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body.detail !== undefined) detail = String(body.detail);
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(detail, response.status);
    }
    return response.json();
  }
}
