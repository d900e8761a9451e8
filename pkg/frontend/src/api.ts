/** Typed client for the review-service JSON endpoints. */

export type Action = "accept" | "edit" | "reject";
export type ReviewStateName = "Pending" | "Accepted" | "Edited" | "Rejected";

export interface OutcomeContext {
  objective: string;
  criterion: string;
}

export interface Member {
  query_id: string;
  marking: string;
  language: string;
  original_text: string;
  text: string;
  state: ReviewStateName;
  version: number;
}

export interface TaskGroup {
  outcome_id: string;
  paraphrase_index: number;
  outcome: Partial<OutcomeContext>;
  members: Member[];
}

export interface QueuePage {
  groups: TaskGroup[];
  total_pending_groups: number;
}

export interface Progress {
  pending: number;
  accepted: number;
  edited: number;
  rejected: number;
  total: number;
}

export interface RunContext {
  run_id: string;
  source_language: string;
  country_name: Record<string, string>;
  implicit_phrase: Record<string, string>;
}

export interface DecisionRequest {
  query_id: string;
  action: Action;
  expected_version: number;
  new_text?: string;
  reason?: string;
  reviewer_id?: string;
}

export interface DecisionOk {
  query_id: string;
  new_version: number;
  state_after: ReviewStateName;
}

/** Body of a 409: a versioned-decision conflict or a blocked release. */
export interface ConflictInfo {
  message: string;
  current_version?: number;
  current_state?: ReviewStateName;
  pending?: number;
}

export class ConflictError extends Error {
  constructor(readonly info: ConflictInfo) {
    super(info.message);
    this.name = "ConflictError";
  }
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`request failed with status ${status}`);
    this.name = "ApiError";
  }
}

export class NetworkError extends Error {
  constructor(readonly underlying: unknown) {
    super("network failure; the service did not receive the request");
    this.name = "NetworkError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike,
    private readonly token?: string,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const headers: Record<string, string> = {};
    if (init?.body) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;

    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, { ...init, headers });
    } catch (err) {
      throw new NetworkError(err);
    }
    if (response.status === 409) {
      const body = (await response.json()) as { detail: ConflictInfo };
      throw new ConflictError(body.detail);
    }
    if (!response.ok) {
      let detail: unknown = null;
      try {
        detail = await response.json();
      } catch {
        detail = null;
      }
      throw new ApiError(response.status, detail);
    }
    return response.json();
  }

  queue(limit = 20, offset = 0): Promise<QueuePage> {
    return this.request(`/api/queue?limit=${limit}&offset=${offset}`) as Promise<QueuePage>;
  }

  progress(): Promise<Progress> {
    return this.request("/api/progress") as Promise<Progress>;
  }

  context(): Promise<RunContext> {
    return this.request("/api/context") as Promise<RunContext>;
  }

  decide(request: DecisionRequest): Promise<DecisionOk> {
    return this.request("/api/decision", {
      method: "POST",
      body: JSON.stringify(request),
    }) as Promise<DecisionOk>;
  }

  release(): Promise<{ released: boolean }> {
    return this.request("/api/release", { method: "POST" }) as Promise<{ released: boolean }>;
  }
}
