/** Thin typed client for the gateway JSON endpoints. */

export interface KnowledgeBase {
  kb_id: string;
  display_name: string;
  source_kind: string;
}

export interface BootstrapPayload {
  display_name: string;
  course_id: string;
  session_id: string;
  knowledge_bases: KnowledgeBase[];
}

export interface ChatReply {
  turn_id: string;
  response_text: string;
  kb_id: string;
  provider_id: string;
  fallback_used: boolean;
  context_truncated: boolean;
}

export interface ServerTurn {
  turn_id: string;
  kb_id: string;
  query: string;
  response_text: string;
  rating: number | null;
  fallback_used: boolean;
  created_at: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `request failed with status ${response.status}`;
}

export class GatewayClient {
  // The token lives only in this object; nothing is written to
  // localStorage or cookies.
  constructor(
    private readonly token: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
    private readonly baseUrl: string = "",
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    const init: RequestInit = {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body === undefined ? {} : { "Content-Type": "application/json" }),
      },
      ...(body === undefined ? {} : { body: JSON.stringify(body) }),
    };
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      throw new ApiError(response.status, await errorDetail(response));
    }
    return response;
  }

  async bootstrap(): Promise<BootstrapPayload> {
    const response = await this.request("GET", "/session/bootstrap");
    return (await response.json()) as BootstrapPayload;
  }

  async listTurns(): Promise<ServerTurn[]> {
    const response = await this.request("GET", "/session/turns");
    const body = (await response.json()) as { turns: ServerTurn[] };
    return body.turns;
  }

  async sendQuery(kbId: string, query: string): Promise<ChatReply> {
    const response = await this.request("POST", "/chat", { kb_id: kbId, query });
    return (await response.json()) as ChatReply;
  }

  /** Resolves only on a 204 acknowledgment; everything else throws. */
  async submitRating(turnId: string, stars: number): Promise<void> {
    await this.request("POST", `/turns/${encodeURIComponent(turnId)}/rating`, { rating: stars });
  }
}
