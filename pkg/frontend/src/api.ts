import type {
  AttrsResponse,
  HealthResponse,
  ObfuscateRequest,
  ObfuscateResponse,
} from "./types.js";

/** Error carrying the HTTP status; status 0 means the service was
 * unreachable (network failure before any response). */
export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ConsoleClient {
  private fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    // bind lazily so a global fetch stubbed by tests is picked up per call
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  getAttrs(): Promise<AttrsResponse> {
    return this.request<AttrsResponse>("/attrs");
  }

  getHealth(): Promise<HealthResponse> {
    return this.request<HealthResponse>("/health");
  }

  obfuscate(req: ObfuscateRequest): Promise<ObfuscateResponse> {
    return this.request<ObfuscateResponse>("/obfuscate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      // non-JSON body; fall through to the status check
    }
    if (!resp.ok) {
      const msg =
        body !== null &&
        typeof body === "object" &&
        typeof (body as { error?: unknown }).error === "string"
          ? (body as { error: string }).error
          : `${resp.status} ${resp.statusText}`;
      throw new ApiError(msg, resp.status);
    }
    if (body === null || typeof body !== "object") {
      throw new ApiError("service returned a non-JSON body", resp.status);
    }
    return body as T;
  }
}
