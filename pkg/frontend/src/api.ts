/**
 * Typed client for the fedtrace HTTP API.
 *
 * The fetch function is injected so tests can run against an in-process
 * fixture server; the browser bootstrap passes window.fetch.
 */

import type {
  FixBody,
  LocalizationBody,
  OpenSessionResponse,
  RoundsResponse,
  StepDirection,
  StepResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    const body = await response.json();
    if (!response.ok) {
      const err = (body as { error?: { code?: string; message?: string } }).error ?? {};
      throw new ApiError(response.status, err.code ?? "unknown", err.message ?? "request failed");
    }
    return body as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getRounds(branch?: string): Promise<RoundsResponse> {
    const query = branch ? `?branch=${encodeURIComponent(branch)}` : "";
    return this.request<RoundsResponse>(`/rounds${query}`);
  }

  setBreakpoint(roundId: number, clientId?: number): Promise<{ breakpoint_id: number }> {
    return this.post("/breakpoints", { round_id: roundId, client_id: clientId ?? null });
  }

  openSession(roundId: number): Promise<OpenSessionResponse> {
    return this.post("/sessions", { round_id: roundId, granularity: "round" });
  }

  step(sessionId: number, direction: StepDirection): Promise<StepResponse> {
    return this.post(`/sessions/${sessionId}/step`, { direction });
  }

  resume(sessionId: number): Promise<{ replayed_rounds: number[]; caught_up_round: number }> {
    return this.post(`/sessions/${sessionId}/resume`, {});
  }

  localize(
    sessionId: number,
    options: { threshold?: number; kappa?: number; eta?: number; seed?: number } = {},
  ): Promise<LocalizationBody> {
    return this.post(`/sessions/${sessionId}/localize`, options);
  }

  fix(
    sessionId: number,
    faulty: number[],
    fromRound: number,
    mode: "reaggregate" | "retrain" = "reaggregate",
  ): Promise<FixBody> {
    return this.post(`/sessions/${sessionId}/fix`, {
      faulty,
      from_round: fromRound,
      mode,
    });
  }
}
