/** Thin fetch client for the simulation service. */

import type {
  ActionListResponse,
  RankReport,
  RankRequest,
  SimulationRequest,
  SimulationResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public body: unknown) {
    super(`service returned ${status}`);
  }
}

export class ApiClient {
  constructor(private baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, init);
    const body = await resp.json().catch(() => null);
    if (!resp.ok) throw new ApiError(resp.status, body);
    return body as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/api/health");
  }

  actions(): Promise<ActionListResponse> {
    return this.request("/api/actions");
  }

  simulate(req: SimulationRequest): Promise<SimulationResponse> {
    return this.request("/api/simulate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  rank(req: RankRequest): Promise<RankReport> {
    return this.request("/api/rank", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }
}
