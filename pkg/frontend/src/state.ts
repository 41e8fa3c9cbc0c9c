/**
 * Session state: selections, live controls, and an append-only history.
 * History entries are deep-frozen at insertion; each stores the exact
 * requests and seed, so replay re-issues identical calls.
 */

import type { RankReport, SimulationRequest, SimulationResponse } from "./types.js";

export interface CandidateSelection {
  actionId: string;
  dose: number;
}

export interface HistoryEntry {
  timestamp: string;
  baseline: string;
  k: number;
  lambda: number;
  seed: number;
  requests: SimulationRequest[];
  simulations: SimulationResponse[];
  rankReport: RankReport;
  rejected: { actionId: string; reason: string }[];
}

export interface SessionState {
  baseline: string;
  candidates: CandidateSelection[];
  k: number;
  lambda: number;
  seed: number;
  history: readonly HistoryEntry[];
  current: number | null; // index into history shown in the comparison view
}

export function createSession(): SessionState {
  return {
    baseline: "healthy",
    candidates: [],
    k: 3,
    lambda: 0.6,
    seed: 1,
    history: Object.freeze([]),
    current: null,
  };
}

function deepFreeze<T>(value: T): T {
  if (value !== null && typeof value === "object" && !Object.isFrozen(value)) {
    Object.freeze(value);
    for (const key of Object.getOwnPropertyNames(value)) {
      deepFreeze((value as Record<string, unknown>)[key]);
    }
  }
  return value;
}

export function appendHistory(session: SessionState, entry: HistoryEntry): SessionState {
  const frozen = deepFreeze(entry);
  const history = Object.freeze([...session.history, frozen]);
  return { ...session, history, current: history.length - 1 };
}

/** The exact stored requests for an entry, for deterministic replay. */
export function replayRequests(session: SessionState, index: number): SimulationRequest[] {
  const entry = session.history[index];
  if (!entry) throw new Error(`no history entry ${index}`);
  return entry.requests.map((r) => ({ ...r, baseline: { ...r.baseline } }));
}

export interface ValidationResult {
  ok: boolean;
  problems: string[];
}

export function validateRunInputs(k: number, lambda: number,
                                  candidates: CandidateSelection[]): ValidationResult {
  const problems: string[] = [];
  if (!Number.isInteger(k) || k < 1) problems.push("K must be an integer >= 1");
  if (!(lambda >= 0)) problems.push("lambda must be non-negative");
  if (candidates.length === 0) problems.push("select at least one action");
  return { ok: problems.length === 0, problems };
}
