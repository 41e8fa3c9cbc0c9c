/** DOM wiring for the what-if workbench. */

import { ApiClient, ApiError } from "./api.js";
import { rescore, type ScoredCandidate } from "./scoring.js";
import {
  appendHistory,
  createSession,
  replayRequests,
  validateRunInputs,
  type HistoryEntry,
  type SessionState,
} from "./state.js";
import {
  comparisonViewHtml,
  drawTraces,
  errorBannerHtml,
  rejectionHtml,
  type ComparisonCard,
} from "./render.js";
import type { MaskRejection, SimulationRequest, SimulationResponse } from "./types.js";

const $ = <T extends HTMLElement>(sel: string): T => {
  const el = document.querySelector(sel);
  if (!el) throw new Error(`missing element ${sel}`);
  return el as T;
};

let session: SessionState = createSession();
const api = new ApiClient(
  new URLSearchParams(location.search).get("api") ?? "http://localhost:8787");

async function loadActions(): Promise<void> {
  const list = await api.actions();
  const seen = new Set<string>();
  const box = $("#actions");
  box.innerHTML = "";
  for (const a of list.actions) {
    const key = `${a.id}@${a.dose}`;
    if (seen.has(key)) continue;
    seen.add(key);
    const label = document.createElement("label");
    label.innerHTML =
      `<input type="checkbox" data-id="${a.id}" data-dose="${a.dose}"> ` +
      `${a.id} @ ${a.dose}`;
    box.appendChild(label);
  }
}

function selectedCandidates(): { actionId: string; dose: number }[] {
  return Array.from(document.querySelectorAll<HTMLInputElement>(
    "#actions input:checked")).map((el) => ({
      actionId: el.dataset.id as string,
      dose: Number(el.dataset.dose),
    }));
}

function renderEntry(entry: HistoryEntry, lam: number): void {
  const candidates: ScoredCandidate[] = entry.rankReport.actions.map((a) => ({
    id: a.id, dose: a.dose, mu: a.mu, sigma2: a.sigma2, samples: a.samples,
  }));
  const ranked = rescore(candidates, lam);
  const cards: ComparisonCard[] = ranked.map((r) => ({
    ranked: r,
    simulation: entry.simulations.find(
      (s) => s.action.id === r.id && s.action.dose === r.dose) ?? null,
  }));
  const view = $("#comparison");
  view.innerHTML = comparisonViewHtml(cards)
    + entry.rejected.map((r) => rejectionHtml(r.actionId, r.reason)).join("");
  view.querySelectorAll<HTMLCanvasElement>("canvas.traces").forEach((canvas, i) => {
    const sim = cards[i]?.simulation;
    if (sim) drawTraces(canvas, sim);
  });
  $("#lambda-live-value").textContent = lam.toFixed(2);
}

function renderHistory(): void {
  const box = $("#history");
  box.innerHTML = session.history.map((h, i) =>
    `<li><button data-replay="${i}">replay</button> ` +
    `${h.timestamp} — ${h.requests.length} actions, K=${h.k}, ` +
    `seed=${h.seed}, &lambda;=${h.lambda}</li>`).join("");
}

async function runSimulations(requests: SimulationRequest[]): Promise<void> {
  const banner = $("#banner");
  banner.innerHTML = "";
  const k = Number(($("#k") as HTMLInputElement).value);
  const lam = Number(($("#lambda") as HTMLInputElement).value);
  const seed = Number(($("#seed") as HTMLInputElement).value);
  const simulations: SimulationResponse[] = [];
  const rejected: { actionId: string; reason: string }[] = [];
  try {
    for (const req of requests) {
      try {
        simulations.push(await api.simulate(req));
      } catch (err) {
        if (err instanceof ApiError && err.status === 422) {
          rejected.push({ actionId: req.action_id,
                          reason: (err.body as MaskRejection).reason });
        } else {
          throw err;
        }
      }
    }
    if (simulations.length === 0 && rejected.length > 0) {
      banner.innerHTML = errorBannerHtml("every selected action was infeasible");
    }
    const feasible = simulations.map((s) => s.action);
    const rankReport = await api.rank({
      baseline: { preset: session.baseline }, k, lambda: lam, seed,
      doses: [...new Set(feasible.map((a) => a.dose))].sort((a, b) => a - b),
      action_ids: [...new Set(feasible.map((a) => a.id))],
    });
    const entry: HistoryEntry = {
      timestamp: new Date().toISOString(), baseline: session.baseline,
      k, lambda: lam, seed, requests, simulations, rankReport, rejected,
    };
    session = appendHistory({ ...session, k, lambda: lam, seed }, entry);
    renderEntry(entry, lam);
    renderHistory();
    ($("#lambda-live") as HTMLInputElement).value = String(lam);
  } catch (err) {
    const detail = err instanceof ApiError
      ? `service error ${err.status}: ${JSON.stringify(err.body)}`
      : String(err);
    banner.innerHTML = errorBannerHtml(detail);
    banner.querySelector(".retry")?.addEventListener("click",
      () => void runSimulations(requests));
  }
}

function onRun(): void {
  const k = Number(($("#k") as HTMLInputElement).value);
  const lam = Number(($("#lambda") as HTMLInputElement).value);
  const seed = Number(($("#seed") as HTMLInputElement).value);
  const candidates = selectedCandidates();
  const verdict = validateRunInputs(k, lam, candidates);
  if (!verdict.ok) {
    $("#banner").innerHTML = errorBannerHtml(verdict.problems.join("; "));
    return;
  }
  const requests: SimulationRequest[] = candidates.map((c) => ({
    baseline: { preset: session.baseline }, action_id: c.actionId,
    dose: c.dose, k, lambda: lam, seed,
  }));
  void runSimulations(requests);
}

function onLambdaLive(): void {
  if (session.current === null) return;
  const lam = Number(($("#lambda-live") as HTMLInputElement).value);
  renderEntry(session.history[session.current], lam);
}

function onHistoryClick(event: Event): void {
  const target = event.target as HTMLElement;
  const idx = target.dataset.replay;
  if (idx === undefined) return;
  void runSimulations(replayRequests(session, Number(idx)));
}

window.addEventListener("DOMContentLoaded", () => {
  $("#run").addEventListener("click", onRun);
  $("#lambda-live").addEventListener("input", onLambdaLive);
  $("#history").addEventListener("click", onHistoryClick);
  $("#baseline").addEventListener("change", (e) => {
    session = { ...session, baseline: (e.target as HTMLSelectElement).value };
  });
  loadActions().catch((err) => {
    $("#banner").innerHTML = errorBannerHtml(`cannot reach service: ${err}`);
  });
});
