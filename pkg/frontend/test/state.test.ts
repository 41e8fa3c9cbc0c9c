import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import { test } from "node:test";

import {
  appendHistory,
  createSession,
  replayRequests,
  validateRunInputs,
  type HistoryEntry,
} from "../src/state.js";
import type { RankReport, SimulationResponse } from "../src/types.js";

const fixture = <T>(name: string): T =>
  JSON.parse(readFileSync(new URL(`../../test/fixtures/${name}`, import.meta.url), "utf8"));

function sampleEntry(): HistoryEntry {
  const sim = fixture<SimulationResponse>("simulate_dofetilide.json");
  const rank = fixture<RankReport>("rank_lambda_0_6.json");
  return {
    timestamp: "2026-08-08T00:00:00Z",
    baseline: "healthy",
    k: 3,
    lambda: 0.6,
    seed: 21,
    requests: [{ baseline: { preset: "healthy" }, action_id: "dofetilide",
                 dose: 1.0, k: 3, lambda: 0.6, seed: 21 }],
    simulations: [sim],
    rankReport: rank,
    rejected: [],
  };
}

test("history entries are immutable once recorded", () => {
  let session = createSession();
  session = appendHistory(session, sampleEntry());
  const entry = session.history[0];
  assert.ok(Object.isFrozen(entry));
  assert.ok(Object.isFrozen(entry.requests[0]));
  assert.ok(Object.isFrozen(entry.rankReport.actions));
  assert.throws(() => {
    (entry as { k: number }).k = 99;
  });
  assert.throws(() => {
    (session.history as HistoryEntry[]).push(sampleEntry());
  });
});

test("replay returns the exact stored request", () => {
  let session = createSession();
  session = appendHistory(session, sampleEntry());
  const replayed = replayRequests(session, 0);
  assert.deepEqual(replayed, sampleEntry().requests);
  // replaying twice gives identical requests (deterministic contract)
  assert.deepEqual(replayRequests(session, 0), replayed);
  assert.throws(() => replayRequests(session, 5));
});

test("appending history preserves earlier entries and points at the newest", () => {
  let session = createSession();
  session = appendHistory(session, sampleEntry());
  const second = { ...sampleEntry(), seed: 22 };
  session = appendHistory(session, second);
  assert.equal(session.history.length, 2);
  assert.equal(session.current, 1);
  assert.equal(session.history[0].seed, 21);
  assert.equal(session.history[1].seed, 22);
});

test("client-side validation blocks bad run inputs", () => {
  const some = [{ actionId: "placebo", dose: 1 }];
  assert.equal(validateRunInputs(0, 0.6, some).ok, false);   // K = 0 blocked
  assert.equal(validateRunInputs(2.5, 0.6, some).ok, false);
  assert.equal(validateRunInputs(3, -1, some).ok, false);
  assert.equal(validateRunInputs(3, 0.6, []).ok, false);
  assert.equal(validateRunInputs(3, 0.6, some).ok, true);
  assert.equal(validateRunInputs(1, 0, some).ok, true);
});
