/**
 * Client-side mean-variance re-scoring over cached risk samples.
 *
 * This is the only statistic the UI computes itself; it must agree with the
 * server's ranking bit-for-bit, so the arithmetic and the tie-breaking
 * (score, then standard deviation, then action id, then dose) replicate the
 * service exactly. Both runtimes use IEEE-754 doubles, so S values match to
 * the last bit.
 */

import type { RankedAction } from "./types.js";

export interface ScoredCandidate {
  id: string;
  dose: number;
  mu: number;
  sigma2: number;
  samples: number[];
}

export function meanVarianceScore(mu: number, sigma2: number, lam: number): number {
  if (sigma2 < 0 || lam < 0) {
    throw new Error("sigma2 and lambda must be non-negative");
  }
  return mu + lam * Math.sqrt(sigma2);
}

export function rescore(candidates: ScoredCandidate[], lam: number): RankedAction[] {
  const scored = candidates.map((c) => ({
    candidate: c,
    s: meanVarianceScore(c.mu, c.sigma2, lam),
    sigma: Math.sqrt(c.sigma2),
  }));
  scored.sort((a, b) => {
    if (a.s !== b.s) return a.s - b.s;
    if (a.sigma !== b.sigma) return a.sigma - b.sigma;
    if (a.candidate.id !== b.candidate.id) {
      return a.candidate.id < b.candidate.id ? -1 : 1;
    }
    return a.candidate.dose - b.candidate.dose;
  });
  return scored.map((entry, i) => ({
    id: entry.candidate.id,
    dose: entry.candidate.dose,
    mu: entry.candidate.mu,
    sigma2: entry.candidate.sigma2,
    S: entry.s,
    rank: i + 1,
    samples: entry.candidate.samples,
  }));
}

/** Empirical mean / unbiased variance of cached samples (divisor K-1). */
export function riskStats(samples: number[]): { mu: number; sigma2: number | null } {
  if (samples.length === 0) throw new Error("need at least one sample");
  const mu = samples.reduce((a, b) => a + b, 0) / samples.length;
  if (samples.length === 1) return { mu, sigma2: null };
  const ss = samples.reduce((a, b) => a + (b - mu) * (b - mu), 0);
  return { mu, sigma2: ss / (samples.length - 1) };
}
