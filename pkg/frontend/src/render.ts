/**
 * Pure view builders. Every number rendered here comes straight from a
 * response field or from the client-side mean-variance re-scoring; nothing
 * else is computed. HTML is built as strings so the builders are testable
 * without a DOM.
 */

import type { RankedAction } from "./types.js";
import type { IntervalRow, SimulationResponse } from "./types.js";

const esc = (s: string): string =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

const fmt = (x: number, digits = 4): string => x.toFixed(digits);

export function intervalFlagsHtml(row: IntervalRow | null): string {
  if (!row) return `<span class="flags none">no interval readout</span>`;
  const flag = (label: string, ok: boolean, value: number) =>
    `<span class="flag ${ok ? "normal" : "abnormal"}" ` +
    `title="${label} ${fmt(value, 1)} ms">${label}:${ok ? "normal" : "abnormal"}</span>`;
  return [
    flag("QTc", row.qtc_normal, row.qtc_ms),
    flag("PR", row.pr_normal, row.pr_ms),
    flag("TpTe", row.tpte_normal, row.tpte_ms),
  ].join(" ");
}

export function riskBarHtml(mu: number, sigma2: number | null): string {
  const sigma = sigma2 === null ? null : Math.sqrt(sigma2);
  const width = Math.min(100, mu * 100);
  const spread = sigma === null ? 0 : Math.min(100, sigma * 100);
  const sigmaText = sigma === null ? "n/a" : fmt(sigma);
  return (
    `<div class="risk-bar" title="mu=${fmt(mu)} sigma=${sigmaText}">` +
    `<div class="mu" style="width:${fmt(width, 2)}%"></div>` +
    `<div class="sigma" style="width:${fmt(spread, 2)}%"></div>` +
    `<span class="label">&mu;=${fmt(mu)} &plusmn; &sigma;=${sigmaText}</span></div>`
  );
}

export interface ComparisonCard {
  ranked: RankedAction;
  simulation: SimulationResponse | null;
}

export function comparisonCardHtml(card: ComparisonCard): string {
  const { ranked, simulation } = card;
  const intervals = simulation?.intervals?.[0] ?? null;
  const seedNote = simulation ? `seeds ${simulation.seeds.join(",")}` : "no simulation";
  return (
    `<article class="card" data-action="${esc(ranked.id)}" data-rank="${ranked.rank}">` +
    `<header><span class="rank">#${ranked.rank}</span> ` +
    `<strong>${esc(ranked.id)}</strong> @ dose ${fmt(ranked.dose, 2)}</header>` +
    `<div class="score">S = ${fmt(ranked.S, 6)}</div>` +
    riskBarHtml(ranked.mu, ranked.sigma2) +
    `<div class="intervals">${intervalFlagsHtml(intervals)}</div>` +
    `<canvas class="traces" width="360" height="140"></canvas>` +
    `<footer class="prov">${esc(seedNote)}</footer>` +
    `</article>`
  );
}

export function comparisonViewHtml(cards: ComparisonCard[]): string {
  const ordered = [...cards].sort((a, b) => a.ranked.rank - b.ranked.rank);
  return ordered.map(comparisonCardHtml).join("\n");
}

export function rejectionHtml(actionId: string, reason: string): string {
  return (
    `<article class="card rejected" data-action="${esc(actionId)}">` +
    `<header><strong>${esc(actionId)}</strong></header>` +
    `<div class="mask-reason">infeasible: ${esc(reason)}</div></article>`
  );
}

export function errorBannerHtml(message: string): string {
  return `<div class="banner error">${esc(message)} <button class="retry">retry</button></div>`;
}

/** Draw the K sampled traces (channel 0) behind the EPK template trace. */
export function drawTraces(canvas: HTMLCanvasElement,
                           simulation: SimulationResponse): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const traces = simulation.waveforms.map((channels) => channels[0]);
  const template = simulation.epk_trace;
  const all = traces.flat().concat(template);
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const scaleY = (v: number) =>
    canvas.height - ((v - lo) / (hi - lo || 1)) * (canvas.height - 8) - 4;

  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const plot = (trace: number[], style: string, width: number) => {
    ctx.strokeStyle = style;
    ctx.lineWidth = width;
    ctx.beginPath();
    trace.forEach((v, i) => {
      const x = (i / (trace.length - 1)) * canvas.width;
      if (i === 0) ctx.moveTo(x, scaleY(v));
      else ctx.lineTo(x, scaleY(v));
    });
    ctx.stroke();
  };
  for (const trace of traces) plot(trace, "rgba(70,130,180,0.55)", 1);
  plot(template, "#c0392b", 1.5);
}
