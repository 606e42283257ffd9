/** Pure HTML renderers. Everything here is a function of store state so the
 * test suite can assert on markup without a browser. */

import type { AlertCard, RunStore } from "./store.js";
import type { RunBrief } from "./types.js";

export function esc(text: unknown): string {
  return String(text ?? "")
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fmt(v: number | undefined, digits = 3): string {
  if (v === undefined || Number.isNaN(v)) return "-";
  return v.toFixed(digits);
}

// Feed shows newest first; the drawer holds whatever is still batched.
export const FEED_RENDER_CAP = 200;

export function alertCardHtml(card: AlertCard): string {
  const cls = ["card", `sev-${card.severity}`, `st-${card.status}`];
  if (card.pending) cls.push("pending");
  const canTriage = card.status === "delivered" && !card.verdict && !card.pending;
  const actions = canTriage
    ? `<span class="actions">
        <button data-alert="${esc(card.alertId)}" data-verdict="confirm">confirm</button>
        <button data-alert="${esc(card.alertId)}" data-verdict="dismiss">dismiss</button>
      </span>`
    : `<span class="resolved">${esc(card.verdict ?? card.status)}</span>`;
  const reason = card.reason ? `<div class="reason">${esc(card.reason)}</div>` : "";
  const released = card.releasedFromBatch ? `<span class="tag">from batch</span>` : "";
  return `<div class="${cls.join(" ")}" data-card="${esc(card.alertId)}">
    <div class="line">
      <span class="step">#${card.step}</span>
      <span class="trigger">${esc(card.trigger)}</span>
      <span class="value">${fmt(card.value)} / ${fmt(card.threshold)}</span>
      ${released}
      ${actions}
    </div>
    ${reason}
  </div>`;
}

export function feedHtml(store: RunStore): string {
  const visible = store.alerts.filter((c) => c.status !== "batched");
  const slice = visible.slice(-FEED_RENDER_CAP).reverse();
  if (!slice.length) return `<div class="empty">no alerts yet</div>`;
  return slice.map(alertCardHtml).join("");
}

export function drawerHtml(store: RunStore): string {
  const batched = store.alerts.filter((c) => c.status === "batched");
  if (!batched.length) return `<div class="empty">batch queue empty</div>`;
  return batched.slice(-FEED_RENDER_CAP).map(alertCardHtml).join("");
}

export function batchedCount(store: RunStore): number {
  return store.alerts.filter((c) => c.status === "batched").length;
}

export function indicatorsHtml(store: RunStore): string {
  const dots = [0, 1, 2]
    .map((i) => `<span class="dot ${i < store.streak ? "on" : ""}"></span>`)
    .join("");
  return `
    <span class="ind"><label>&theta;<sub>u</sub></label><b id="theta-u-value">${fmt(store.thetaU, 2)}</b></span>
    <span class="ind"><label>&theta;<sub>a</sub></label><b id="theta-a-value">${fmt(store.thetaA, 2)}</b></span>
    <span class="ind"><label>dismissal streak</label><span class="dots">${dots}</span></span>
    <span class="ind"><label>step</label><b>${store.lastStep < 0 ? "-" : store.lastStep}</b></span>
    <span class="ind"><label>episode</label><b>${store.episode}</b></span>`;
}

export function metricsHtml(store: RunStore): string {
  const rows: string[] = [
    `<tr><td>steps seen</td><td>${store.steps}</td></tr>`,
    `<tr><td>injections</td><td>${store.injections}</td></tr>`,
    `<tr><td>alerts</td><td>${store.alerts.length}</td></tr>`,
    `<tr><td>fine-tunes</td><td>${store.fineTunes}</td></tr>`,
  ];
  const m = store.finalMetrics;
  if (m) {
    rows.push(
      `<tr class="final"><td>TPR</td><td>${fmt(m.tpr)}</td></tr>`,
      `<tr class="final"><td>FPR</td><td>${fmt(m.fpr)}</td></tr>`,
      `<tr class="final"><td>drift reduction %</td><td>${fmt(m.drift_reduction_pct, 1)}</td></tr>`,
      `<tr class="final"><td>median latency ms</td><td>${fmt(m.median_latency_ms)}</td></tr>`,
      `<tr class="final"><td>final &theta;<sub>u</sub></td><td>${fmt(m.theta_u_final, 2)}</td></tr>`,
    );
  }
  return `<table>${rows.join("")}</table>`;
}

export function runListHtml(runs: RunBrief[], selected: string | null): string {
  if (!runs.length) return `<div class="empty">no runs</div>`;
  return runs
    .slice()
    .reverse()
    .map((r) => {
      const cls = ["run", `run-${r.status}`];
      if (r.run_id === selected) cls.push("selected");
      const pause = r.paused ? `<span class="tag">paused</span>` : "";
      return `<div class="${cls.join(" ")}" data-run="${esc(r.run_id)}">
        <span class="rid">${esc(r.run_id)}</span>
        <span class="rstat">${esc(r.status)}</span>${pause}
        <span class="rsteps">${r.steps ?? ""}</span>
      </div>`;
    })
    .join("");
}
