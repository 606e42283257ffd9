import { describe, expect, it } from "vitest";

import { alertCardHtml, batchedCount, drawerHtml, esc, feedHtml, indicatorsHtml, metricsHtml } from "../src/render.js";
import { RunStore } from "../src/store.js";
import type { EventRecord } from "../src/types.js";

let seq = 0;
function rec(kind: string, payload: Record<string, unknown>): EventRecord {
  return { run_id: "t", seq: ++seq, kind, payload, sim_time: 0, wall_time: 0 };
}

function alert(id: string, status: string, severity = "warning", extra: Record<string, unknown> = {}) {
  return rec("alert", {
    alert_id: id,
    status,
    source: "detector",
    severity,
    trigger: "entropy",
    value: 1.9,
    threshold: 0.45,
    step: 4,
    ...extra,
  });
}

function populated(): RunStore {
  seq = 0;
  const store = new RunStore();
  store.apply(rec("metrics", { phase: "start", config: { theta_u: 0.45, theta_a: 15 } }));
  store.apply(rec("step", { step: 0, episode: 0, entropy: 1.7, score: 2.2 }));
  store.apply(alert("a-1", "delivered"));
  store.apply(alert("a-2", "batched"));
  store.apply(alert("a-3", "delivered", "critical"));
  return store;
}

describe("alert feed", () => {
  it("renders one card per non-batched alert, batched in the drawer", () => {
    const store = populated();
    const feed = feedHtml(store);
    expect(feed.match(/data-card=/g)?.length).toBe(2);
    expect(feed).not.toContain("a-2");
    const drawer = drawerHtml(store);
    expect(drawer.match(/data-card=/g)?.length).toBe(1);
    expect(drawer).toContain("a-2");
    expect(batchedCount(store)).toBe(1);
  });

  it("rendering twice from the same store is identical", () => {
    const store = populated();
    expect(feedHtml(store)).toBe(feedHtml(store));
  });

  it("resolved cards lose their buttons", () => {
    const store = populated();
    expect(feedHtml(store)).toContain("data-verdict");
    store.apply(rec("feedback", { alert_id: "a-1", verdict: "dismiss", streak: 1, theta_u: 0.45 }));
    store.apply(rec("feedback", { alert_id: "a-3", verdict: "confirm", streak: 0, theta_u: 0.45 }));
    const feed = feedHtml(store);
    expect(feed).not.toContain("data-verdict");
    expect(feed).toContain("st-dismissed");
    expect(feed).toContain("st-confirmed");
  });

  it("severity classes color the cards", () => {
    const store = populated();
    const feed = feedHtml(store);
    expect(feed).toContain("sev-critical");
    expect(feed).toContain("sev-warning");
  });

  it("escapes reason text", () => {
    seq = 0;
    const store = new RunStore();
    store.apply(alert("a-x", "suppressed", "warning", { reason: '<img src=x onerror="1">' }));
    const html = alertCardHtml(store.card("a-x")!);
    expect(html).not.toContain("<img");
    expect(html).toContain("&lt;img");
  });
});

describe("panels", () => {
  it("indicators show thresholds and streak dots", () => {
    const store = populated();
    store.apply(rec("feedback", { alert_id: "a-1", verdict: "dismiss", streak: 2, theta_u: 0.45 }));
    const html = indicatorsHtml(store);
    expect(html).toContain("0.45");
    expect(html).toContain("15.00");
    expect(html.match(/dot on/g)?.length).toBe(2);
  });

  it("metrics panel includes final numbers once present", () => {
    const store = populated();
    expect(metricsHtml(store)).not.toContain("TPR");
    store.apply(
      rec("metrics", {
        final: true,
        metrics: { tpr: 1, fpr: 1, drift_reduction_pct: 100, median_latency_ms: 0.3, theta_u_final: 0.45 },
      }),
    );
    const html = metricsHtml(store);
    expect(html).toContain("TPR");
    expect(html).toContain("100.0");
  });

  it("esc covers the html metacharacters", () => {
    expect(esc(`<a href="x">&'`)).toBe("&lt;a href=&quot;x&quot;&gt;&amp;'");
  });
});
