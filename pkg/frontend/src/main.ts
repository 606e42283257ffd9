/** Dashboard glue: wires the API client, the per-run store, the charts,
 * and the DOM together. Charts repaint at most once per animation frame
 * no matter how fast events arrive. */

import { ApiClient, ApiError } from "./api.js";
import { StepChart } from "./charts.js";
import {
  batchedCount,
  drawerHtml,
  feedHtml,
  indicatorsHtml,
  metricsHtml,
  runListHtml,
} from "./render.js";
import { RunStore } from "./store.js";
import type { EventRecord, RunBrief, Verdict } from "./types.js";

const api = new ApiClient("");

const EVENT_KINDS = [
  "metrics",
  "step",
  "injection",
  "alert",
  "feedback",
  "threshold_change",
  "fine_tune",
];

interface Session {
  runId: string;
  store: RunStore;
  source: EventSource | null;
  finished: boolean;
}

let session: Session | null = null;
let runs: RunBrief[] = [];
let dirty = false;
let notifyEnabled = false;

const $ = (id: string) => document.getElementById(id) as HTMLElement;
const input = (id: string) => document.getElementById(id) as HTMLInputElement;

const darkGrid = "#2a2f38";
const text = "#778";
const entropyChart = () =>
  new StepChart(document.getElementById("chart-entropy") as HTMLCanvasElement, "belief entropy", {
    series: "#5fb4ff",
    threshold: "#ffb454",
    grid: darkGrid,
    text,
    mark: "#c75450",
  });
const scoreChart = () =>
  new StepChart(document.getElementById("chart-score") as HTMLCanvasElement, "anomaly score", {
    series: "#9f7eff",
    threshold: "#ffb454",
    grid: darkGrid,
    text,
    mark: "#c75450",
  });

let charts: { entropy: StepChart; score: StepChart } | null = null;

function markDirty(): void {
  dirty = true;
}

function frame(): void {
  if (dirty && session) {
    dirty = false;
    const st = session.store;
    if (!charts) charts = { entropy: entropyChart(), score: scoreChart() };
    charts.entropy.draw(st.entropy, st.thetaUSegs, st.injectionSteps);
    charts.score.draw(st.score, st.thetaASegs, st.injectionSteps);
    $("indicators").innerHTML = indicatorsHtml(st);
    $("feed").innerHTML = feedHtml(st);
    $("drawer-body").innerHTML = drawerHtml(st);
    $("drawer-count").textContent = String(batchedCount(st));
    $("metrics").innerHTML = metricsHtml(st);
    syncThresholdInputs(st);
  }
  requestAnimationFrame(frame);
}

function syncThresholdInputs(st: RunStore): void {
  // snap to server values unless the human is mid-edit
  const tu = input("edit-theta-u");
  const ta = input("edit-theta-a");
  if (document.activeElement !== tu && !Number.isNaN(st.thetaU)) tu.value = st.thetaU.toFixed(2);
  if (document.activeElement !== ta && !Number.isNaN(st.thetaA)) ta.value = st.thetaA.toFixed(2);
}

function banner(msg: string | null, kind = "warn"): void {
  const el = $("banner");
  if (!msg) {
    el.className = "banner hidden";
    el.textContent = "";
  } else {
    el.className = `banner ${kind}`;
    el.textContent = msg;
  }
}

function connect(runId: string): void {
  if (session?.source) session.source.close();
  charts = null;
  session = { runId, store: new RunStore(), source: null, finished: false };
  $("run-title").textContent = runId;
  banner(null);
  openStream();
  markDirty();
}

function openStream(): void {
  if (!session || session.finished) return;
  const s = session;
  // resume from the high-water mark; the native EventSource also replays
  // its Last-Event-ID on automatic reconnects
  const source = new EventSource(api.eventsUrl(s.runId, s.store.lastSeq));
  s.source = source;
  const onRecord = (ev: MessageEvent) => {
    if (session !== s) return;
    const rec = JSON.parse(ev.data) as EventRecord;
    if (s.store.apply(rec)) {
      if (rec.kind === "alert" && (rec.payload as any).status === "delivered") {
        maybeNotify(rec);
      }
      markDirty();
    }
  };
  for (const kind of EVENT_KINDS) source.addEventListener(kind, onRecord);
  source.addEventListener("end", () => {
    if (session !== s) return;
    s.finished = true;
    source.close();
    banner("run finished - static view", "info");
    void refreshRuns();
    markDirty();
  });
  source.onopen = () => {
    if (session === s) banner(null);
  };
  source.onerror = () => {
    if (session === s && !s.finished) banner("stream lost - reconnecting", "warn");
  };
}

function maybeNotify(rec: EventRecord): void {
  if (!notifyEnabled || typeof Notification === "undefined") return;
  if (Notification.permission !== "granted") return;
  const p = rec.payload as any;
  new Notification(`alert ${p.alert_id}`, {
    body: `${p.trigger} ${Number(p.value).toFixed(3)} over ${Number(p.threshold).toFixed(2)} at step ${p.step}`,
  });
}

async function triage(alertId: string, verdict: Verdict): Promise<void> {
  if (!session) return;
  const s = session;
  const card = s.store.card(alertId);
  if (!card || card.pending || card.verdict) return;
  card.pending = true; // blocks the double click until the server answers
  markDirty();
  try {
    const resp = await api.postFeedback(s.runId, alertId, verdict);
    if (session !== s) return;
    card.verdict = resp.verdict;
    card.status = resp.verdict === "confirm" ? "confirmed" : "dismissed";
    card.pending = false;
    s.store.acceptServerState(resp);
  } catch (err) {
    if (session !== s) return;
    card.pending = false;
    if (err instanceof ApiError && err.code === "conflict") {
      // already resolved server-side; the feedback event in the stream
      // carries the real verdict, nothing to roll back
    } else {
      banner(`feedback failed: ${err instanceof Error ? err.message : err}`, "error");
    }
  }
  markDirty();
}

function thresholdError(msg: string | null): void {
  const el = $("threshold-error");
  el.textContent = msg ?? "";
  el.className = msg ? "field-error" : "field-error hidden";
}

async function applyThresholds(): Promise<void> {
  if (!session) return;
  const s = session;
  const tu = Number(input("edit-theta-u").value);
  const ta = Number(input("edit-theta-a").value);
  if (!Number.isFinite(tu) || tu <= 0 || !Number.isFinite(ta) || ta <= 0) {
    thresholdError("thresholds must be positive numbers");
    return;
  }
  thresholdError(null);
  try {
    const out = await api.patchConfig(s.runId, { theta_u: tu, theta_a: ta });
    if (session !== s) return;
    s.store.acceptServerState(out as any); // confirmed values, not the form's
    markDirty();
  } catch (err) {
    thresholdError(err instanceof Error ? err.message : String(err));
  }
}

async function togglePause(): Promise<void> {
  if (!session) return;
  const s = session;
  const current = runs.find((r) => r.run_id === s.runId);
  try {
    await api.patchConfig(s.runId, { paused: !current?.paused });
    await refreshRuns();
  } catch (err) {
    banner(`pause failed: ${err instanceof Error ? err.message : err}`, "error");
  }
}

async function startRun(): Promise<void> {
  const cfg: Record<string, unknown> = {
    episodes: Number(input("new-episodes").value) || 5,
    max_steps: Number(input("new-max-steps").value) || 200,
    drift_prob: Number(input("new-drift-prob").value),
    theta_u: Number(input("new-theta-u").value),
    theta_a: Number(input("new-theta-a").value),
    steps_per_second: Number(input("new-pace").value) || null,
    seed: Number(input("new-seed").value) || 42,
    pretrain: input("new-pretrain").checked,
  };
  try {
    const out = await api.createRun(cfg);
    await refreshRuns();
    connect(out.run_id);
  } catch (err) {
    banner(`start failed: ${err instanceof Error ? err.message : err}`, "error");
  }
}

async function refreshRuns(): Promise<void> {
  try {
    runs = (await api.listRuns()).runs;
    $("runs").innerHTML = runListHtml(runs, session?.runId ?? null);
    const sel = runs.find((r) => r.run_id === session?.runId);
    const pauseBtn = $("pause") as HTMLButtonElement;
    pauseBtn.textContent = sel?.paused ? "resume" : "pause";
    (pauseBtn as HTMLButtonElement).disabled = !sel || ["completed", "failed"].includes(sel.status);
    $("run-status").textContent = sel ? sel.status + (sel.paused ? " (paused)" : "") : "";
  } catch {
    // transient; the next poll retries
  }
}

async function init(): Promise<void> {
  try {
    const h = await api.health();
    $("backend").textContent = h.backend;
    $("health-dot").className = "dot live";
  } catch {
    $("health-dot").className = "dot dead";
  }
  await refreshRuns();
  window.setInterval(refreshRuns, 2000);

  $("runs").addEventListener("click", (ev) => {
    const row = (ev.target as HTMLElement).closest("[data-run]");
    if (row) connect(row.getAttribute("data-run")!);
  });
  const onTriageClick = (ev: Event) => {
    const btn = (ev.target as HTMLElement).closest("button[data-alert]");
    if (btn) {
      void triage(btn.getAttribute("data-alert")!, btn.getAttribute("data-verdict") as Verdict);
    }
  };
  $("feed").addEventListener("click", onTriageClick);
  $("drawer-body").addEventListener("click", onTriageClick);
  $("apply-thresholds").addEventListener("click", () => void applyThresholds());
  $("pause").addEventListener("click", () => void togglePause());
  $("start-run").addEventListener("click", () => void startRun());
  $("drawer-toggle").addEventListener("click", () => {
    $("drawer-body").classList.toggle("shut");
  });
  $("notify-toggle").addEventListener("click", async () => {
    if (typeof Notification === "undefined") return;
    if (Notification.permission !== "granted") await Notification.requestPermission();
    notifyEnabled = !notifyEnabled && Notification.permission === "granted";
    $("notify-toggle").classList.toggle("on", notifyEnabled);
  });

  const first = runs.find((r) => r.status === "running") ?? runs[runs.length - 1];
  if (first) connect(first.run_id);
  requestAnimationFrame(frame);
}

void init();
