/** Round-trip tests against a real control-plane process.
 *
 * Spawns the Python service on a free port, starts a slow-paced run, and
 * drives the same store/client code the browser uses. Node has no
 * EventSource, so the stream goes through fetch plus the SSE parser.
 */

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { feedHtml } from "../src/render.js";
import { createSseParser } from "../src/sse.js";
import { RunStore } from "../src/store.js";
import type { EventRecord, FeedbackResponse } from "../src/types.js";

const REFRESH_CYCLE_STEPS = 10; // step/metrics batch size on the wire
const PACE_STEPS_PER_SECOND = 3;

let child: ChildProcess;
let dataDir: string;
let api: ApiClient;
let base: string;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr && typeof addr === "object") {
        const port = addr.port;
        srv.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

async function waitFor(cond: () => boolean, ms: number, label: string): Promise<void> {
  const deadline = Date.now() + ms;
  while (Date.now() < deadline) {
    if (cond()) return;
    await new Promise((r) => setTimeout(r, 25));
  }
  throw new Error(`timed out waiting for ${label}`);
}

interface StreamHandle {
  store: RunStore;
  stop: () => void;
  done: Promise<void>;
}

function openStream(runId: string, fromSeq: number, store: RunStore): StreamHandle {
  const ctrl = new AbortController();
  const parser = createSseParser((frame) => {
    if (frame.event === "end" || !frame.data) return;
    store.apply(JSON.parse(frame.data) as EventRecord);
  });
  const done = (async () => {
    const resp = await fetch(api.eventsUrl(runId, fromSeq), { signal: ctrl.signal });
    const reader = resp.body!.getReader();
    const dec = new TextDecoder();
    try {
      for (;;) {
        const { done: eof, value } = await reader.read();
        if (eof) break;
        parser.push(dec.decode(value, { stream: true }));
      }
    } catch {
      // aborted
    }
  })();
  return { store, stop: () => ctrl.abort(), done };
}

beforeAll(async () => {
  const port = await freePort();
  base = `http://127.0.0.1:${port}`;
  dataDir = mkdtempSync(join(tmpdir(), "mas-ui-"));
  child = spawn(
    "python3",
    ["-c", `from moral_anchor.service import serve; serve(host="127.0.0.1", port=${port}, data_dir=${JSON.stringify(dataDir)})`],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  const stderr: string[] = [];
  child.stderr!.on("data", (b) => stderr.push(String(b)));
  api = new ApiClient(base);
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      await api.health();
      break;
    } catch {
      if (child.exitCode !== null) throw new Error(`service exited: ${stderr.join("")}`);
      if (Date.now() > deadline) throw new Error(`service never came up: ${stderr.join("")}`);
      await new Promise((r) => setTimeout(r, 150));
    }
  }
}, 60_000);

afterAll(async () => {
  if (child && child.exitCode === null) {
    child.kill("SIGTERM");
    await new Promise((r) => {
      child.once("exit", r);
      setTimeout(r, 5000);
    });
  }
  rmSync(dataDir, { recursive: true, force: true });
});

describe("governance round trip", () => {
  it("three consecutive dismissals bump the theta_u indicator within one refresh cycle, and reconnect duplicates nothing", async () => {
    const created = await api.createRun({
      run_id: "ui-1",
      episodes: 1,
      max_steps: 150,
      window_size: 10,
      hidden_dim: 8,
      pretrain: false,
      seed: 11,
      theta_u: 0.45,
      // hour-long sim steps keep the rolling alert cap out of the way
      sim_seconds_per_step: 3600.0,
      steps_per_second: PACE_STEPS_PER_SECOND,
    });
    expect(created.run_id).toBe("ui-1");

    const live = openStream("ui-1", 0, new RunStore());
    const store = live.store;
    try {
      await waitFor(
        () => store.alerts.filter((c) => c.status === "delivered" && !c.verdict).length >= 3,
        30_000,
        "three delivered alerts",
      );
      const thetaBefore = store.thetaU;
      expect(thetaBefore).toBeCloseTo(0.45, 6);

      const targets = store.alerts
        .filter((c) => c.status === "delivered" && !c.verdict)
        .slice(0, 3);
      let last: FeedbackResponse | null = null;
      for (const card of targets) {
        last = await api.postFeedback("ui-1", card.alertId, "dismiss");
      }
      expect(last!.theta_u).toBeCloseTo(thetaBefore + 0.1, 6);

      // one refresh cycle at this pacing, with a little slack for the wire
      const cycleMs = (REFRESH_CYCLE_STEPS / PACE_STEPS_PER_SECOND) * 1000;
      await waitFor(
        () => Math.abs(store.thetaU - (thetaBefore + 0.1)) < 1e-6,
        cycleMs + 500,
        "theta_u indicator update",
      );
      const uSegs = store.thetaUSegs;
      expect(uSegs[uSegs.length - 1].v).toBeCloseTo(thetaBefore + 0.1, 6);

      // a second dismissal of the same alert is a conflict, not a recount
      const dismissed = targets[0];
      await api.postFeedback("ui-1", dismissed.alertId, "dismiss").then(
        () => {
          throw new Error("double dismissal was accepted");
        },
        (err) => {
          expect(err).toBeInstanceOf(ApiError);
          expect((err as ApiError).code).toBe("conflict");
        },
      );
      const verdictCount = store.alerts.filter((c) => c.verdict === "dismiss").length;
      expect(verdictCount).toBe(3);

      // freeze the run so the overlap replay races nothing
      await api.patchConfig("ui-1", { paused: true });
      const settledSeq = store.lastSeq;
      await new Promise((r) => setTimeout(r, 700));
      const cardCount = store.alerts.length;
      const feedBefore = feedHtml(store);

      // full-overlap reconnect: replay every event into the same store
      const replay = openStream("ui-1", 0, store);
      await waitFor(() => store.duplicatesDropped >= settledSeq, 15_000, "overlap replay");
      replay.stop();
      await replay.done;

      expect(store.alerts.length).toBe(cardCount);
      expect(feedHtml(store)).toBe(feedBefore);
      const ids = [...feedBefore.matchAll(/data-card="([^"]+)"/g)].map((m) => m[1]);
      expect(new Set(ids).size).toBe(ids.length);

      // fresh store over the same wire history agrees with the live one
      const cold = openStream("ui-1", 0, new RunStore());
      await waitFor(() => cold.store.lastSeq >= settledSeq, 15_000, "cold replay");
      cold.stop();
      await cold.done;
      const liveUpTo = store.alerts.filter((c) => c.firstSeq <= settledSeq).length;
      const coldUpTo = cold.store.alerts.filter((c) => c.firstSeq <= settledSeq).length;
      expect(coldUpTo).toBe(liveUpTo);

      await api.patchConfig("ui-1", { paused: false });
    } finally {
      live.stop();
      await live.done;
    }
  });

  it("threshold edits come back server-confirmed and land in the stream", async () => {
    await api.createRun({
      run_id: "ui-2",
      episodes: 1,
      max_steps: 60,
      window_size: 10,
      hidden_dim: 8,
      pretrain: false,
      seed: 7,
      theta_u: 0.45,
      sim_seconds_per_step: 3600.0,
      steps_per_second: PACE_STEPS_PER_SECOND,
    });
    const live = openStream("ui-2", 0, new RunStore());
    try {
      await waitFor(() => live.store.steps > 2, 20_000, "run to move");
      const out = await api.patchConfig("ui-2", { theta_u: 2.3, theta_a: 25 });
      expect(out.theta_u).toBe(2.3);
      expect(out.theta_a).toBe(25);
      await waitFor(
        () => Math.abs(live.store.thetaU - 2.3) < 1e-9 && Math.abs(live.store.thetaA - 25) < 1e-9,
        10_000,
        "threshold_change events",
      );
      const last = live.store.thetaUSegs[live.store.thetaUSegs.length - 1];
      expect(last.v).toBe(2.3);
      expect(last.step).toBeGreaterThanOrEqual(0);
    } finally {
      live.stop();
      await live.done;
    }
  });
});
