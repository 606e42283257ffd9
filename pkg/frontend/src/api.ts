/** Thin fetch client for the control-plane JSON API. */

import type { FeedbackResponse, RunBrief, RunDetail, Verdict } from "./types.js";

export class ApiError extends Error {
  code: string;
  status: number;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(base + path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const err = (body as any)?.error ?? {};
    throw new ApiError(resp.status, err.code ?? "internal", err.message ?? resp.statusText);
  }
  return body as T;
}

export class ApiClient {
  constructor(private base = "") {}

  health(): Promise<{ status: string; backend: string }> {
    return request(this.base, "/healthz");
  }

  listRuns(): Promise<{ runs: RunBrief[] }> {
    return request(this.base, "/api/runs");
  }

  createRun(config: Record<string, unknown>): Promise<{ run_id: string; status: string }> {
    return request(this.base, "/api/runs", {
      method: "POST",
      body: JSON.stringify(config),
    });
  }

  getRun(runId: string): Promise<RunDetail> {
    return request(this.base, `/api/runs/${encodeURIComponent(runId)}`);
  }

  eventsUrl(runId: string, fromSeq = 0): string {
    return `${this.base}/api/runs/${encodeURIComponent(runId)}/events?from_seq=${fromSeq}`;
  }

  postFeedback(runId: string, alertId: string, verdict: Verdict): Promise<FeedbackResponse> {
    return request(
      this.base,
      `/api/runs/${encodeURIComponent(runId)}/alerts/${encodeURIComponent(alertId)}/feedback`,
      { method: "POST", body: JSON.stringify({ verdict }) },
    );
  }

  patchConfig(
    runId: string,
    body: { theta_u?: number; theta_a?: number; paused?: boolean },
  ): Promise<Record<string, unknown>> {
    return request(this.base, `/api/runs/${encodeURIComponent(runId)}/config`, {
      method: "PATCH",
      body: JSON.stringify(body),
    });
  }
}
