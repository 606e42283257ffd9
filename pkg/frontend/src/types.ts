/** Wire types for the control-plane API and its event stream. */

export interface EventRecord {
  run_id: string;
  seq: number;
  kind: string;
  payload: Record<string, unknown>;
  sim_time: number;
  wall_time: number;
}

export interface RunBrief {
  run_id: string;
  status: string;
  paused: boolean;
  created_at: number;
  steps?: number;
  episodes?: number;
  alerts?: number;
  theta_u?: number;
  theta_a?: number;
  sim_time?: number;
}

export interface RunDetail extends RunBrief {
  config?: Record<string, unknown>;
  metrics?: Record<string, number>;
  extras?: Record<string, unknown>;
  error?: string;
}

export interface FeedbackResponse {
  alert_id: string;
  verdict: string;
  theta_u: number;
  theta_a: number;
  dismissal_streak: number;
  fine_tune_due: boolean;
}

export type Verdict = "confirm" | "dismiss";
