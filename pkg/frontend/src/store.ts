/** View model for one run, fed exclusively by server events.
 *
 * Delivery is at-least-once: a reconnect replays from the last seen seq
 * and may overlap what was already applied. apply() drops anything at or
 * below the high-water mark, which is what makes replaying the same
 * stream twice a no-op (same alert cards, same chart points).
 *
 * Nothing in here recomputes metrics. Every number shown in the UI is a
 * value some server event carried.
 */

import type { EventRecord } from "./types.js";

export const BUFFER_CAP = 2000;

export interface Pt {
  step: number;
  v: number;
}

/** Threshold change-point; the line holds v from this step until the next segment. */
export interface Seg {
  step: number;
  v: number;
}

export interface AlertCard {
  alertId: string;
  firstSeq: number;
  step: number;
  status: string;
  source: string;
  severity: string;
  trigger: string;
  value: number;
  threshold: number;
  reason?: string;
  releasedFromBatch: boolean;
  verdict?: string;
  pending: boolean;
}

function pushBounded<T>(arr: T[], item: T): void {
  arr.push(item);
  if (arr.length > BUFFER_CAP) arr.splice(0, arr.length - BUFFER_CAP);
}

export class RunStore {
  lastSeq = 0;
  duplicatesDropped = 0;

  entropy: Pt[] = [];
  score: Pt[] = [];
  thetaUSegs: Seg[] = [];
  thetaASegs: Seg[] = [];
  injectionSteps: number[] = [];

  alerts: AlertCard[] = [];
  private byId = new Map<string, AlertCard>();

  thetaU = NaN;
  thetaA = NaN;
  streak = 0;
  lastStep = -1;
  episode = 0;
  steps = 0;
  injections = 0;
  fineTunes = 0;
  config?: Record<string, unknown>;
  finalMetrics?: Record<string, number>;

  /** Apply one event record; returns false for a duplicate or stale seq. */
  apply(rec: EventRecord): boolean {
    if (rec.seq <= this.lastSeq) {
      this.duplicatesDropped++;
      return false;
    }
    this.lastSeq = rec.seq;
    const p = rec.payload as Record<string, any>;
    switch (rec.kind) {
      case "metrics":
        if (p.final) {
          this.finalMetrics = p.metrics;
        } else if (p.config) {
          this.config = p.config;
          const at = this.lastStep < 0 ? 0 : this.lastStep;
          if (typeof p.config.theta_u === "number") {
            this.thetaU = p.config.theta_u;
            this.thetaUSegs.push({ step: at, v: p.config.theta_u });
          }
          if (typeof p.config.theta_a === "number") {
            this.thetaA = p.config.theta_a;
            this.thetaASegs.push({ step: at, v: p.config.theta_a });
          }
        }
        break;
      case "step":
        this.lastStep = p.step;
        this.episode = p.episode;
        this.steps++;
        pushBounded(this.entropy, { step: p.step, v: p.entropy });
        pushBounded(this.score, { step: p.step, v: p.score });
        break;
      case "injection":
        this.injections++;
        pushBounded(this.injectionSteps, p.step);
        break;
      case "alert": {
        const existing = this.byId.get(p.alert_id);
        if (existing) {
          existing.status = p.status;
          if (p.released_from_batch) existing.releasedFromBatch = true;
        } else {
          const card: AlertCard = {
            alertId: p.alert_id,
            firstSeq: rec.seq,
            step: p.step,
            status: p.status,
            source: p.source,
            severity: p.severity,
            trigger: p.trigger,
            value: p.value,
            threshold: p.threshold,
            reason: p.reason,
            releasedFromBatch: Boolean(p.released_from_batch),
            pending: false,
          };
          this.byId.set(card.alertId, card);
          this.alerts.push(card);
        }
        break;
      }
      case "feedback": {
        const card = this.byId.get(p.alert_id);
        if (card) {
          card.verdict = p.verdict;
          card.status = p.verdict === "confirm" ? "confirmed" : "dismissed";
          card.pending = false;
        }
        this.streak = p.streak;
        this.thetaU = p.theta_u;
        break;
      }
      case "threshold_change": {
        const at = this.lastStep < 0 ? 0 : this.lastStep;
        if (p.field === "theta_u") {
          this.thetaU = p.new;
          this.thetaUSegs.push({ step: at, v: p.new });
        } else if (p.field === "theta_a") {
          this.thetaA = p.new;
          this.thetaASegs.push({ step: at, v: p.new });
        }
        break;
      }
      case "fine_tune":
        this.fineTunes++;
        break;
    }
    return true;
  }

  card(alertId: string): AlertCard | undefined {
    return this.byId.get(alertId);
  }

  /** Server-confirmed values from a feedback or config response. */
  acceptServerState(state: { theta_u?: number; theta_a?: number; dismissal_streak?: number }): void {
    if (typeof state.theta_u === "number") this.thetaU = state.theta_u;
    if (typeof state.theta_a === "number") this.thetaA = state.theta_a;
    if (typeof state.dismissal_streak === "number") this.streak = state.dismissal_streak;
  }
}
