"""Run metric computation, shared verbatim between live runs and log replay.

The same compute path serves both so that metrics recomputed from a JSONL
event log match the live run exactly, float for float. Detection credit is
generous by default: a drifted step counts as detected if any candidate
fired on it, or if a forecaster candidate fired within the horizon before
it. Strict mode drops the lookahead credit. False positives are counted on
clean steps with the identical rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventRecord

WARMUP_STEPS = 100


@dataclass
class RunMetrics:
    avg_latency_ms: float | None
    median_latency_ms: float | None
    tpr: float | None
    fpr: float | None
    drift_reduction_pct: float | None
    total_steps: int
    total_alerts: int
    theta_u_final: float

    def comparable(self) -> tuple:
        """Everything except wall-clock latency; used by determinism checks."""
        return (
            self.tpr,
            self.fpr,
            self.drift_reduction_pct,
            self.total_steps,
            self.total_alerts,
            self.theta_u_final,
        )


def detection_masks(
    n_steps: int,
    candidate_steps: list[tuple[int, str]],
    horizon: int,
    strict: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """(alerted, detected) step masks from candidate (step, source) pairs."""
    alerted = np.zeros(n_steps, dtype=bool)
    detected = np.zeros(n_steps, dtype=bool)
    for step, source in candidate_steps:
        if 0 <= step < n_steps:
            alerted[step] = True
            detected[step] = True
            if not strict and source == "forecaster":
                detected[step + 1 : step + 1 + horizon] = True
    return alerted, detected


def compute_metrics(
    drift_flags: np.ndarray,
    latencies_ms: np.ndarray,
    candidate_steps: list[tuple[int, str]],
    theta_u_final: float,
    horizon: int,
    strict: bool,
) -> RunMetrics:
    n_steps = int(drift_flags.shape[0])
    _, detected = detection_masks(n_steps, candidate_steps, horizon, strict)

    drifted = drift_flags.astype(bool)
    clean = np.logical_not(drifted)
    tpr = float(detected[drifted].mean()) if drifted.any() else None
    fpr = float(detected[clean].mean()) if clean.any() else None

    timed = latencies_ms[WARMUP_STEPS:]
    avg_lat = float(timed.mean()) if timed.size else None
    med_lat = float(np.median(timed)) if timed.size else None

    return RunMetrics(
        avg_latency_ms=avg_lat,
        median_latency_ms=med_lat,
        tpr=tpr,
        fpr=fpr,
        drift_reduction_pct=None if tpr is None else 100.0 * tpr,
        total_steps=n_steps,
        total_alerts=len(candidate_steps),
        theta_u_final=theta_u_final,
    )


def metrics_from_events(
    records: list[EventRecord], horizon: int, strict: bool = False
) -> RunMetrics:
    """Recompute RunMetrics from a run's event stream.

    Relies on: per-step `step` events carrying drift and lat_ms, one
    `alert` event per submitted candidate (re-delivery events reuse the
    alert id and are ignored here), threshold_change events carrying the
    new theta_u, and the initial config snapshot in the first metrics
    event.
    """
    drift: list[bool] = []
    lat: list[float] = []
    candidates: list[tuple[int, str]] = []
    seen_alerts: set[str] = set()
    theta_u = None
    for record in records:
        if record.kind == "step":
            drift.append(bool(record.payload["drift"]))
            lat.append(float(record.payload["lat_ms"]))
        elif record.kind == "alert":
            alert_id = record.payload["alert_id"]
            if alert_id not in seen_alerts:
                seen_alerts.add(alert_id)
                candidates.append((int(record.payload["step"]), record.payload["source"]))
        elif record.kind == "threshold_change":
            if record.payload.get("field") == "theta_u":
                theta_u = float(record.payload["new"])
        elif record.kind == "metrics" and theta_u is None:
            config = record.payload.get("config")
            if config is not None:
                theta_u = float(config["theta_u"])
    if theta_u is None:
        raise ValueError("event stream carries no theta_u information")
    return compute_metrics(
        np.array(drift, dtype=bool),
        np.array(lat, dtype=float),
        candidates,
        theta_u,
        horizon,
        strict,
    )
