"""Alert governance: delivery budgeting, human feedback, threshold adaptation.

Candidates flow through one gate (`submit`) that can deliver, batch, or
suppress. Critical candidates bypass the rolling delivery cap; everything
non-critical shares a budget of 2 deliveries per rolling hour and queues
FIFO when over it. A candidate whose trigger matches an undecided alert
created within the last 60 seconds is suppressed outright, criticals
included, which keeps a sustained condition from flooding the channel.

Feedback drives adaptation: three consecutive dismissals raise theta_u by
0.1 (capped), reset the streak, and flag a fine-tune; any confirmation
resets the streak. Every verdict also banks the alert's feature window as
a labeled example for the forecaster's fine-tune buffer.

All timing uses an injected clock so simulations can run on a virtual
timeline; nothing here ever reads the system clock.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .belief import SEVERITY_CRITICAL, AlertCandidate
from .lstm import LstmParams, TrainingExample, loss, train_step

logger = logging.getLogger("moral_anchor.alerts")

STATUS_DELIVERED = "delivered"
STATUS_BATCHED = "batched"
STATUS_SUPPRESSED = "suppressed"
STATUS_CONFIRMED = "confirmed"
STATUS_DISMISSED = "dismissed"

VERDICT_CONFIRM = "confirm"
VERDICT_DISMISS = "dismiss"

UNDECIDED_STATUSES = (STATUS_DELIVERED, STATUS_BATCHED)

DISMISSAL_STREAK_TRIGGER = 3
THETA_U_INCREMENT = 0.1
CAP_WINDOW_SECONDS = 3600.0
DEDUP_SECONDS = 60.0
FINE_TUNE_BUFFER_MAX = 512
FINE_TUNE_MIN_EXAMPLES = 8
FINE_TUNE_MAX_EPOCHS = 5


class GovernanceError(Exception):
    """Validation failure with a stable machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class ThresholdState:
    theta_u: float = 0.45
    theta_a: float = 15.0
    dismissal_streak: int = 0
    theta_u_max: float = 5.0

    def __post_init__(self):
        if self.theta_u <= 0 or self.theta_a <= 0:
            raise ValueError("thresholds must be positive")
        if self.theta_u > self.theta_u_max:
            raise ValueError("theta_u above theta_u_max")


@dataclass
class Alert:
    id: str
    candidate: AlertCandidate
    status: str
    delivered_at: float | None = None
    window: np.ndarray | None = None

    @property
    def resolved(self) -> bool:
        return self.status in (STATUS_CONFIRMED, STATUS_DISMISSED)


@dataclass
class FeedbackEvent:
    alert_id: str
    verdict: str
    window_at_alert: np.ndarray | None = None
    true_label_if_known: int | None = None


@dataclass
class AlertBudget:
    """Rolling-hour cap state for non-critical deliveries."""

    cap_per_window: int = 2
    window_seconds: float = CAP_WINDOW_SECONDS
    delivery_log: list[float] = field(default_factory=list)
    batch_queue: deque = field(default_factory=deque)

    def prune(self, now: float) -> None:
        cutoff = now - self.window_seconds
        while self.delivery_log and self.delivery_log[0] <= cutoff:
            self.delivery_log.pop(0)

    def has_capacity(self, now: float) -> bool:
        self.prune(now)
        return len(self.delivery_log) < self.cap_per_window


@dataclass
class NotificationSink:
    kind: str  # "log" or "webhook"
    endpoint: str = ""


@dataclass
class Receipt:
    sink_kind: str
    endpoint: str
    ok: bool
    detail: str = ""


@dataclass
class AlertBook:
    """All governance state for one run."""

    thresholds: ThresholdState = field(default_factory=ThresholdState)
    budget: AlertBudget = field(default_factory=AlertBudget)
    alerts: dict[str, Alert] = field(default_factory=dict)
    fine_tune_buffer: deque = field(
        default_factory=lambda: deque(maxlen=FINE_TUNE_BUFFER_MAX)
    )
    _next_id: int = 0
    _open_recent: dict[str, list[Alert]] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out = {
            STATUS_DELIVERED: 0,
            STATUS_BATCHED: 0,
            STATUS_SUPPRESSED: 0,
            STATUS_CONFIRMED: 0,
            STATUS_DISMISSED: 0,
        }
        for alert in self.alerts.values():
            out[alert.status] += 1
        return out


def _recent_undecided(book: AlertBook, trigger: str, now: float) -> bool:
    entries = book._open_recent.get(trigger)
    if not entries:
        return False
    keep = [
        a
        for a in entries
        if a.status in UNDECIDED_STATUSES and now - a.candidate.wall_time <= DEDUP_SECONDS
    ]
    book._open_recent[trigger] = keep
    return bool(keep)


def submit(
    book: AlertBook,
    candidate: AlertCandidate,
    clock,
    window: np.ndarray | None = None,
) -> Alert:
    """Decide one candidate: suppress duplicates, deliver criticals, budget
    the rest. Every candidate is recorded whatever the outcome."""
    now = clock.now()
    alert_id = f"a-{book._next_id}"
    book._next_id += 1

    if _recent_undecided(book, candidate.trigger, now):
        status = STATUS_SUPPRESSED
    elif candidate.severity == SEVERITY_CRITICAL:
        status = STATUS_DELIVERED
    elif book.budget.has_capacity(now):
        status = STATUS_DELIVERED
    else:
        status = STATUS_BATCHED

    alert = Alert(
        id=alert_id,
        candidate=candidate,
        status=status,
        window=None if window is None else np.array(window, dtype=float),
    )
    if status == STATUS_DELIVERED:
        alert.delivered_at = now
        if candidate.severity != SEVERITY_CRITICAL:
            book.budget.delivery_log.append(now)
    if status == STATUS_BATCHED:
        book.budget.batch_queue.append(alert)
    if status in UNDECIDED_STATUSES:
        book._open_recent.setdefault(candidate.trigger, []).append(alert)
    book.alerts[alert.id] = alert
    return alert


def flush_batch(book: AlertBook, clock) -> list[Alert]:
    """Deliver queued alerts oldest-first while the rolling window allows."""
    now = clock.now()
    released: list[Alert] = []
    while book.budget.batch_queue and book.budget.has_capacity(now):
        alert = book.budget.batch_queue.popleft()
        alert.status = STATUS_DELIVERED
        alert.delivered_at = now
        book.budget.delivery_log.append(now)
        released.append(alert)
    return released


def apply_feedback(book: AlertBook, fb: FeedbackEvent) -> tuple[ThresholdState, bool]:
    """Record a verdict; returns (thresholds, fine_tune_due).

    Only delivered, unresolved alerts accept feedback; duplicates are
    rejected with state untouched.
    """
    if fb.verdict not in (VERDICT_CONFIRM, VERDICT_DISMISS):
        raise GovernanceError("invalid_input", f"unknown verdict {fb.verdict!r}")
    alert = book.alerts.get(fb.alert_id)
    if alert is None:
        raise GovernanceError("not_found", f"no alert {fb.alert_id!r}")
    if alert.resolved:
        raise GovernanceError("conflict", f"alert {fb.alert_id} already {alert.status}")
    if alert.status != STATUS_DELIVERED:
        raise GovernanceError("conflict", f"alert {fb.alert_id} is {alert.status}, not delivered")

    th = book.thresholds
    fine_tune_due = False
    if fb.verdict == VERDICT_DISMISS:
        alert.status = STATUS_DISMISSED
        th.dismissal_streak += 1
        if th.dismissal_streak >= DISMISSAL_STREAK_TRIGGER:
            th.theta_u = min(th.theta_u + THETA_U_INCREMENT, th.theta_u_max)
            th.dismissal_streak = 0
            fine_tune_due = True
    else:
        alert.status = STATUS_CONFIRMED
        th.dismissal_streak = 0

    window = fb.window_at_alert if fb.window_at_alert is not None else alert.window
    if window is not None:
        label = 1 if fb.verdict == VERDICT_CONFIRM else 0
        book.fine_tune_buffer.append(TrainingExample(window=np.array(window), label=label))
    return th, fine_tune_due


def run_fine_tune(
    buffer,
    params: LstmParams,
    lr: float = 1e-3,
    epochs: int = FINE_TUNE_MAX_EPOCHS,
    min_examples: int = FINE_TUNE_MIN_EXAMPLES,
) -> tuple[LstmParams, dict | None]:
    """Fine-tune on the banked windows; no-op below min_examples.

    Returns (params, stats); stats is None when skipped. Non-finite
    gradients abort by raising TrainingDivergedError.
    """
    if not 1 <= epochs <= FINE_TUNE_MAX_EPOCHS:
        raise ValueError(f"epochs must be in [1, {FINE_TUNE_MAX_EPOCHS}]")
    batch = list(buffer)
    if len(batch) < min_examples:
        return params, None
    before = loss(params, batch)
    for _ in range(epochs):
        params = train_step(params, batch, lr=lr)
    after = loss(params, batch)
    stats = {
        "examples": len(batch),
        "epochs": epochs,
        "loss_before": before,
        "loss_after": after,
    }
    return params, stats


def notify(alert: Alert, sinks, run_id: str = "") -> list[Receipt]:
    """Fan a delivered alert out to the sinks; failures never propagate."""
    body = {
        "alert_id": alert.id,
        "severity": alert.candidate.severity,
        "trigger": alert.candidate.trigger,
        "value": alert.candidate.value,
        "threshold": alert.candidate.threshold_at_trigger,
        "step": alert.candidate.step_index,
        "run_id": run_id,
    }
    receipts: list[Receipt] = []
    for sink in sinks:
        if sink.kind == "log":
            logger.info("alert %s", json.dumps(body, sort_keys=True))
            receipts.append(Receipt(sink_kind="log", endpoint=sink.endpoint, ok=True))
        elif sink.kind == "webhook":
            receipts.append(_post_webhook(sink, body))
        else:
            receipts.append(
                Receipt(sink.kind, sink.endpoint, ok=False, detail="unknown sink kind")
            )
    return receipts


def _post_webhook(sink: NotificationSink, body: dict) -> Receipt:
    import requests

    detail = ""
    for attempt in range(2):  # one retry
        try:
            resp = requests.post(sink.endpoint, json=body, timeout=2.0)
            if resp.status_code < 400:
                return Receipt("webhook", sink.endpoint, ok=True)
            detail = f"status {resp.status_code}"
        except Exception as exc:
            detail = str(exc)
    return Receipt("webhook", sink.endpoint, ok=False, detail=detail)
