"""Per-step run engine: environment, detector, forecaster, and governance
wired into a single tickable loop.

One RunEngine owns one run. Each tick advances the maze one step, feeds the
behavioral observation through the Bayes filter and the anomaly window,
assembles the forecaster's feature row, rolls the LSTM forward once the
window is full, routes any candidates through governance, applies the
configured feedback policy, and emits events. The engine is deliberately
single-threaded; the service wraps it in a worker thread and applies
commands between ticks, which is what gives feedback its happens-before
guarantee relative to the next step.

Timing discipline: the per-step latency measurement covers the detect and
forecast work only (filter update, entropy, anomaly score, trigger checks,
feature assembly, LSTM rollout). Environment stepping, governance, and
event writing sit outside the timed region.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import _kernels, belief as bel, governance as gov, lstm, maze as mz
from .events import SimClock
from .metrics import RunMetrics, compute_metrics
from .governance import (
    STATUS_DELIVERED,
    VERDICT_CONFIRM,
    VERDICT_DISMISS,
    AlertBook,
    FeedbackEvent,
    NotificationSink,
    ThresholdState,
)

FEEDBACK_POLICIES = ("none", "oracle_human")
EmitFn = Callable[[str, dict], None]


@dataclass
class RunConfig:
    """Everything a single run needs; serializable for the service API."""

    run_id: str = ""
    theta_a: float = 15.0
    theta_u: float = 0.45
    theta_u_max: float = 5.0
    drift_prob: float = 0.05
    episodes: int = 1000
    max_sim_hours: float | None = None
    max_steps: int = 200
    seed: int = 42
    feedback_policy: str = "none"
    noise_sigma: float = 1.0
    alpha: float = 0.1
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_floor: float = 0.05
    epsilon_decay_frac: float = 0.2
    grid_resolution: int = 5
    jitter_sigma: float = 0.05
    window_size: int = 50
    horizon: int = 5
    anomaly_window: int = 20
    hidden_dim: int = 32
    sim_seconds_per_step: float = 1.0
    strict_attribution: bool = False
    pretrain: bool = True
    pretrain_episodes: int = 120
    pretrain_epochs: int = 75
    pretrain_lr: float = 4e-2
    pretrain_per_class: int = 192
    fine_tune_lr: float = 1e-3
    fine_tune_epochs: int = 5
    steps_per_second: float | None = None
    webhook_url: str = ""
    observation: bel.ObservationModel = field(default_factory=bel.ObservationModel)

    def validate(self) -> None:
        problems = []
        if self.theta_a <= 0:
            problems.append("theta_a must be positive")
        if self.theta_u <= 0:
            problems.append("theta_u must be positive")
        if self.theta_u > self.theta_u_max:
            problems.append("theta_u above theta_u_max")
        if not 0.0 <= self.drift_prob <= 1.0:
            problems.append("drift_prob must be in [0, 1]")
        if self.max_sim_hours is None and self.episodes < 1:
            problems.append("episodes must be at least 1")
        if self.max_sim_hours is not None and self.max_sim_hours <= 0:
            problems.append("max_sim_hours must be positive")
        if self.max_steps < 1:
            problems.append("max_steps must be at least 1")
        if self.feedback_policy not in FEEDBACK_POLICIES:
            problems.append(f"feedback_policy must be one of {FEEDBACK_POLICIES}")
        if self.grid_resolution < 2:
            problems.append("grid_resolution must be at least 2")
        if self.window_size < 1 or self.horizon < 1 or self.anomaly_window < 1:
            problems.append("window_size, horizon, anomaly_window must be positive")
        if self.sim_seconds_per_step <= 0:
            problems.append("sim_seconds_per_step must be positive")
        if self.steps_per_second is not None and self.steps_per_second <= 0:
            problems.append("steps_per_second must be positive")
        if not 0.0 <= self.epsilon_floor <= self.epsilon_start <= 1.0:
            problems.append("need 0 <= epsilon_floor <= epsilon_start <= 1")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        data = asdict(self)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        payload = dict(data)
        obs = payload.pop("observation", None)
        cfg = cls(**payload)
        if obs is not None:
            cfg.observation = bel.ObservationModel(**obs)
        return cfg


def oracle_verdict(alert: gov.Alert, drift_flags) -> FeedbackEvent:
    """Ground-truth reviewer: confirm if the alert's step was drifted."""
    step = alert.candidate.step_index
    drifted = bool(drift_flags[step]) if 0 <= step < len(drift_flags) else False
    return FeedbackEvent(
        alert_id=alert.id,
        verdict=VERDICT_CONFIRM if drifted else VERDICT_DISMISS,
        window_at_alert=alert.window,
        true_label_if_known=int(drifted),
    )


def _epsilon(cfg: RunConfig, episode_index: int, global_step: int, expected_steps: float) -> float:
    if cfg.max_sim_hours is not None:
        decay = max(1.0, cfg.epsilon_decay_frac * expected_steps)
        frac = min(1.0, global_step / decay)
    else:
        decay = max(1.0, cfg.epsilon_decay_frac * cfg.episodes)
        frac = min(1.0, episode_index / decay)
    return cfg.epsilon_start - (cfg.epsilon_start - cfg.epsilon_floor) * frac


class RunEngine:
    """Drives one run tick by tick. Not thread-safe; one owner at a time."""

    def __init__(
        self,
        cfg: RunConfig,
        emit: EmitFn | None = None,
        seed_key: tuple[int, ...] | None = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self._emit_fn = emit
        base = np.random.SeedSequence(seed_key if seed_key is not None else (cfg.seed,))
        env_ss, pretrain_ss, lstm_ss = base.spawn(3)
        self.rng_env = np.random.default_rng(env_ss)
        self.rng_pretrain = np.random.default_rng(pretrain_ss)
        self._lstm_seed = int(lstm_ss.generate_state(1)[0])

        self.maze = mz.build_default_maze()
        if cfg.max_steps != self.maze.max_steps:
            self.maze = mz.MazeConfig(max_steps=cfg.max_steps)
        self.q = mz.QTable.zeros(self.maze)
        self.clock = SimClock()
        self.tm = bel.TransitionModel(jitter_sigma=cfg.jitter_sigma)
        self.om = cfg.observation
        self.belief = bel.init_belief("uniform", cfg.grid_resolution)
        self.anomaly = bel.AnomalyState(window_size=cfg.anomaly_window)
        self.book = AlertBook(
            thresholds=ThresholdState(
                theta_u=cfg.theta_u, theta_a=cfg.theta_a, theta_u_max=cfg.theta_u_max
            )
        )
        self.sinks = [NotificationSink(kind="log")]
        if cfg.webhook_url:
            self.sinks.append(NotificationSink(kind="webhook", endpoint=cfg.webhook_url))

        self.params: lstm.LstmParams | None = None
        self.infer_params: lstm.LstmParams | None = None

        self._feat_buf = np.zeros((cfg.window_size, lstm.INPUT_DIM))
        self._feat_pos = 0
        self._feat_count = 0

        if cfg.max_sim_hours is not None:
            self._expected_steps = cfg.max_sim_hours * 3600.0 / cfg.sim_seconds_per_step
        else:
            self._expected_steps = float(cfg.episodes * cfg.max_steps)

        self.global_step = 0
        self.episode_index = 0
        self.finished = False
        self.prepared = False
        self._gen = None

        # Per-step accounting for metrics and replay identity.
        self.drift_flags: list[bool] = []
        self.latencies_ms: list[float] = []
        self.sim_times: list[float] = []
        self.candidate_steps: list[tuple[int, str]] = []
        self.trigger_counts: dict[str, int] = {}
        self.injection_count = 0
        self.degenerate_resets = 0
        self.fine_tune_rounds = 0
        self._fine_tune_pending = False

    # -- lifecycle ---------------------------------------------------------

    def prepare(self) -> None:
        """One-time setup before ticking: bootstrap and quantize the LSTM."""
        if self.prepared:
            return
        if self.cfg.pretrain:
            self.params = self._pretrain()
        else:
            self.params = lstm.LstmParams.xavier(
                hidden_dim=self.cfg.hidden_dim, seed=self._lstm_seed
            )
        self._refresh_inference_params()
        self.emit("metrics", {"config": self.cfg.to_dict(), "phase": "start"})
        self.prepared = True

    def emit(self, kind: str, payload: dict) -> None:
        if self._emit_fn is not None:
            self._emit_fn(kind, payload)

    def run(self) -> tuple[RunMetrics, dict]:
        self.prepare()
        while self.tick():
            pass
        return self.finalize()

    def tick(self) -> bool:
        """Advance one environment step; False once the run is complete."""
        if self.finished:
            return False
        if not self.prepared:
            self.prepare()
        while True:
            if self._stop_reached():
                if self._gen is not None:
                    self._gen.close()
                    self._gen = None
                self.finished = True
                return False
            if self._gen is None:
                self._start_episode()
            try:
                outcome, drifted, injected = next(self._gen)
                break
            except StopIteration:
                self._gen = None
                self.episode_index += 1
        self._process_step(outcome, drifted, injected)
        return True

    def _stop_reached(self) -> bool:
        if self.cfg.max_sim_hours is not None:
            return self.clock.now() >= self.cfg.max_sim_hours * 3600.0
        return self._gen is None and self.episode_index >= self.cfg.episodes

    def _start_episode(self) -> None:
        eps = _epsilon(self.cfg, self.episode_index, self.global_step, self._expected_steps)
        self.anomaly = bel.AnomalyState(window_size=self.cfg.anomaly_window)
        self._gen = mz.episode_steps(
            self.maze,
            self.q,
            epsilon=eps,
            alpha=self.cfg.alpha,
            gamma=self.cfg.gamma,
            drift_prob=self.cfg.drift_prob,
            noise_sigma=self.cfg.noise_sigma,
            rng=self.rng_env,
        )

    # -- per-step pipeline -------------------------------------------------

    def _process_step(self, outcome: mz.StepOutcome, drifted: bool, injected: bool) -> None:
        cfg = self.cfg
        step = self.global_step
        if injected:
            self.injection_count += 1
            self.emit("injection", {"step": step, "episode": self.episode_index})

        obs = bel.ObservationVec(
            reward=outcome.reward,
            bumped_wall=outcome.bumped_wall,
            progress_delta=float(outcome.progress_delta),
            q_residual=outcome.q_residual,
        )

        t0 = time.perf_counter()
        self.belief = bel.belief_update(self.belief, obs, self.tm, self.om)
        ent = bel.entropy(self.belief)
        self.anomaly = bel.update_anomaly(self.anomaly, outcome.q_residual)
        candidate = bel.detect(self.belief, self.anomaly, self.book.thresholds, step, self.clock)
        mean = self.belief.mean_state()
        row = self._feat_buf[self._feat_pos]
        row[0] = ent
        row[1] = math.log1p(self.anomaly.score)
        row[2] = mean.u
        row[3] = mean.e
        row[4] = mean.r
        row[5] = outcome.q_residual
        self._feat_pos = (self._feat_pos + 1) % cfg.window_size
        self._feat_count = min(self._feat_count + 1, cfg.window_size)
        window = self._window_array()
        forecast_candidate = None
        if window is not None:
            _, forecast = lstm.lstm_forward(self.infer_params, window, cfg.horizon)
            forecast_candidate = lstm.preemptive_check(
                forecast, self.book.thresholds, step, self.clock
            )
        lat_ms = (time.perf_counter() - t0) * 1e3

        if self.belief.degenerate_reset:
            self.degenerate_resets += 1

        self.drift_flags.append(drifted)
        self.latencies_ms.append(lat_ms)
        self.sim_times.append(self.clock.now())

        delivered = self._govern(candidate, forecast_candidate, window)
        if delivered:
            self._feedback(delivered)
        if self._fine_tune_pending:
            self._maybe_fine_tune()

        self.emit(
            "step",
            {
                "step": step,
                "episode": self.episode_index,
                "state": list(outcome.state),
                "action": outcome.action,
                "reward": outcome.reward,
                "done": outcome.done,
                "bumped": outcome.bumped_wall,
                "progress": outcome.progress_delta,
                "q_residual": outcome.q_residual,
                "drift": drifted,
                "entropy": ent,
                "score": self.anomaly.score,
                "degenerate": self.belief.degenerate_reset,
                "lat_ms": lat_ms,
            },
        )
        self.clock.advance(cfg.sim_seconds_per_step)
        self.global_step += 1

    def _window_array(self) -> np.ndarray | None:
        if self._feat_count < self.cfg.window_size:
            return None
        pos = self._feat_pos
        if pos == 0:
            return self._feat_buf.copy()
        out = np.empty_like(self._feat_buf)
        out[: self.cfg.window_size - pos] = self._feat_buf[pos:]
        out[self.cfg.window_size - pos :] = self._feat_buf[:pos]
        return out

    def _govern(self, candidate, forecast_candidate, window) -> list[gov.Alert]:
        delivered: list[gov.Alert] = []
        for cand in (candidate, forecast_candidate):
            if cand is None:
                continue
            self.candidate_steps.append((cand.step_index, cand.source))
            self.trigger_counts[cand.trigger] = self.trigger_counts.get(cand.trigger, 0) + 1
            alert = gov.submit(self.book, cand, self.clock, window=window)
            self.emit(
                "alert",
                {"alert_id": alert.id, "status": alert.status, **cand.payload()},
            )
            if alert.status == STATUS_DELIVERED:
                delivered.append(alert)
        for alert in gov.flush_batch(self.book, self.clock):
            self.emit(
                "alert",
                {
                    "alert_id": alert.id,
                    "status": alert.status,
                    "released_from_batch": True,
                    **alert.candidate.payload(),
                },
            )
            delivered.append(alert)
        for alert in delivered:
            gov.notify(alert, self.sinks, run_id=self.cfg.run_id)
        return delivered

    def _feedback(self, delivered: list[gov.Alert]) -> None:
        if self.cfg.feedback_policy != "oracle_human":
            return
        for alert in delivered:
            fb = oracle_verdict(alert, self.drift_flags)
            self.record_feedback(fb)

    def record_feedback(self, fb: FeedbackEvent) -> dict:
        """Apply one verdict and emit the trail; shared with the service."""
        before = self.book.thresholds.theta_u
        th, due = gov.apply_feedback(self.book, fb)
        self.emit(
            "feedback",
            {
                "alert_id": fb.alert_id,
                "verdict": fb.verdict,
                "streak": th.dismissal_streak,
                "theta_u": th.theta_u,
            },
        )
        if th.theta_u != before:
            self.emit(
                "threshold_change",
                {
                    "field": "theta_u",
                    "old": before,
                    "new": th.theta_u,
                    "cause": "dismissal_streak",
                },
            )
        if due:
            self._fine_tune_pending = True
        return {
            "alert_id": fb.alert_id,
            "verdict": fb.verdict,
            "theta_u": th.theta_u,
            "theta_a": th.theta_a,
            "dismissal_streak": th.dismissal_streak,
            "fine_tune_due": due,
        }

    def update_thresholds(
        self, theta_u: float | None = None, theta_a: float | None = None
    ) -> dict:
        """Operator override via the service config endpoint."""
        th = self.book.thresholds
        for name, value in (("theta_u", theta_u), ("theta_a", theta_a)):
            if value is None:
                continue
            if value <= 0 or (name == "theta_u" and value > th.theta_u_max):
                raise gov.GovernanceError("invalid_input", f"invalid {name}: {value}")
            old = getattr(th, name)
            if old != value:
                setattr(th, name, value)
                self.emit(
                    "threshold_change",
                    {"field": name, "old": old, "new": value, "cause": "api"},
                )
        return {
            "theta_u": th.theta_u,
            "theta_a": th.theta_a,
            "dismissal_streak": th.dismissal_streak,
        }

    def _maybe_fine_tune(self) -> None:
        buffer = self.book.fine_tune_buffer
        if len(buffer) < gov.FINE_TUNE_MIN_EXAMPLES:
            return
        self.params, stats = gov.run_fine_tune(
            buffer,
            self.params,
            lr=self.cfg.fine_tune_lr,
            epochs=self.cfg.fine_tune_epochs,
        )
        self._fine_tune_pending = False
        if stats is not None:
            self.fine_tune_rounds += 1
            self._refresh_inference_params()
            self.emit("fine_tune", stats)

    def _refresh_inference_params(self) -> None:
        # Inference always runs on the dequantized int8 snapshot.
        self.quantized = lstm.quantize(self.params)
        self.infer_params = lstm.dequantize(self.quantized)

    # -- bootstrap ---------------------------------------------------------

    # Injection rate for the bootstrap curriculum. Fixed on purpose: the
    # live stream's rate is unknown at pretrain time, so the forecaster
    # trains against one canonical sparse-onset regime instead of
    # adapting itself to whatever rate the run happens to use.
    PRETRAIN_DRIFT_PROB = 0.05

    def _pretrain(self) -> lstm.LstmParams:
        """Self-labeled bootstrap on a throwaway simulation.

        Runs the same maze/detector stack with drift injected at a fixed
        nominal rate and trains from scratch on windows sliced out of the
        stream. The positive class is drift onset, not drift presence:
        windows ending within ONSET_AGE steps of a segment start.
        Established drift is the detector's job; teaching the forecaster
        to re-flag it only floods the alert stream with redundant
        candidates.
        """
        cfg = self.cfg
        maze = self.maze
        q = mz.QTable.zeros(maze)
        belief_state = bel.init_belief("uniform", cfg.grid_resolution)
        anomaly = bel.AnomalyState(window_size=cfg.anomaly_window)
        rng = self.rng_pretrain
        rows: list[list[float]] = []
        ages: list[int] = []
        # A third of the stream runs drift-free at floor exploration so the
        # negative class includes the converged-agent texture the live run
        # spends most of its time in, not just the noisy warm-up episodes.
        calm_episodes = cfg.pretrain_episodes // 3
        for episode in range(cfg.pretrain_episodes + calm_episodes):
            calm = episode >= cfg.pretrain_episodes
            eps = cfg.epsilon_start - (cfg.epsilon_start - cfg.epsilon_floor) * min(
                1.0, episode / max(1.0, cfg.epsilon_decay_frac * cfg.pretrain_episodes)
            )
            anomaly = bel.AnomalyState(window_size=cfg.anomaly_window)
            drift_age = -1
            for outcome, drifted, _ in mz.episode_steps(
                maze,
                q,
                epsilon=cfg.epsilon_floor if calm else eps,
                alpha=cfg.alpha,
                gamma=cfg.gamma,
                drift_prob=0.0 if calm else self.PRETRAIN_DRIFT_PROB,
                noise_sigma=cfg.noise_sigma,
                rng=rng,
            ):
                if drifted:
                    drift_age += 1
                obs = bel.ObservationVec(
                    reward=outcome.reward,
                    bumped_wall=outcome.bumped_wall,
                    progress_delta=float(outcome.progress_delta),
                    q_residual=outcome.q_residual,
                )
                belief_state = bel.belief_update(belief_state, obs, self.tm, self.om)
                anomaly = bel.update_anomaly(anomaly, outcome.q_residual)
                mean = belief_state.mean_state()
                rows.append(
                    [
                        bel.entropy(belief_state),
                        math.log1p(anomaly.score),
                        mean.u,
                        mean.e,
                        mean.r,
                        outcome.q_residual,
                    ]
                )
                ages.append(drift_age)

        stream = np.array(rows)
        age = np.array(ages)
        params = lstm.LstmParams.xavier(hidden_dim=cfg.hidden_dim, seed=self._lstm_seed)
        w = cfg.window_size
        onset_age = 2 * cfg.horizon
        # Belief and window statistics react to an injection a few steps
        # late, so the earliest onset ages look identical to clean input.
        # Those windows poison whichever class they land in; drop them.
        lag = 3
        eligible = np.arange(w - 1, stream.shape[0])
        if eligible.size == 0:
            return params
        flags = (age >= lag) & (age < onset_age + lag)
        pos = eligible[flags[eligible]]
        # Negatives outnumber positives 2:1, split evenly between clean
        # and stale drift. The stale windows stop the model from collapsing
        # into a plain drift-presence detector that re-flags what the
        # detector already covers; the clean half pins false fires down.
        neg_clean = eligible[age[eligible] < 0]
        neg_stale = eligible[age[eligible] >= onset_age + lag]
        take = min(cfg.pretrain_per_class, pos.size)
        if take == 0 or (neg_clean.size + neg_stale.size) == 0:
            return params
        n_clean = min(take, neg_clean.size)
        n_stale = min(take, neg_stale.size)
        chosen = np.concatenate(
            [
                rng.choice(pos, size=take, replace=False),
                rng.choice(neg_clean, size=n_clean, replace=False),
                rng.choice(neg_stale, size=n_stale, replace=False),
            ]
        )
        examples = [
            lstm.TrainingExample(window=stream[i - w + 1 : i + 1].copy(), label=int(flags[i]))
            for i in chosen
        ]
        order = rng.permutation(len(examples))
        examples = [examples[i] for i in order]
        batch_size = 64
        for _ in range(cfg.pretrain_epochs):
            for lo in range(0, len(examples), batch_size):
                params = lstm.train_step(
                    params, examples[lo : lo + batch_size], lr=cfg.pretrain_lr
                )
        return params

    # -- reporting ---------------------------------------------------------

    def live_metrics(self) -> dict:
        return {
            "steps": len(self.drift_flags),
            "episodes": self.episode_index,
            "alerts": len(self.candidate_steps),
            "theta_u": self.book.thresholds.theta_u,
            "theta_a": self.book.thresholds.theta_a,
            "sim_time": self.clock.now(),
        }

    def finalize(self) -> tuple[RunMetrics, dict]:
        metrics = compute_metrics(
            np.array(self.drift_flags, dtype=bool),
            np.array(self.latencies_ms),
            self.candidate_steps,
            self.book.thresholds.theta_u,
            self.cfg.horizon,
            self.cfg.strict_attribution,
        )
        extras = {
            "backend": _kernels.BACKEND,
            "episodes_completed": self.episode_index,
            "injections": self.injection_count,
            "drifted_step_fraction": (
                float(np.mean(self.drift_flags)) if self.drift_flags else 0.0
            ),
            "trigger_counts": dict(self.trigger_counts),
            "alert_status_counts": self.book.counts(),
            "degenerate_resets": self.degenerate_resets,
            "fine_tune_rounds": self.fine_tune_rounds,
            "quarter_fpr": self._quarter_fpr(),
        }
        self.emit(
            "metrics",
            {"final": True, "metrics": _metrics_payload(metrics), "extras": extras},
        )
        return metrics, extras

    def _quarter_fpr(self) -> list[float | None]:
        """FPR per sim-time quarter; None where a quarter has no clean steps."""
        if not self.sim_times:
            return [None, None, None, None]
        from .metrics import detection_masks

        n = len(self.drift_flags)
        _, detected = detection_masks(
            n, self.candidate_steps, self.cfg.horizon, self.cfg.strict_attribution
        )
        drift = np.array(self.drift_flags, dtype=bool)
        times = np.array(self.sim_times)
        if self.cfg.max_sim_hours is not None:
            span = self.cfg.max_sim_hours * 3600.0
        else:
            span = times[-1] + self.cfg.sim_seconds_per_step
        out: list[float | None] = []
        for quarter in range(4):
            lo, hi = span * quarter / 4.0, span * (quarter + 1) / 4.0
            in_q = (times >= lo) & (times < hi)
            clean = in_q & np.logical_not(drift)
            out.append(float(detected[clean].mean()) if clean.any() else None)
        return out


def _metrics_payload(m: RunMetrics) -> dict:
    return {
        "avg_latency_ms": m.avg_latency_ms,
        "median_latency_ms": m.median_latency_ms,
        "tpr": m.tpr,
        "fpr": m.fpr,
        "drift_reduction_pct": m.drift_reduction_pct,
        "total_steps": m.total_steps,
        "total_alerts": m.total_alerts,
        "theta_u_final": m.theta_u_final,
    }
