"""Moral Anchor: behavioral value-drift detection for a small RL agent.

A Q-learning agent walks a 5x5 maze while random drift injections corrupt
its policy. A grid Bayes filter tracks a latent value state from behavioral
observations, an anomaly window scores Q residuals, an LSTM forecasts
entropy and drift ahead of time, and a governance layer turns triggers into
rate-limited, deduplicated alerts whose human feedback adapts the entropy
threshold and fine-tunes the forecaster.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND, available_backends
from .belief import (
    AlertCandidate,
    AnomalyState,
    BeliefGrid,
    ObservationModel,
    ObservationVec,
    TransitionModel,
    ValueState,
    belief_update,
    detect,
    entropy,
    init_belief,
    update_anomaly,
)
from .events import EventRecord, JsonlEventLog, SimClock, read_events
from .governance import (
    Alert,
    AlertBook,
    FeedbackEvent,
    GovernanceError,
    NotificationSink,
    ThresholdState,
    apply_feedback,
    flush_batch,
    notify,
    run_fine_tune,
    submit,
)
from .lstm import (
    Forecast,
    LstmParams,
    QuantizedParams,
    TrainingExample,
    dequantize,
    lstm_forward,
    preemptive_check,
    quantize,
    train_step,
)
from .maze import MazeConfig, QTable, StepOutcome, build_default_maze, inject_drift, run_episode
from .metrics import RunMetrics, compute_metrics, metrics_from_events
from .pipeline import RunConfig, RunEngine

__all__ = [
    "__version__",
    "BACKEND",
    "available_backends",
    "Alert",
    "AlertBook",
    "AlertCandidate",
    "AnomalyState",
    "BeliefGrid",
    "EventRecord",
    "FeedbackEvent",
    "Forecast",
    "GovernanceError",
    "JsonlEventLog",
    "LstmParams",
    "MazeConfig",
    "NotificationSink",
    "ObservationModel",
    "ObservationVec",
    "QTable",
    "QuantizedParams",
    "RunConfig",
    "RunEngine",
    "RunMetrics",
    "SimClock",
    "StepOutcome",
    "ThresholdState",
    "TrainingExample",
    "TransitionModel",
    "ValueState",
    "apply_feedback",
    "belief_update",
    "build_default_maze",
    "compute_metrics",
    "dequantize",
    "detect",
    "entropy",
    "flush_batch",
    "init_belief",
    "inject_drift",
    "lstm_forward",
    "metrics_from_events",
    "notify",
    "preemptive_check",
    "quantize",
    "read_events",
    "run_episode",
    "run_fine_tune",
    "submit",
    "train_step",
    "update_anomaly",
]
