"""Single-layer LSTM forecaster, trained by hand-rolled truncated BPTT.

Inputs are windows of w per-step feature rows:

    [entropy, log1p(anomaly_score), mean_u, mean_e, mean_r, q_residual]

The cell is the standard formulation (gate order input, forget, cell,
output along the stacked 4H axis; logistic gates, tanh cell). After the
window is consumed, the 2-unit head is rolled out autoregressively for the
forecast horizon, feeding each entropy prediction back in as feature 0 of
the next input row; the drift logit is squashed to a probability.

Training optimizes binary cross-entropy of the drift probability at the
first horizon step only, with plain gradient descent. That head is the one
the preemptive trigger relies on; the entropy head receives no gradient
from this loss and stays near its initialization, so its predictions are
reported but rarely cross an entropy threshold on their own.

Weights can be snapshotted to int8 per-tensor symmetric quantization and
restored; inference then runs on the dequantized tensors in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import _kernels
from .belief import (
    SEVERITY_WARNING,
    SOURCE_FORECASTER,
    TRIGGER_FORECAST,
    AlertCandidate,
)

if TYPE_CHECKING:
    from .governance import ThresholdState

FEATURE_NAMES = (
    "entropy",
    "log1p_score",
    "mean_u",
    "mean_e",
    "mean_r",
    "q_residual",
)
INPUT_DIM = len(FEATURE_NAMES)
DEFAULT_WINDOW = 50
DEFAULT_HIDDEN = 32
DEFAULT_HORIZON = 5
PROB_CLAMP = 1e-7
DRIFT_PROB_TRIGGER = 0.5

_TENSOR_NAMES = ("w_ih", "w_hh", "b_ih", "b_hh", "w_out", "b_out")


class TrainingDivergedError(RuntimeError):
    """Raised when a gradient goes non-finite during training."""


@dataclass
class LstmParams:
    """Float64 weights. Shapes: w_ih (4H, d), w_hh (4H, H), biases (4H,),
    w_out (2, H) with row 0 the entropy head and row 1 the drift logit."""

    w_ih: np.ndarray
    w_hh: np.ndarray
    b_ih: np.ndarray
    b_hh: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w_ih.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_hh.shape[1]

    @classmethod
    def xavier(
        cls, input_dim: int = INPUT_DIM, hidden_dim: int = DEFAULT_HIDDEN, seed: int = 0
    ) -> "LstmParams":
        """Xavier-uniform weights, zero biases, reproducible from the seed."""
        rng = np.random.default_rng(seed)

        def draw(rows, cols):
            limit = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-limit, limit, (rows, cols))

        return cls(
            w_ih=draw(4 * hidden_dim, input_dim),
            w_hh=draw(4 * hidden_dim, hidden_dim),
            b_ih=np.zeros(4 * hidden_dim),
            b_hh=np.zeros(4 * hidden_dim),
            w_out=draw(2, hidden_dim),
            b_out=np.zeros(2),
        )

    def copy(self) -> "LstmParams":
        return LstmParams(*(getattr(self, n).copy() for n in _TENSOR_NAMES))

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in _TENSOR_NAMES}


@dataclass
class FeatureWindow:
    """Exactly window_size most recent feature rows, oldest first."""

    rows: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[1] != INPUT_DIM:
            raise ValueError(f"expected (w, {INPUT_DIM}) rows, got {self.rows.shape}")
        if not np.isfinite(self.rows).all():
            raise ValueError("feature window contains non-finite values")

    @property
    def length(self) -> int:
        return self.rows.shape[0]


@dataclass
class Forecast:
    """Autoregressive rollout: entry k is the prediction k+1 steps ahead."""

    predicted_entropy: np.ndarray
    drift_prob: np.ndarray

    @property
    def horizon(self) -> int:
        return self.predicted_entropy.shape[0]


@dataclass
class TrainingExample:
    window: np.ndarray
    label: int


def lstm_forward(
    p: LstmParams, win: FeatureWindow | np.ndarray, horizon: int = DEFAULT_HORIZON
) -> tuple[np.ndarray, Forecast]:
    """Full forward pass. Returns (hidden state after the window, Forecast)."""
    rows = win.rows if isinstance(win, FeatureWindow) else win
    h_final, ents, logits = _kernels.lstm_forward(
        p.w_ih, p.w_hh, p.b_ih, p.b_hh, p.w_out, p.b_out,
        np.ascontiguousarray(rows), horizon,
    )
    return h_final, Forecast(predicted_entropy=ents, drift_prob=_sigmoid(logits))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[np.logical_not(pos)])
    out[np.logical_not(pos)] = ex / (1.0 + ex)
    return out


def _stack_batch(batch: Sequence[TrainingExample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([ex.window for ex in batch]).astype(float)
    y = np.array([float(ex.label) for ex in batch])
    return x, y


def _forward_window_batch(p: LstmParams, x: np.ndarray, cache: bool):
    """Batched pass over the window only; the horizon-1 logit needs no rollout."""
    n, w, _ = x.shape
    hidden = p.hidden_dim
    h = np.zeros((n, hidden))
    c = np.zeros((n, hidden))
    bias = p.b_ih + p.b_hh
    steps = []
    for t in range(w):
        z = x[:, t, :] @ p.w_ih.T + h @ p.w_hh.T + bias
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden : 2 * hidden])
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = _sigmoid(z[:, 3 * hidden :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        if cache:
            steps.append((x[:, t, :], h, c, i, f, g, o, tanh_c))
        h, c = h_new, c_new
    return h, steps


def _predict_prob(p: LstmParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, list]:
    h, steps = _forward_window_batch(p, x, cache=True)
    logit = h @ p.w_out[1] + p.b_out[1]
    return _sigmoid(logit), h, steps


def predict_drift_prob(p: LstmParams, windows: np.ndarray) -> np.ndarray:
    """Horizon-1 drift probability for a batch of (w, d) windows."""
    prob, _, _ = _predict_prob(p, windows)
    return prob


def loss(p: LstmParams, batch: Sequence[TrainingExample]) -> float:
    """Mean binary cross-entropy of the horizon-1 drift probability."""
    x, y = _stack_batch(batch)
    prob = predict_drift_prob(p, x)
    prob = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(prob) + (1.0 - y) * np.log(1.0 - prob)))


def loss_gradients(
    p: LstmParams, batch: Sequence[TrainingExample], chunk_size: int = 64
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus full-BPTT gradients, accumulated over fixed-size chunks.

    Chunking bounds the cached activation memory; the result is the exact
    whole-batch gradient regardless of chunk size.
    """
    x_all, y_all = _stack_batch(batch)
    total = x_all.shape[0]
    hidden = p.hidden_dim
    grads = {n: np.zeros_like(getattr(p, n)) for n in _TENSOR_NAMES}
    loss_sum = 0.0

    for lo in range(0, total, chunk_size):
        x = x_all[lo : lo + chunk_size]
        y = y_all[lo : lo + chunk_size]
        prob, h_last, steps = _predict_prob(p, x)
        clipped = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
        loss_sum += float(-np.sum(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped)))

        # d loss / d logit for sigmoid + BCE, averaged over the full batch.
        dlogit = (prob - y) / total
        grads["b_out"][1] += dlogit.sum()
        grads["w_out"][1] += dlogit @ h_last
        dh = np.outer(dlogit, p.w_out[1])
        dc = np.zeros((x.shape[0], hidden))

        for x_t, h_prev, c_prev, i, f, g, o, tanh_c in reversed(steps):
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g**2),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            grads["w_ih"] += dz.T @ x_t
            grads["w_hh"] += dz.T @ h_prev
            dbias = dz.sum(axis=0)
            grads["b_ih"] += dbias
            grads["b_hh"] += dbias
            dh = dz @ p.w_hh
            dc = dc * f

    return loss_sum / total, grads


def train_step(
    p: LstmParams, batch: Sequence[TrainingExample], lr: float = 1e-3
) -> LstmParams:
    """One plain gradient-descent update; returns new params, inputs untouched."""
    _, grads = loss_gradients(p, batch)
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise TrainingDivergedError(f"non-finite gradient in {name}")
    return LstmParams(
        **{n: getattr(p, n) - lr * grads[n] for n in _TENSOR_NAMES}
    )


@dataclass
class QuantizedParams:
    """Per-tensor symmetric int8 snapshot of LstmParams."""

    tensors: dict[str, np.ndarray]
    scales: dict[str, float]

    def __post_init__(self):
        for name in _TENSOR_NAMES:
            if self.tensors[name].dtype != np.int8:
                raise ValueError(f"{name} must be int8")
            if self.scales[name] <= 0.0:
                raise ValueError(f"scale for {name} must be positive")


def quantize(p: LstmParams) -> QuantizedParams:
    """scale = max|w| / 127 per tensor (1.0 for an all-zero tensor)."""
    tensors: dict[str, np.ndarray] = {}
    scales: dict[str, float] = {}
    for name, tensor in p.tensors().items():
        peak = float(np.max(np.abs(tensor)))
        scale = peak / 127.0 if peak > 0.0 else 1.0
        q = np.clip(np.round(tensor / scale), -127, 127).astype(np.int8)
        tensors[name] = q
        scales[name] = scale
    return QuantizedParams(tensors=tensors, scales=scales)


def dequantize(qp: QuantizedParams) -> LstmParams:
    return LstmParams(
        **{
            name: qp.tensors[name].astype(float) * qp.scales[name]
            for name in _TENSOR_NAMES
        }
    )


def preemptive_check(
    f: Forecast, th: "ThresholdState", step_index: int, clock
) -> AlertCandidate | None:
    """Warning candidate when the rollout predicts trouble ahead.

    Fires when any predicted entropy exceeds theta_u, or failing that when
    any drift probability exceeds 0.5; the reason field records which.
    """
    ent_peak = float(np.max(f.predicted_entropy))
    if ent_peak > th.theta_u:
        return AlertCandidate(
            source=SOURCE_FORECASTER,
            severity=SEVERITY_WARNING,
            trigger=TRIGGER_FORECAST,
            value=ent_peak,
            threshold_at_trigger=th.theta_u,
            step_index=step_index,
            wall_time=clock.now(),
            reason="pred_entropy",
        )
    prob_peak = float(np.max(f.drift_prob))
    if prob_peak > DRIFT_PROB_TRIGGER:
        return AlertCandidate(
            source=SOURCE_FORECASTER,
            severity=SEVERITY_WARNING,
            trigger=TRIGGER_FORECAST,
            value=prob_peak,
            threshold_at_trigger=DRIFT_PROB_TRIGGER,
            step_index=step_index,
            wall_time=clock.now(),
            reason="drift_prob",
        )
    return None


def save_params(path: str | Path, p: LstmParams, seed: int | None = None) -> None:
    """Flat binary snapshot: one JSON header line, then raw float64 tensors."""
    _save(path, p.tensors(), kind="float64", scales=None, seed=seed)


def load_params(path: str | Path) -> tuple[LstmParams, dict]:
    tensors, header = _load(path, expected_kind="float64", dtype=np.float64)
    return LstmParams(**tensors), header


def save_quantized(path: str | Path, qp: QuantizedParams, seed: int | None = None) -> None:
    _save(path, qp.tensors, kind="int8", scales=qp.scales, seed=seed)


def load_quantized(path: str | Path) -> tuple[QuantizedParams, dict]:
    tensors, header = _load(path, expected_kind="int8", dtype=np.int8)
    return QuantizedParams(tensors=tensors, scales=dict(header["scales"])), header


def _save(path, tensors, kind, scales, seed):
    header = {
        "kind": kind,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in _TENSOR_NAMES],
        "seed": seed,
    }
    if scales is not None:
        header["scales"] = scales
    blob = b"".join(np.ascontiguousarray(tensors[n]).tobytes() for n in _TENSOR_NAMES)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def _load(path, expected_kind, dtype):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header["kind"] != expected_kind:
            raise ValueError(f"snapshot kind {header['kind']!r}, expected {expected_kind!r}")
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * np.dtype(dtype).itemsize)
            tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return tensors, header
