"""Discretized Bayes filter over an agent's latent value state.

The latent state is a point in the unit cube: utility weight u, empathy e,
rule-adherence r. The filter keeps a probability mass function over K cells
per axis (K^3 total) and alternates two moves per observation:

  1. transition: separable Gaussian jitter applied along each axis, with
     mass reflected at the cube boundary. Reflection keeps the operator
     doubly stochastic, so the uniform distribution is an exact fixed point
     and no probability ever leaks off the grid.
  2. update: pointwise reweighting by the observation likelihood, computed
     in log space with a max shift so long runs cannot underflow. If every
     weight still collapses, the belief resets to uniform and the returned
     grid is flagged.

Observation features are tied to the value coordinates by simple affine
models: reward tracks u, wall bumps track r (Bernoulli), progress tracks
u*r, and the magnitude of the Q residual is scaled by 1-r. The empathy
coordinate is deliberately left unobserved; its marginal stays near uniform
and contributes a fixed entropy floor, which is why entropy thresholds well
below ln(K) fire on every step.

The running anomaly score is a plain sum of squared Q residuals over a
sliding window, compared against its own threshold. When both the entropy
and anomaly triggers exceed their thresholds on the same step, the anomaly
trigger wins and a single critical candidate is emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels

if TYPE_CHECKING:
    from .governance import ThresholdState

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

SOURCE_DETECTOR = "detector"
SOURCE_FORECASTER = "forecaster"
SEVERITY_WARNING = "warning"
SEVERITY_CRITICAL = "critical"
TRIGGER_ENTROPY = "entropy"
TRIGGER_ANOMALY = "anomaly"
TRIGGER_FORECAST = "forecast"


@dataclass(frozen=True)
class ValueState:
    """One point in the unit cube (utility, empathy, rule-adherence)."""

    u: float
    e: float
    r: float

    def __post_init__(self):
        for name, v in (("u", self.u), ("e", self.e), ("r", self.r)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.e, self.r])


@dataclass
class ObservationVec:
    """Per-step behavioral features consumed by the filter."""

    reward: float
    bumped_wall: bool
    progress_delta: float
    q_residual: float


_CENTERS_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}


def _grid_centers(k: int):
    """Flat per-cell center coordinates (u, e, r) plus the (n, 3) stack."""
    cached = _CENTERS_CACHE.get(k)
    if cached is None:
        axis = (np.arange(k) + 0.5) / k
        u, e, r = np.meshgrid(axis, axis, axis, indexing="ij")
        stack = np.stack([u.ravel(), e.ravel(), r.ravel()], axis=1)
        cached = (u.ravel(), e.ravel(), r.ravel(), stack)
        _CENTERS_CACHE[k] = cached
    return cached


@dataclass
class BeliefGrid:
    """PMF over the discretized cube, flattened in (u, e, r) axis order."""

    probs: np.ndarray
    resolution: int = 5
    degenerate_reset: bool = False

    def __post_init__(self):
        n = self.resolution**3
        if self.probs.shape != (n,):
            raise ValueError(f"expected {n} cells, got {self.probs.shape}")

    @classmethod
    def uniform(cls, resolution: int = 5) -> "BeliefGrid":
        n = resolution**3
        return cls(np.full(n, 1.0 / n), resolution)

    @classmethod
    def peaked(cls, state: ValueState, resolution: int = 5) -> "BeliefGrid":
        k = resolution
        idx = [min(int(coord * k), k - 1) for coord in (state.u, state.e, state.r)]
        probs = np.zeros(k**3)
        probs[(idx[0] * k + idx[1]) * k + idx[2]] = 1.0
        return cls(probs, k)

    def cell_centers(self) -> np.ndarray:
        return _grid_centers(self.resolution)[3]

    def mean_state(self) -> ValueState:
        u, e, r, _ = _grid_centers(self.resolution)
        return ValueState(
            float(self.probs @ u), float(self.probs @ e), float(self.probs @ r)
        )


def init_belief(prior: str | ValueState = "uniform", resolution: int = 5) -> BeliefGrid:
    """Build the initial belief: "uniform" or a ValueState to peak on."""
    if isinstance(prior, ValueState):
        return BeliefGrid.peaked(prior, resolution)
    if prior == "uniform":
        return BeliefGrid.uniform(resolution)
    raise ValueError(f"unknown prior {prior!r}")


@dataclass(frozen=True)
class TransitionModel:
    """Per-step Gaussian jitter of the value state, sigma in value units."""

    jitter_sigma: float = 0.05

    def __post_init__(self):
        if self.jitter_sigma <= 0.0:
            raise ValueError("jitter_sigma must be positive")

    def matrix(self, resolution: int) -> np.ndarray:
        """Dense 1-D transition matrix (column j = source cell j).

        Built from a truncated Gaussian kernel over cell offsets, reflected
        at the boundary. The result is symmetric and doubly stochastic.
        """
        return _transition_matrix(self.jitter_sigma, resolution)


_MATRIX_CACHE: dict[tuple[float, int], np.ndarray] = {}


def _transition_matrix(sigma: float, k: int) -> np.ndarray:
    key = (sigma, k)
    cached = _MATRIX_CACHE.get(key)
    if cached is not None:
        return cached
    radius = max(1, math.ceil(3.0 * sigma * k))
    if radius >= k:
        radius = k - 1
    offsets = np.arange(-radius, radius + 1)
    weights = np.exp(-0.5 * (offsets / (sigma * k)) ** 2)
    weights /= weights.sum()
    matrix = np.zeros((k, k))
    for j in range(k):
        for off, w in zip(offsets, weights):
            t = j + off
            if t < 0:
                t = -1 - t
            elif t >= k:
                t = 2 * k - 1 - t
            matrix[t, j] += w
    _MATRIX_CACHE[key] = matrix
    return matrix


def transition_predict(b: BeliefGrid, tm: TransitionModel) -> BeliefGrid:
    probs = _kernels.transition_apply(b.probs, tm.matrix(b.resolution), b.resolution)
    return BeliefGrid(probs, b.resolution)


@dataclass(frozen=True)
class ObservationModel:
    """Affine feature models tying observations to value coordinates.

    reward ~ N(reward_bias + reward_gain*u, reward_sigma)
    bump   ~ Bernoulli(clip(bump_base + bump_gain*r, 0.01, 0.99))
    progress ~ N(progress_bias + progress_gain*u*r, progress_sigma)
    q_residual ~ N(0, resid_sigma_base + resid_sigma_gain*(1-r))
    """

    reward_bias: float = -0.10
    reward_gain: float = 0.25
    reward_sigma: float = 0.30
    bump_base: float = 0.50
    bump_gain: float = -0.45
    progress_bias: float = -0.30
    progress_gain: float = 1.30
    progress_sigma: float = 0.60
    resid_sigma_base: float = 0.10
    resid_sigma_gain: float = 1.50

    def __post_init__(self):
        if self.reward_sigma <= 0 or self.progress_sigma <= 0:
            raise ValueError("feature sigmas must be positive")
        if self.resid_sigma_base <= 0:
            raise ValueError("resid_sigma_base must be positive")

    def bump_probability(self, r: float | np.ndarray):
        return np.clip(self.bump_base + self.bump_gain * r, 0.01, 0.99)

    def residual_sigma(self, r: float | np.ndarray):
        return self.resid_sigma_base + self.resid_sigma_gain * (1.0 - r)

    def log_likelihood_grid(self, o: ObservationVec, resolution: int) -> np.ndarray:
        """Vectorized per-cell log density of one observation."""
        tables = _model_tables(self, resolution)
        ll = -0.5 * ((o.reward - tables["reward_mean"]) / self.reward_sigma) ** 2
        ll = ll - (math.log(self.reward_sigma) + LOG_SQRT_2PI)
        ll = ll + (tables["log_bump"] if o.bumped_wall else tables["log_no_bump"])
        ll = ll - 0.5 * ((o.progress_delta - tables["progress_mean"]) / self.progress_sigma) ** 2
        ll = ll - (math.log(self.progress_sigma) + LOG_SQRT_2PI)
        ll = ll - 0.5 * (o.q_residual / tables["resid_sigma"]) ** 2
        ll = ll - tables["log_resid_sigma"] - LOG_SQRT_2PI
        return ll

    def log_likelihood_point(self, o: ObservationVec, v: ValueState) -> float:
        p_bump = float(self.bump_probability(v.r))
        sigma_q = float(self.residual_sigma(v.r))
        ll = -0.5 * ((o.reward - (self.reward_bias + self.reward_gain * v.u)) / self.reward_sigma) ** 2
        ll -= math.log(self.reward_sigma) + LOG_SQRT_2PI
        ll += math.log(p_bump) if o.bumped_wall else math.log1p(-p_bump)
        mean_p = self.progress_bias + self.progress_gain * v.u * v.r
        ll += -0.5 * ((o.progress_delta - mean_p) / self.progress_sigma) ** 2
        ll -= math.log(self.progress_sigma) + LOG_SQRT_2PI
        ll += -0.5 * (o.q_residual / sigma_q) ** 2
        ll -= math.log(sigma_q) + LOG_SQRT_2PI
        return ll


_TABLES_CACHE: dict[tuple, dict[str, np.ndarray]] = {}


def _model_tables(model: ObservationModel, k: int) -> dict[str, np.ndarray]:
    key = (model, k)
    cached = _TABLES_CACHE.get(key)
    if cached is None:
        u, _, r, _ = _grid_centers(k)
        p_bump = model.bump_probability(r)
        sigma_q = model.residual_sigma(r)
        cached = {
            "reward_mean": model.reward_bias + model.reward_gain * u,
            "log_bump": np.log(p_bump),
            "log_no_bump": np.log1p(-p_bump),
            "progress_mean": model.progress_bias + model.progress_gain * u * r,
            "resid_sigma": sigma_q,
            "log_resid_sigma": np.log(sigma_q),
        }
        _TABLES_CACHE[key] = cached
    return cached


def observation_likelihood(o: ObservationVec, v: ValueState, om: ObservationModel) -> float:
    """Density of one observation at one value state. Strictly positive."""
    return math.exp(om.log_likelihood_point(o, v))


def belief_update(
    b: BeliefGrid, o: ObservationVec, tm: TransitionModel, om: ObservationModel
) -> BeliefGrid:
    """One filter step: jitter, reweight, renormalize.

    On total underflow the belief resets to uniform and the returned grid
    has degenerate_reset=True.
    """
    pred = _kernels.transition_apply(b.probs, tm.matrix(b.resolution), b.resolution)
    loglik = om.log_likelihood_grid(o, b.resolution)
    post, degenerate = _kernels.posterior_update(pred, loglik)
    return BeliefGrid(post, b.resolution, degenerate_reset=degenerate)


def entropy(b: BeliefGrid) -> float:
    """Belief entropy in nats; uniform at resolution K gives 3*ln(K)."""
    return _kernels.entropy(b.probs)


@dataclass
class AnomalyState:
    """Sliding window of Q residuals and its sum-of-squares score."""

    window: tuple[float, ...] = ()
    window_size: int = 20
    score: float = 0.0


def update_anomaly(a: AnomalyState, q_residual: float) -> AnomalyState:
    """Slide the window and recompute the score from scratch."""
    window = (a.window + (float(q_residual),))[-a.window_size :]
    score = 0.0
    for value in window:
        score += value * value
    return AnomalyState(window=window, window_size=a.window_size, score=score)


@dataclass
class AlertCandidate:
    """A single would-be alert, before governance decides its fate."""

    source: str
    severity: str
    trigger: str
    value: float
    threshold_at_trigger: float
    step_index: int
    wall_time: float
    reason: str | None = None

    def payload(self) -> dict:
        data = {
            "source": self.source,
            "severity": self.severity,
            "trigger": self.trigger,
            "value": self.value,
            "threshold": self.threshold_at_trigger,
            "step": self.step_index,
            "wall_time": self.wall_time,
        }
        if self.reason is not None:
            data["reason"] = self.reason
        return data


def detect(
    b: BeliefGrid,
    a: AnomalyState,
    th: "ThresholdState",
    step_index: int,
    clock,
) -> AlertCandidate | None:
    """Emit at most one candidate per step; the anomaly trigger wins ties."""
    if a.score > th.theta_a:
        return AlertCandidate(
            source=SOURCE_DETECTOR,
            severity=SEVERITY_CRITICAL,
            trigger=TRIGGER_ANOMALY,
            value=a.score,
            threshold_at_trigger=th.theta_a,
            step_index=step_index,
            wall_time=clock.now(),
        )
    ent = entropy(b)
    if ent > th.theta_u:
        return AlertCandidate(
            source=SOURCE_DETECTOR,
            severity=SEVERITY_WARNING,
            trigger=TRIGGER_ENTROPY,
            value=ent,
            threshold_at_trigger=th.theta_u,
            step_index=step_index,
            wall_time=clock.now(),
        )
    return None
