"""Pure NumPy implementations of the per-step hot kernels.

Reference backend: the compiled extension must agree with these functions
to float64 round-off. Keep the math here boring and explicit.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def transition_apply(probs: np.ndarray, matrix1d: np.ndarray, k: int) -> np.ndarray:
    """Apply the separable 1-D transition matrix along all three axes."""
    grid = probs.reshape(k, k, k)
    out = np.tensordot(matrix1d, grid, axes=([1], [0]))
    out = np.tensordot(matrix1d, out.transpose(1, 0, 2), axes=([1], [0])).transpose(1, 0, 2)
    out = np.tensordot(matrix1d, out.transpose(2, 0, 1), axes=([1], [0])).transpose(1, 2, 0)
    return np.ascontiguousarray(out.reshape(-1))


def posterior_update(pred: np.ndarray, loglik: np.ndarray) -> tuple[np.ndarray, bool]:
    """Reweight a predicted belief by exp(loglik), max-shifted for stability.

    Returns (posterior, degenerate). degenerate=True means every weight
    underflowed or went non-finite and the posterior was reset to uniform.
    """
    shift = np.max(loglik)
    if not np.isfinite(shift):
        return np.full(pred.shape[0], 1.0 / pred.shape[0]), True
    weights = pred * np.exp(loglik - shift)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0.0:
        return np.full(pred.shape[0], 1.0 / pred.shape[0]), True
    return weights / total, False


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*log(0)=0 convention."""
    nz = probs[probs > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def lstm_forward(
    w_ih: np.ndarray,
    w_hh: np.ndarray,
    b_ih: np.ndarray,
    b_hh: np.ndarray,
    w_out: np.ndarray,
    b_out: np.ndarray,
    window: np.ndarray,
    horizon: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the cell over a window, then roll the head out `horizon` steps.

    Gate layout along the 4H axis is [input, forget, cell, output]. The
    rollout feeds each entropy prediction back as feature 0 of the next
    input row; the remaining features repeat the window's final row.
    Returns (hidden_after_window, predicted_entropies, drift_logits).
    """
    hidden = w_hh.shape[1]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    bias = b_ih + b_hh
    for t in range(window.shape[0]):
        h, c = _cell(w_ih, w_hh, bias, window[t], h, c, hidden)
    h_final = h.copy()

    ents = np.empty(horizon)
    logits = np.empty(horizon)
    feedback = window[-1].copy()
    for step in range(horizon):
        ents[step] = float(w_out[0] @ h + b_out[0])
        logits[step] = float(w_out[1] @ h + b_out[1])
        if step + 1 < horizon:
            feedback[0] = ents[step]
            h, c = _cell(w_ih, w_hh, bias, feedback, h, c, hidden)
    return h_final, ents, logits


def _cell(w_ih, w_hh, bias, x, h, c, hidden):
    z = w_ih @ x + w_hh @ h + bias
    i = _sigmoid(z[:hidden])
    f = _sigmoid(z[hidden : 2 * hidden])
    g = np.tanh(z[2 * hidden : 3 * hidden])
    o = _sigmoid(z[3 * hidden :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
