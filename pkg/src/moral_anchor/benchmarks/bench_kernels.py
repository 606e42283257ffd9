"""Microbenchmarks for the hot kernels, numpy fallback vs compiled core.

Run as a script or through `mas bench`. Shapes match production use:
a 5x5x5 belief grid and a 50-step window into a 32-unit LSTM.
"""

from __future__ import annotations

import time

import numpy as np

from .. import _kernels
from .._kernels import numpy_backend


def _time_call(fn, args, repeats: int) -> float:
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats * 1e6


def _cases(rng: np.random.Generator):
    k = 5
    probs = rng.random((k, k, k))
    probs /= probs.sum()
    matrix = rng.random((k, k))
    matrix /= matrix.sum(axis=1, keepdims=True)
    loglik = rng.normal(size=(k, k, k))
    hidden = 32
    dim = 6
    window = rng.normal(size=(50, dim))
    w_ih = rng.normal(size=(4 * hidden, dim)) * 0.1
    w_hh = rng.normal(size=(4 * hidden, hidden)) * 0.1
    b_ih = np.zeros(4 * hidden)
    b_hh = np.zeros(4 * hidden)
    w_out = rng.normal(size=(2, hidden)) * 0.1
    b_out = np.zeros(2)
    return [
        ("transition_apply", "transition_apply", (probs, matrix, k)),
        ("posterior_update", "posterior_update", (probs, loglik)),
        ("entropy", "entropy", (probs,)),
        (
            "lstm_forward",
            "lstm_forward",
            (w_ih, w_hh, b_ih, b_hh, w_out, b_out, window, 5),
        ),
    ]


def run_benchmarks(repeats: int = 200) -> str:
    rng = np.random.default_rng(0)
    backends = [("numpy", numpy_backend)]
    try:
        backends.append(("cython", _kernels.get_backend("cython")))
    except KeyError:
        pass
    lines = [
        f"active backend: {_kernels.BACKEND}",
        f"{'kernel':<18}" + "".join(f"{name + ' (us)':>16}" for name, _ in backends),
    ]
    for label, attr, args in _cases(rng):
        cells = []
        for _, mod in backends:
            cells.append(f"{_time_call(getattr(mod, attr), args, repeats):>16.2f}")
        lines.append(f"{label:<18}" + "".join(cells))
    return "\n".join(lines)


if __name__ == "__main__":
    print(run_benchmarks())
