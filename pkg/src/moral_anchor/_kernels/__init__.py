"""Backend selection for the per-step hot kernels.

The compiled extension is preferred when it imported cleanly; otherwise the
NumPy fallback is used. MAS_FORCE_NUMPY=1 pins the fallback regardless, which
is how the benchmark and the cross-backend tests get at both implementations.
"""

from __future__ import annotations

import os

from . import numpy_backend

try:
    from . import _core as _compiled
except ImportError:
    _compiled = None

if _compiled is not None and os.environ.get("MAS_FORCE_NUMPY") != "1":
    _active = _compiled
else:
    _active = numpy_backend

BACKEND = _active.NAME

transition_apply = _active.transition_apply
posterior_update = _active.posterior_update
entropy = _active.entropy
lstm_forward = _active.lstm_forward


def available_backends() -> list[str]:
    names = [numpy_backend.NAME]
    if _compiled is not None:
        names.append(_compiled.NAME)
    return names


def get_backend(name: str):
    """Explicit backend lookup; used by tests and the benchmark."""
    if name == numpy_backend.NAME:
        return numpy_backend
    if _compiled is not None and name == _compiled.NAME:
        return _compiled
    raise KeyError(f"unknown or unavailable backend: {name}")
