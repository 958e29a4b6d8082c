"""Recurrent sequence kernels: compiled fast path with numpy fallback.

The time-step loop of the bidirectional encoders is the hot inner loop of
training; the Cython extension (``_rnn_cy``) runs it with BLAS-backed
matmuls and typed gating loops. Both backends implement identical
semantics (see ``_rnn_py``) and are interchangeable.

Backend selection at import, overridable:
  * env var MULTIRAT_KERNEL = "cython" | "python" | "auto" (default auto)
  * :func:`set_backend` at runtime (used by tests and the benchmark)
"""

import os

import numpy as np

from . import _rnn_py

try:
    from . import _rnn_cy
except ImportError:  # extension not built
    _rnn_cy = None

_BACKENDS = {"python": _rnn_py}
if _rnn_cy is not None:
    _BACKENDS["cython"] = _rnn_cy

_active_name = None
_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name: str):
    """Select the kernel backend by name ("auto" picks compiled if built)."""
    global _active_name, _active
    if name == "auto":
        name = "cython" if "cython" in _BACKENDS else "python"
    if name not in _BACKENDS:
        raise ValueError(
            f"kernel backend {name!r} not available; built: {available_backends()}"
        )
    _active_name = name
    _active = _BACKENDS[name]


def active_backend() -> str:
    return _active_name


set_backend(os.environ.get("MULTIRAT_KERNEL", "auto"))


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def rnn_forward(x, valid, wx, wh, b):
    return _active.rnn_forward(_c(x), _c(valid), _c(wx), _c(wh), _c(b))


def rnn_backward(x, valid, wx, wh, hs, dhs):
    return _active.rnn_backward(_c(x), _c(valid), _c(wx), _c(wh), _c(hs), _c(dhs))
