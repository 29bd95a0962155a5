"""Hot-kernel backend selection.

The compiled Cython kernels are used when the extension imported cleanly;
otherwise the pure numpy implementation takes over.  ``PRAGNAV_KERNELS`` can
force a backend: "auto" (default), "compiled", or "pure".
"""

import os

from . import pure

_BACKENDS = {"pure": pure}
try:
    from . import _fastops
    _BACKENDS["compiled"] = _fastops
except ImportError:
    _fastops = None

_requested = os.environ.get("PRAGNAV_KERNELS", "auto")
if _requested == "auto":
    _active_name = "compiled" if "compiled" in _BACKENDS else "pure"
elif _requested in _BACKENDS:
    _active_name = _requested
elif _requested == "compiled":
    raise ImportError("PRAGNAV_KERNELS=compiled but the extension is not built")
else:
    raise ValueError(f"unknown PRAGNAV_KERNELS value {_requested!r}")


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    return _BACKENDS[name]


def active_name():
    return _active_name


def use(name):
    """Switch the active backend (tests and benchmarks)."""
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    _active_name = name


def lstm_forward(W, b, z, c_prev):
    return _BACKENDS[_active_name].lstm_forward(W, b, z, c_prev)


def lstm_infer(W, b, z, c_prev):
    return _BACKENDS[_active_name].lstm_infer(W, b, z, c_prev)


def lstm_backward(W, cache, d_hc):
    return _BACKENDS[_active_name].lstm_backward(W, cache, d_hc)
