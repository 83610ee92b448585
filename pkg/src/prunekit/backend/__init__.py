"""Convolution kernel backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
numpy fallback is used. Set ``PRUNEKIT_BACKEND=numpy`` to force the fallback,
or ``PRUNEKIT_BACKEND=compiled`` to fail loudly when the extension is missing.
Both backends take float64 C-contiguous NCHW arrays and agree to float64
rounding (they accumulate in different orders, so results can differ by ulps).
"""

import os

from . import conv_numpy

try:
    from . import _convkernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"numpy": conv_numpy}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def _initial_backend() -> str:
    forced = os.environ.get("PRUNEKIT_BACKEND", "").strip().lower()
    if forced:
        if forced not in ("numpy", "compiled"):
            raise ValueError(f"PRUNEKIT_BACKEND must be 'numpy' or 'compiled', got {forced!r}")
        if forced == "compiled" and _compiled is None:
            raise ImportError("PRUNEKIT_BACKEND=compiled but the extension is not built")
        return forced
    return "compiled" if _compiled is not None else "numpy"


_active_name = _initial_backend()


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active_name


def use_backend(name: str) -> None:
    """Switch kernels at runtime (used by tests and the benchmark)."""
    global _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active_name = name


def conv2d_forward(x, weight, bias, stride, padding):
    return _BACKENDS[_active_name].conv2d_forward(x, weight, bias, stride, padding)


def conv2d_backward(x, weight, dy, stride, padding):
    return _BACKENDS[_active_name].conv2d_backward(x, weight, dy, stride, padding)


output_hw = conv_numpy.output_hw
