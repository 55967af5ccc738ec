"""Backend switch for the per-row simplex kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise
the numpy implementation in ``_pykernels``. :func:`use_backend` switches at
runtime (tests and the benchmark exercise both).
"""
import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels

_active = _ckernels if _ckernels is not None else _pykernels


def available_backends() -> list[str]:
    return list(_BACKENDS)


def backend() -> str:
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def use_backend(name: str) -> str:
    """Select ``"python"`` or ``"compiled"``; returns the previously active name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable (have {available_backends()})")
    previous = backend()
    _active = _BACKENDS[name]
    return previous


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def kuma_forward(u, beta):
    return _active.kuma_forward(_c(u), _c(beta))


def kuma_partials(u, beta):
    """``(v, dv/du, dv/dbeta)`` elementwise; ``beta`` is a column."""
    return _active.kuma_partials(_c(u), _c(beta))


def stick_forward(v):
    return _active.stick_forward(_c(v))


def stick_backward(v, g):
    return _active.stick_backward(_c(v), _c(g))


def entropy_forward(s, p=1.0, eps=1e-12):
    return float(_active.entropy_forward(_c(s), float(p), float(eps)))


def entropy_value_and_grad(s, p=1.0, eps=1e-12):
    h, g = _active.entropy_value_and_grad(_c(s), float(p), float(eps))
    return float(h), g


def angle_forward(a, b, clamp=1e-12):
    return float(_active.angle_forward(_c(a), _c(b), float(clamp)))


def angle_value_and_grad(a, b, clamp=1e-12):
    theta, ga, gb = _active.angle_value_and_grad(_c(a), _c(b), float(clamp))
    return float(theta), ga, gb
