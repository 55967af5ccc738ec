"""Stick-breaking Dirichlet representation layer.

A sigmoid head gives break fractions ``u`` in (0, 1), a softplus head gives
one positive ``beta`` per pixel, the Kumaraswamy inverse CDF (with the first
shape parameter fixed at 1) maps them to ``v``, and stick-breaking turns the
``c - 1`` fractions into a ``c``-part simplex row. The last part takes the
remaining stick, so rows sum to one exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Value

ALPHA = 1.0


@dataclass
class StickParams:
    u: Value
    beta: Value

    @property
    def alpha(self) -> float:
        return ALPHA


def kumaraswamy_inverse(u: Value, beta: Value) -> Value:
    return dc.kumaraswamy_inverse(u, beta)


def stick_break(v: Value) -> Value:
    return dc.stick_break(v)


def representation_head(hidden: Value, params: dc.ParamStore, prefix: str) -> tuple[StickParams, Value]:
    """Apply the ``u`` / ``beta`` heads named ``{prefix}.u.*`` and ``{prefix}.beta.*``."""
    u = dc.sigmoid(dc.affine(hidden, params[f"{prefix}.u.W"], params[f"{prefix}.u.b"]))
    beta = dc.softplus(dc.affine(hidden, params[f"{prefix}.beta.W"], params[f"{prefix}.beta.b"]))
    v = dc.kumaraswamy_inverse(u, beta)
    return StickParams(u, beta), dc.stick_break(v)


def init_head(params: dc.ParamStore, prefix: str, width: int, c: int, rng: np.random.Generator) -> None:
    """Add head weights for a ``width``-wide hidden layer and ``c`` representation slots."""
    if c < 2:
        raise ValueError("representation needs at least 2 components")
    params.add(f"{prefix}.u.W", _glorot(rng, width, c - 1))
    params.add(f"{prefix}.u.b", np.zeros((1, c - 1)))
    params.add(f"{prefix}.beta.W", _glorot(rng, width, 1))
    params.add(f"{prefix}.beta.b", np.zeros((1, 1)))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def simplex_stats(s: np.ndarray) -> tuple[float, float, float]:
    """(mean row sum, max |row sum - 1|, min entry) of a representation matrix."""
    rows = s.sum(axis=1)
    return float(rows.mean()), float(np.abs(rows - 1.0).max()), float(s.min())
