"""Scalar loss terms and the three training objectives.

* HSI objective: ``1/2 ||Y_h - Yhat_h||_F^2 + lambda * H_1(S_h) + mu * sum ||W_dec||_F^2``
* MSI objective: ``1/2 ||Y_m - Yhat_m||_F^2 + lambda * H_1(S_m)``
* angle objective: mean row angle between the nearest-neighbour upsampled
  HSI representation and the MSI representation, divided by pi.

``H_1`` is averaged over pixels so ``lambda`` does not scale with image size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Value

LOG_FLOOR = 1e-12


class ConfigError(ValueError):
    """Invalid run configuration or incompatible input geometry."""


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1e-6
    mu: float = 1e-6

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ConfigError(f"loss weights must be non-negative (lambda={self.lam}, mu={self.mu})")


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else dc.const(x)


def reconstruction_loss(Y, Y_hat) -> Value:
    Y, Y_hat = _as_value(Y), _as_value(Y_hat)
    if Y.shape != Y_hat.shape:
        raise dc.ShapeError(f"reconstruction_loss: shapes {Y.shape} and {Y_hat.shape} differ")
    return dc.scalar_mul(dc.sum(dc.square(dc.sub(Y, Y_hat))), 0.5)


def entropy_sparsity(S, p: float = 1.0) -> Value:
    return dc.entropy_function(_as_value(S), p, LOG_FLOOR)


def upsample_index(lr_height: int, lr_width: int, factor: int) -> np.ndarray:
    """For each HR pixel (row-major), the row index of the LR pixel covering it."""
    if int(factor) != factor or factor < 1:
        raise ConfigError(f"upsampling factor must be a positive integer, got {factor!r}")
    factor = int(factor)
    ys = np.arange(lr_height * factor) // factor
    xs = np.arange(lr_width * factor) // factor
    return (ys[:, None] * lr_width + xs[None, :]).ravel()


def duplicate_upsample(S_h, lr_dims: tuple[int, int], factor: int):
    """Copy each LR pixel's row onto the ``factor x factor`` HR block it covers.

    ``lr_dims`` is ``(height, width)`` of the LR grid; rows are in row-major
    pixel order. Accepts an ndarray or a :class:`Value`.
    """
    h, w = lr_dims
    rows = S_h.shape[0]
    if rows != h * w:
        raise dc.ShapeError(f"duplicate_upsample: {rows} rows for a {h}x{w} grid")
    idx = upsample_index(h, w, factor)
    if isinstance(S_h, Value):
        return dc.take_rows(S_h, idx)
    return np.asarray(S_h)[idx]


def angle_similarity(S_h_up, S_m) -> Value:
    """Mean per-pixel angle between representations, scaled to [0, 1]."""
    S_h_up, S_m = _as_value(S_h_up), _as_value(S_m)
    if S_h_up.shape != S_m.shape:
        raise dc.ShapeError(f"angle_similarity: shapes {S_h_up.shape} and {S_m.shape} differ")
    return dc.scalar_mul(dc.mean_row_angle(S_h_up, S_m, dc.ARCCOS_CLAMP), 1.0 / np.pi)


def weight_decay(weights: Sequence[Value]) -> Value:
    terms = [dc.sum(dc.square(W)) for W in weights]
    total = terms[0]
    for t in terms[1:]:
        total = dc.add(total, t)
    return total


def hsi_objective(Y_h, Y_h_hat, S_h, decoder_weights: Sequence[Value], w: LossWeights,
                  terms: dict | None = None) -> Value:
    """Reconstruction + lambda * entropy + mu * decoder weight decay.

    If ``terms`` is given it receives the unweighted ``recon``, ``entropy``
    and ``decay`` values.
    """
    recon = reconstruction_loss(Y_h, Y_h_hat)
    ent = entropy_sparsity(S_h)
    loss = recon
    if w.lam:
        loss = dc.add(loss, dc.scalar_mul(ent, w.lam))
    decay = weight_decay(decoder_weights) if (w.mu or terms is not None) else None
    if w.mu:
        loss = dc.add(loss, dc.scalar_mul(decay, w.mu))
    if terms is not None:
        terms.update(recon=recon.item(), entropy=ent.item(), decay=decay.item())
    return loss


def msi_objective(Y_m, Y_m_hat, S_m, w: LossWeights, terms: dict | None = None) -> Value:
    """Reconstruction + lambda * entropy (no decay: the decoder is frozen)."""
    recon = reconstruction_loss(Y_m, Y_m_hat)
    ent = entropy_sparsity(S_m)
    loss = recon
    if w.lam:
        loss = dc.add(loss, dc.scalar_mul(ent, w.lam))
    if terms is not None:
        terms.update(recon=recon.item(), entropy=ent.item())
    return loss


def angle_objective(S_h, S_m, lr_dims: tuple[int, int], factor: int) -> Value:
    """Angle loss with the HSI side detached: only ``S_m`` receives gradient."""
    S_h_data = S_h.data if isinstance(S_h, Value) else np.asarray(S_h)
    return angle_similarity(dc.const(duplicate_upsample(S_h_data, lr_dims, factor)), S_m)
