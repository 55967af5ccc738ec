"""RMSE and spectral angle mapper between an estimated and a reference cube.

Reductions use ``math.fsum`` (exactly rounded), so results do not depend on
pixel order or array layout.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import ARCCOS_CLAMP
from .losses import ConfigError


@dataclass(frozen=True)
class EvalReport:
    rmse_8bit: float
    rmse_unit: float
    sam_degrees: float
    pixels: int
    bands: int
    excluded_pixels: int = 0

    def to_csv(self) -> str:
        row = asdict(self)
        return ",".join(row) + "\n" + ",".join(repr(v) for v in row.values()) + "\n"

    def __str__(self) -> str:
        return (f"RMSE {self.rmse_8bit:.4f} (8-bit) / {self.rmse_unit:.6f} (unit), "
                f"SAM {self.sam_degrees:.4f} deg over {self.pixels} px x {self.bands} bands")


def _check(est, ref) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ConfigError(f"cube shapes differ: {est.shape} vs {ref.shape}")
    return est, ref


def rmse(est, ref) -> tuple[float, float]:
    """``(rmse_unit, rmse_8bit)``; the 8-bit figure is exactly 255 times the unit one."""
    est, ref = _check(est, ref)
    d = (est - ref).ravel()
    unit = math.sqrt(math.fsum(d * d) / d.size)
    return unit, 255.0 * unit


def sam(est, ref, return_excluded: bool = False):
    """Mean per-pixel spectral angle in degrees; zero spectra are skipped."""
    est, ref = _check(est, ref)
    a = est.reshape(-1, est.shape[-1])
    b = ref.reshape(-1, ref.shape[-1])
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    keep = (na > 0) & (nb > 0)
    excluded = int((~keep).sum())
    if not keep.any():
        angle = 0.0
    else:
        cos = np.einsum("ij,ij->i", a[keep], b[keep]) / (na[keep] * nb[keep])
        cos = np.clip(cos, -1.0, 1.0)
        # exact matches give cos slightly above 1 - clamp through rounding; snap them to 0
        theta = np.where(cos >= 1.0 - ARCCOS_CLAMP, 0.0, np.arccos(cos))
        angle = math.degrees(math.fsum(theta) / theta.size)
    return (angle, excluded) if return_excluded else angle


def evaluate(est, ref) -> EvalReport:
    est, ref = _check(est, ref)
    unit, eight = rmse(est, ref)
    angle, excluded = sam(est, ref, return_excluded=True)
    pixels = int(np.prod(est.shape[:-1]))
    return EvalReport(eight, unit, angle, pixels, est.shape[-1], excluded)
