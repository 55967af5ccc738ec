"""Finite-difference verification of the three training objectives."""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from . import losses
from .data import default_response
from .diffcore import GradCheckReport, finite_diff_check
from .losses import LossWeights
from .networks import (DECODER_LAYERS, HSI_LAYERS, MSI_LAYERS, Decoder, DecoderSpec, Encoder,
                       EncoderSpec, hsi_forward, msi_forward)


def objective_suite(seed: int = 0, pixels: int = 20, c: int = 5, bands: int = 31, msi_bands: int = 3,
                    lam: float = 0.1, mu: float = 0.1, h: float = 1e-5,
                    tol: float = 1e-5) -> dict[str, GradCheckReport]:
    """Check the HSI, MSI and angle objectives on a seeded random instance.

    The HSI objective runs on ``pixels`` LR pixels; the MSI and angle
    objectives on ``pixels`` HR pixels covering a ``1 x pixels/4`` LR grid
    at ratio 2. ``lam`` and ``mu`` default to 0.1 so the entropy and decay
    terms carry visible gradient.
    """
    if pixels % 4:
        raise ValueError("pixels must be a multiple of 4")
    rng = np.random.default_rng(seed)
    w = LossWeights(lam, mu)
    hsi = Encoder.init(EncoderSpec(bands, HSI_LAYERS, c), "he", rng)
    dec = Decoder.init(DecoderSpec(bands, DECODER_LAYERS, c), rng)
    msi = Encoder.init(EncoderSpec(msi_bands, MSI_LAYERS, c), "me", rng)
    R = default_response(bands, msi_bands)

    Y_h = dc.const(rng.uniform(0.0, 1.0, size=(pixels, bands)))
    Y_m = dc.const(rng.uniform(0.0, 1.0, size=(pixels, msi_bands)))
    lr_dims = (1, pixels // 4)
    S_h_lr = rng.dirichlet(np.ones(c), size=pixels // 4)

    def hsi_obj():
        S_h, Y_hat = hsi_forward(Y_h, hsi, dec)
        return losses.hsi_objective(Y_h, Y_hat, S_h, dec.weights(), w)

    def msi_obj():
        S_m, Y_hat = msi_forward(Y_m, msi, dec, R)
        return losses.msi_objective(Y_m, Y_hat, S_m, w)

    def angle_obj():
        S_m, _ = msi_forward(Y_m, msi, dec, R)
        return losses.angle_objective(S_h_lr, S_m, lr_dims, 2)

    return {
        "hsi": finite_diff_check(hsi_obj, dc.ParamStore.merged(hsi.params, dec.params), h, tol),
        "msi": finite_diff_check(msi_obj, msi.params, h, tol),
        "angle": finite_diff_check(angle_obj, msi.params, h, tol),
    }


def format_report(reports: dict[str, GradCheckReport]) -> str:
    lines = []
    for name, rep in reports.items():
        lines.append(f"{name:6s} {'PASS' if rep.ok else 'FAIL'}  {rep.summary()}")
        for pname, idx, a, n, err in rep.failures[:10]:
            lines.append(f"    {pname}{list(idx)}: analytic {a:.6e} numeric {n:.6e} rel {err:.2e}")
    return "\n".join(lines) + "\n"
