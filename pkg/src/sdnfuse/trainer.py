"""Alternating optimization of the coupled networks.

Step 1 trains the HSI encoder and the shared decoder on the LR HSI. Step 2
freezes both and trains the MSI encoder on the HR MSI; every
``angle_period``-th MSI iteration (step 3) minimizes the representation angle
loss instead of the MSI reconstruction objective.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import data
from . import diffcore as dc
from . import kernels, losses
from .losses import ConfigError, LossWeights
from .metrics import EvalReport, evaluate
from .networks import (DECODER_LAYERS, HSI_LAYERS, MSI_LAYERS, Decoder, DecoderSpec, Encoder,
                       EncoderSpec, extract_basis, fuse, hsi_forward, msi_forward)
from .stickbreak import simplex_stats

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite objective or gradient."""


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace("[", "").replace("]", "").split(",") if t.strip())


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    lam: float = 1e-6
    mu: float = 1e-6
    hsi_iters: int = 10000
    msi_iters: int = 10000
    angle_period: int = 10
    use_angle: bool = True
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 1
    early_stop_tol: float = 0.0
    early_stop_window: int = 500
    c: int = 10
    hsi_layers: tuple[int, ...] = HSI_LAYERS
    msi_layers: tuple[int, ...] = MSI_LAYERS
    decoder_layers: tuple[int, ...] = DECODER_LAYERS
    hidden_activation: str = "sigmoid"
    representation: str = "dirichlet"
    decoder_init_scale: float = 0.1

    def __post_init__(self):
        if self.angle_period < 1:
            raise ConfigError("angle_period must be >= 1")
        if self.hsi_iters < 1 or self.msi_iters < 1 or self.log_every < 1:
            raise ConfigError("iteration counts and log_every must be positive")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.lr <= 0 or self.c < 2:
            raise ConfigError("lr must be positive and c >= 2")
        LossWeights(self.lam, self.mu)
        EncoderSpec(1, self.hsi_layers, self.c, self.hidden_activation, self.representation)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lam, self.mu)

    @classmethod
    def from_kv(cls, pairs: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        """Build from ``key=value`` strings; unknown keys raise :class:`ConfigError`."""
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        aliases = {"lambda": "lam"}
        updates = {}
        for key, raw in pairs.items():
            name = aliases.get(key, key)
            if name not in types:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(base, name)
            try:
                if isinstance(current, bool):
                    updates[name] = _parse_bool(raw)
                elif isinstance(current, int):
                    updates[name] = int(raw)
                elif isinstance(current, float):
                    updates[name] = float(raw)
                elif isinstance(current, tuple):
                    updates[name] = _parse_ints(raw)
                else:
                    updates[name] = str(raw).strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        return dataclasses.replace(base, **updates)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)
        return out


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: Iterable[dc.Value], lr: float = 1e-3, b1: float = 0.9,
                 b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericalError(f"non-finite gradient in parameter {p.name!r}")
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


TRACE_COLUMNS = ("step", "phase", "objective", "loss_recon", "loss_entropy", "loss_angle",
                 "rowsum_mean", "rowsum_maxdev", "s_min")


@dataclass
class TrainTrace:
    records: list[tuple] = field(default_factory=list)

    def add(self, step, phase, objective, recon, entropy, angle, S: np.ndarray) -> None:
        rs_mean, rs_dev, s_min = simplex_stats(S)
        self.records.append((step, phase, objective, recon, entropy, angle, rs_mean, rs_dev, s_min))

    def column(self, name: str) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.records])

    def steps(self, phase: str | None = None) -> list[int]:
        return [r[0] for r in self.records if phase is None or r[1] == phase]

    def to_csv(self) -> str:
        lines = [",".join(TRACE_COLUMNS)]
        for r in self.records:
            lines.append(",".join([str(r[0]), r[1]] + [repr(float(x)) for x in r[2:]]))
        return "\n".join(lines) + "\n"

    def __len__(self) -> int:
        return len(self.records)


def _check_finite(value: float, step: int, phase: str) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"{phase} objective is {value} at step {step}")


def _early_stop(history: list[float], config: RunConfig) -> bool:
    w = config.early_stop_window
    return config.early_stop_tol > 0 and len(history) > w and history[-w - 1] - history[-1] < config.early_stop_tol


def _should_log(step: int, total: int, every: int) -> bool:
    return step == 1 or step == total or step % every == 0


def build_models(L: int, l: int, config: RunConfig):
    """Seeded ``(hsi_encoder, decoder, msi_encoder)``."""
    rng = np.random.default_rng(config.seed)
    hsi = Encoder.init(EncoderSpec(L, config.hsi_layers, config.c, config.hidden_activation,
                                   config.representation), "he", rng)
    dec = Decoder.init(DecoderSpec(L, config.decoder_layers, config.c), rng, config.decoder_init_scale)
    msi = Encoder.init(EncoderSpec(l, config.msi_layers, config.c, config.hidden_activation,
                                   config.representation), "me", rng)
    return hsi, dec, msi


def train_hsi(Y_h: np.ndarray, encoder: Encoder, decoder: Decoder, config: RunConfig) -> tuple[np.ndarray, TrainTrace]:
    """Step 1: minimize the HSI objective over the HSI encoder and the decoder.

    ``Y_h`` is the unfolded LR HSI. Returns the final ``S_h`` and the trace.
    """
    if np.any(Y_h < 0) or np.any(Y_h > 1):
        raise ConfigError("LR HSI values must lie in [0, 1]")
    Y = dc.const(Y_h)
    params = dc.ParamStore.merged(encoder.params, decoder.params)
    opt = Adam(params.values(), config.lr)
    w = config.weights
    trace = TrainTrace()
    history = []
    for step in range(1, config.hsi_iters + 1):
        params.zero_grad()
        with dc.Tape() as tape:
            S_h, Y_hat = hsi_forward(Y, encoder, decoder)
            terms = {}
            loss = losses.hsi_objective(Y, Y_hat, S_h, decoder.weights(), w, terms)
            dc.backward(loss, tape)
        obj = loss.item()
        _check_finite(obj, step, "hsi")
        history.append(obj)
        if _should_log(step, config.hsi_iters, config.log_every):
            trace.add(step, "hsi", obj, terms["recon"], terms["entropy"], math.nan, S_h.data)
        opt.step()
        if _early_stop(history, config):
            log.info("hsi early stop at step %d", step)
            break
    with dc.no_grad():
        S_h, _ = hsi_forward(Y, encoder, decoder)
    return S_h.data, trace


def train_msi(Y_m: np.ndarray, encoder: Encoder, decoder: Decoder, S_h: np.ndarray,
              lr_dims: tuple[int, int], factor: int, R: np.ndarray,
              config: RunConfig) -> tuple[np.ndarray, TrainTrace]:
    """Steps 2 and 3: train the MSI encoder with the decoder frozen.

    Iteration ``k`` (1-based) is an angle step when angle steps are enabled
    and ``k % angle_period == 0``; otherwise it is an MSI reconstruction step.
    """
    Y = dc.const(Y_m)
    S_h_up = dc.const(losses.duplicate_upsample(S_h, lr_dims, factor))
    if S_h_up.shape[0] != Y_m.shape[0]:
        raise ConfigError(f"upsampled HSI grid has {S_h_up.shape[0]} pixels, MSI has {Y_m.shape[0]}")
    params = encoder.params
    opt_recon = Adam(params.values(), config.lr)
    opt_angle = Adam(params.values(), config.lr)
    w = config.weights
    trace = TrainTrace()
    history = []
    for step in range(1, config.msi_iters + 1):
        angle_step = config.use_angle and step % config.angle_period == 0
        params.zero_grad()
        with dc.Tape() as tape:
            S_m, Y_hat = msi_forward(Y, encoder, decoder, R)
            if angle_step:
                loss = losses.angle_similarity(S_h_up, S_m)
            else:
                terms = {}
                loss = losses.msi_objective(Y, Y_hat, S_m, w, terms)
            dc.backward(loss, tape)
        obj = loss.item()
        _check_finite(obj, step, "msi")
        if not angle_step:
            history.append(obj)
        if _should_log(step, config.msi_iters, config.log_every) or angle_step:
            if angle_step:
                angle = obj
                recon = 0.5 * float(np.sum((Y_m - Y_hat.data) ** 2))
                entropy = kernels.entropy_forward(S_m.data)
            else:
                angle = kernels.angle_forward(S_h_up.data, S_m.data, dc.ARCCOS_CLAMP) / math.pi
                recon, entropy = terms["recon"], terms["entropy"]
            trace.add(step, "angle" if angle_step else "msi", obj, recon, entropy, angle, S_m.data)
        (opt_angle if angle_step else opt_recon).step()
        if not angle_step and _early_stop(history, config):
            log.info("msi early stop at step %d", step)
            break
    with dc.no_grad():
        S_m, _ = msi_forward(Y, encoder, decoder, R)
    return S_m.data, trace


@dataclass
class PipelineResult:
    fused: np.ndarray
    S_h: np.ndarray
    S_m: np.ndarray
    phi: np.ndarray
    hsi_trace: TrainTrace
    msi_trace: TrainTrace
    hsi_encoder: Encoder
    msi_encoder: Encoder
    decoder: Decoder
    report: EvalReport | None = None
    hsi_rmse_unit: float = math.nan


def check_geometry(lr_hsi: np.ndarray, hr_msi: np.ndarray, R: np.ndarray) -> int:
    """Validate input shapes and return the integer spatial ratio."""
    if lr_hsi.ndim != 3 or hr_msi.ndim != 3:
        raise ConfigError("inputs must be (height, width, bands) cubes")
    (h, w, L), (H, W, l) = lr_hsi.shape, hr_msi.shape
    if H % h or W % w or H // h != W // w:
        raise ConfigError(f"HR grid {H}x{W} is not an integer multiple of LR grid {h}x{w}")
    if R.shape != (L, l):
        raise ConfigError(f"response shape {R.shape} does not match ({L}, {l})")
    return H // h


def run_pipeline(lr_hsi: np.ndarray, hr_msi: np.ndarray, R: np.ndarray, config: RunConfig,
                 reference: np.ndarray | None = None) -> PipelineResult:
    """Unfold, train both networks, fuse, fold and clamp to [0, 1]."""
    R = np.asarray(R, dtype=np.float64)
    factor = check_geometry(lr_hsi, hr_msi, R)
    h, w, L = lr_hsi.shape
    H, W, l = hr_msi.shape
    hsi_enc, dec, msi_enc = build_models(L, l, config)

    Y_h = data.unfold(lr_hsi)
    S_h, hsi_trace = train_hsi(Y_h, hsi_enc, dec, config)
    S_m, msi_trace = train_msi(data.unfold(hr_msi), msi_enc, dec, S_h, (h, w), factor, R, config)

    phi = extract_basis(dec)
    X = np.clip(data.fold(fuse(S_m, phi), H, W), 0.0, 1.0)
    result = PipelineResult(X, S_h, S_m, phi, hsi_trace, msi_trace, hsi_enc, msi_enc, dec)
    result.hsi_rmse_unit = float(np.sqrt(np.mean((S_h @ phi - Y_h) ** 2)))
    if reference is not None:
        result.report = evaluate(X, reference)
    return result
