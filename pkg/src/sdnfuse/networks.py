"""The two coupled Dirichlet networks.

Encoders are densely connected by summation: hidden layer ``k`` computes
``act(sum_{j<k} x_j @ W_{j->k} + b_k)`` where ``x_0`` is the input. The last
hidden layer feeds the stick-breaking head. The decoder is shared, linear
and bias-free, so its weight product is the spectral basis matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Value
from .losses import ConfigError
from .stickbreak import StickParams, _glorot, init_head, representation_head

HSI_LAYERS = (10, 10, 10)
MSI_LAYERS = (4, 5, 7, 9, 10)
DECODER_LAYERS = (10, 10)


@dataclass(frozen=True)
class EncoderSpec:
    input_width: int
    layer_widths: tuple[int, ...]
    c: int = 10
    hidden_activation: str = "sigmoid"
    # "dirichlet": stick-breaking head; "plain": linear c-wide code (ablation)
    representation: str = "dirichlet"

    def __post_init__(self):
        if self.hidden_activation not in dc.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.hidden_activation!r}")
        if self.representation not in ("dirichlet", "plain"):
            raise ConfigError(f"unknown representation {self.representation!r}")
        if not self.layer_widths or min(self.layer_widths) < 1 or self.input_width < 1:
            raise ConfigError("encoder widths must be positive")


@dataclass(frozen=True)
class DecoderSpec:
    output_width: int
    layer_widths: tuple[int, ...] = DECODER_LAYERS
    c: int = 10

    @property
    def shapes(self) -> list[tuple[int, int]]:
        widths = [self.c, *self.layer_widths, self.output_width]
        return list(zip(widths[:-1], widths[1:]))


@dataclass
class Encoder:
    spec: EncoderSpec
    prefix: str
    params: ParamStore = field(default_factory=ParamStore)

    @classmethod
    def init(cls, spec: EncoderSpec, prefix: str, rng: np.random.Generator) -> "Encoder":
        enc = cls(spec, prefix)
        widths = [spec.input_width, *spec.layer_widths]
        for k in range(1, len(widths)):
            for j in range(k):
                enc.params.add(f"{prefix}.l{k}.W{j}", _glorot(rng, widths[j], widths[k]))
            enc.params.add(f"{prefix}.l{k}.b", np.zeros((1, widths[k])))
        last = widths[-1]
        if spec.representation == "dirichlet":
            init_head(enc.params, f"{prefix}.head", last, spec.c, rng)
        else:
            enc.params.add(f"{prefix}.head.s.W", _glorot(rng, last, spec.c))
            enc.params.add(f"{prefix}.head.s.b", np.zeros((1, spec.c)))
        return enc

    def hidden(self, Y: Value) -> list[Value]:
        """Outputs of every layer, input first."""
        if Y.shape[1] != self.spec.input_width:
            raise dc.ShapeError(
                f"{self.prefix}: input has {Y.shape[1]} bands, encoder expects {self.spec.input_width}")
        act = dc.ACTIVATIONS[self.spec.hidden_activation]
        xs = [Y]
        p = self.params
        for k in range(1, len(self.spec.layer_widths) + 1):
            terms = [(xs[j], p[f"{self.prefix}.l{k}.W{j}"]) for j in range(k)]
            xs.append(act(dc.affine_sum(terms, p[f"{self.prefix}.l{k}.b"])))
        return xs

    def __call__(self, Y: Value) -> tuple[StickParams | None, Value]:
        last = self.hidden(Y)[-1]
        if self.spec.representation == "dirichlet":
            return representation_head(last, self.params, f"{self.prefix}.head")
        p = self.params
        return None, dc.affine(last, p[f"{self.prefix}.head.s.W"], p[f"{self.prefix}.head.s.b"])


@dataclass
class Decoder:
    spec: DecoderSpec
    params: ParamStore = field(default_factory=ParamStore)

    @classmethod
    def init(cls, spec: DecoderSpec, rng: np.random.Generator, scale: float = 0.1) -> "Decoder":
        dec = cls(spec)
        for i, shape in enumerate(spec.shapes, start=1):
            dec.params.add(f"hd.W{i}", rng.uniform(0.0, scale, size=shape))
        return dec

    def weights(self) -> list[Value]:
        return self.params.values()

    def __call__(self, S: Value, frozen: bool = False) -> Value:
        out = S
        for W in self.weights():
            out = dc.matmul(out, dc.const(W) if frozen else W)
        return out


def extract_basis(decoder: Decoder | ParamStore) -> np.ndarray:
    """Spectral basis ``Phi_h`` (``c x L``): the product of the decoder weights."""
    store = decoder.params if isinstance(decoder, Decoder) else decoder
    return reduce(np.matmul, [W.data for W in store.values()])


def hsi_forward(Y_h, encoder: Encoder, decoder: Decoder):
    """LR HSI path: returns ``(S_h, Yhat_h)``."""
    Y = Y_h if isinstance(Y_h, Value) else dc.const(Y_h)
    _, S_h = encoder(Y)
    return S_h, decoder(S_h)


def msi_forward(Y_m, encoder: Encoder, decoder: Decoder, R: np.ndarray):
    """HR MSI path through the frozen shared decoder and the sensor response.

    ``Yhat_m = S_m @ (Phi_h @ R)`` with ``Phi_h`` recomputed from the decoder
    weights on every call; no gradient reaches the decoder.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != decoder.spec.output_width:
        raise ConfigError(
            f"response matrix has shape {R.shape}, expected ({decoder.spec.output_width}, l)")
    if R.shape[1] != encoder.spec.input_width:
        raise ConfigError(f"response has {R.shape[1]} bands but MSI encoder expects "
                          f"{encoder.spec.input_width}")
    Y = Y_m if isinstance(Y_m, Value) else dc.const(Y_m)
    _, S_m = encoder(Y)
    phi_m = dc.const(extract_basis(decoder) @ R)
    return S_m, dc.matmul(S_m, phi_m)


def fuse(S_m, Phi_h: np.ndarray) -> np.ndarray:
    """HR HSI estimate ``X = S_m @ Phi_h`` (unfolded, unclamped)."""
    S = S_m.data if isinstance(S_m, Value) else np.asarray(S_m)
    return S @ Phi_h
