"""Image cubes, degradation operators, synthetic scenes and file formats.

Cubes are ndarrays of shape ``(height, width, bands)``. Unfolding is the
row-major reshape to ``(height * width, bands)``, so pixel ``(y, x)`` lands on
row ``y * width + x``.

The ``.hsc`` cube container is::

    b"HSC1" | u32 width | u32 height | u32 bands | float32[height, width, bands]

little-endian throughout. Checkpoints reuse it: ``b"HSCK" | u32 count`` then,
per section, ``u32 name_len | name (utf-8) | HSC1 block`` with the matrix
stored as ``width = cols, height = rows, bands = 1``.
"""
from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import ConfigError

log = logging.getLogger(__name__)

CUBE_MAGIC = b"HSC1"
CKPT_MAGIC = b"HSCK"
_HEADER = struct.Struct("<4sIII")


class CubeFormatError(ValueError):
    """Malformed cube or checkpoint file."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------- fold / unfold


def unfold(cube: np.ndarray) -> np.ndarray:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ConfigError(f"expected a (height, width, bands) cube, got shape {cube.shape}")
    h, w, b = cube.shape
    return cube.reshape(h * w, b)


def fold(matrix: np.ndarray, height: int, width: int) -> np.ndarray:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != height * width:
        raise ConfigError(f"cannot fold {matrix.shape} into a {height}x{width} grid")
    return matrix.reshape(height, width, matrix.shape[1])


# ---------------------------------------------------------------- degradation


def block_downsample(cube: np.ndarray, r: int) -> np.ndarray:
    """Mean over disjoint ``r x r`` spatial blocks, per band."""
    h, w, b = cube.shape
    if int(r) != r or r < 1 or h % r or w % r:
        raise ConfigError(f"block size {r} does not divide the {h}x{w} grid")
    r = int(r)
    return cube.reshape(h // r, r, w // r, r, b).mean(axis=(1, 3))


def apply_spectral_response(cube: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Right-multiply every pixel spectrum by the ``L x l`` response matrix."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != cube.shape[2]:
        raise ConfigError(f"response shape {R.shape} incompatible with {cube.shape[2]} bands")
    return cube @ R


def normalize_response(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2:
        raise ConfigError(f"response must be a matrix, got shape {R.shape}")
    if np.any(R < 0) or not np.all(np.isfinite(R)):
        raise ConfigError("response entries must be finite and non-negative")
    sums = R.sum(axis=0)
    if np.any(sums <= 0):
        raise ConfigError("every response column needs a positive sum")
    return R / sums


def default_response(bands: int = 31, msi_bands: int = 3) -> np.ndarray:
    """Overlapping Gaussian sensitivities, a stand-in for a consumer RGB sensor."""
    x = np.arange(bands, dtype=np.float64)
    centers = np.linspace(0.2, 0.8, msi_bands) * (bands - 1)
    width = 0.12 * bands
    R = np.exp(-0.5 * ((x[:, None] - centers[None, :]) / width) ** 2)
    return normalize_response(R)


# ---------------------------------------------------------------- synthetic scenes


@dataclass(frozen=True)
class SynthSpec:
    height: int = 64
    width: int = 64
    bands: int = 31
    ratio: int = 8
    msi_bands: int = 3
    c_true: int = 5
    sparsity: int = 3
    smoothness: int = 12
    concentration: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if min(self.height, self.width, self.bands, self.msi_bands, self.c_true) < 1:
            raise ConfigError("synthetic dimensions must be positive")
        if self.c_true > self.bands:
            raise ConfigError(f"c_true={self.c_true} exceeds bands={self.bands}")
        if not 1 <= self.sparsity <= self.c_true:
            raise ConfigError(f"sparsity must be in [1, c_true], got {self.sparsity}")
        if self.ratio < 1 or self.height % self.ratio or self.width % self.ratio:
            raise ConfigError(f"ratio {self.ratio} must divide {self.height}x{self.width}")
        if self.smoothness < 1 or self.concentration <= 0:
            raise ConfigError("smoothness and concentration must be positive")


@dataclass
class SynthData:
    hr_hsi: np.ndarray
    lr_hsi: np.ndarray
    hr_msi: np.ndarray
    phi: np.ndarray
    abundances: np.ndarray
    response: np.ndarray


def _endmembers(rng: np.random.Generator, c: int, bands: int) -> np.ndarray:
    x = np.arange(bands, dtype=np.float64)
    phi = np.empty((c, bands))
    for i in range(c):
        k = rng.integers(2, 5)
        centers = rng.uniform(-0.1 * bands, 1.1 * bands, size=k)
        widths = rng.uniform(0.08, 0.3, size=k) * bands
        amps = rng.uniform(0.2, 1.0, size=k)
        row = 0.05 + (amps[:, None] * np.exp(-0.5 * ((x - centers[:, None]) / widths[:, None]) ** 2)).sum(0)
        phi[i] = row / row.max()
    return phi


def _box_blur(field: np.ndarray, size: int) -> np.ndarray:
    """Separable moving average with edge replication; window ``size`` pixels."""
    if size <= 1:
        return field
    lo = size // 2
    hi = size - 1 - lo
    out = field
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (lo, hi)
        padded = np.pad(out, pad, mode="edge")
        csum = np.cumsum(padded, axis=axis)
        csum = np.concatenate([np.zeros_like(np.take(csum, [0], axis=axis)), csum], axis=axis)
        n = out.shape[axis]
        out = (np.take(csum, np.arange(size, size + n), axis=axis)
               - np.take(csum, np.arange(0, n), axis=axis)) / size
    return out


def _sparse_dirichlet(rng: np.random.Generator, n: int, c: int, k: int, alpha: float) -> np.ndarray:
    out = np.zeros((n, c))
    for i in range(n):
        support = rng.choice(c, size=k, replace=False)
        out[i, support] = rng.dirichlet(np.full(k, alpha))
    return out


def _keep_top(S: np.ndarray, k: int) -> np.ndarray:
    if k >= S.shape[1]:
        return S / S.sum(axis=1, keepdims=True)
    drop = np.argsort(-S, axis=1, kind="stable")[:, k:]
    S = S.copy()
    np.put_along_axis(S, drop, 0.0, axis=1)
    return S / S.sum(axis=1, keepdims=True)


def synth_generate(spec: SynthSpec, response: np.ndarray | None = None) -> SynthData:
    """Seeded linear-mixing scene: HR HSI, its two degradations and the true factors.

    Abundances are sparse Dirichlet draws on a grid of ``smoothness``-pixel
    cells, box-blurred to soften cell edges, then cut back to the ``sparsity``
    largest entries per pixel and renormalized.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    R = default_response(spec.bands, spec.msi_bands) if response is None else normalize_response(response)
    if R.shape != (spec.bands, spec.msi_bands):
        raise ConfigError(f"response shape {R.shape} vs ({spec.bands}, {spec.msi_bands})")
    phi = _endmembers(rng, spec.c_true, spec.bands)

    cell = spec.smoothness
    gh, gw = -(-spec.height // cell), -(-spec.width // cell)
    coarse = _sparse_dirichlet(rng, gh * gw, spec.c_true, spec.sparsity, spec.concentration)
    grid = coarse.reshape(gh, gw, spec.c_true)
    grid = np.repeat(np.repeat(grid, cell, axis=0), cell, axis=1)[: spec.height, : spec.width]
    blurred = _box_blur(grid, cell)
    S = _keep_top(unfold(blurred), spec.sparsity)

    hr = fold(S @ phi, spec.height, spec.width)
    return SynthData(
        hr_hsi=hr,
        lr_hsi=block_downsample(hr, spec.ratio),
        hr_msi=apply_spectral_response(hr, R),
        phi=phi,
        abundances=S,
        response=R,
    )


# ---------------------------------------------------------------- cube files


def _encode_block(arr: np.ndarray) -> bytes:
    h, w, b = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return _HEADER.pack(CUBE_MAGIC, w, h, b) + payload


def _decode_block(buf: memoryview, offset: int) -> tuple[np.ndarray, int]:
    if len(buf) - offset < _HEADER.size:
        raise CubeFormatError("truncated header", offset)
    magic, w, h, b = _HEADER.unpack_from(buf, offset)
    if magic != CUBE_MAGIC:
        raise CubeFormatError(f"bad magic {bytes(magic)!r}", offset)
    if min(w, h, b) == 0:
        raise CubeFormatError("zero dimension in header", offset + 4)
    start = offset + _HEADER.size
    nbytes = 4 * w * h * b
    if len(buf) - start < nbytes:
        raise CubeFormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - start}",
                              len(buf))
    arr = np.frombuffer(buf, dtype="<f4", count=w * h * b, offset=start)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise CubeFormatError("non-finite value in payload", start + 4 * int(bad[0]))
    return arr.astype(np.float64).reshape(h, w, b), start + nbytes


def save_cube(cube: np.ndarray, path) -> None:
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ConfigError(f"expected a 3-D cube, got shape {cube.shape}")
    Path(path).write_bytes(_encode_block(cube))


def load_cube(path, clamp: bool = True) -> np.ndarray:
    """Read an ``.hsc`` cube; values outside [0, 1] are clamped and counted."""
    buf = memoryview(Path(path).read_bytes())
    cube, end = _decode_block(buf, 0)
    if end != len(buf):
        raise CubeFormatError(f"{len(buf) - end} trailing bytes", end)
    if clamp:
        n_out = int(np.count_nonzero((cube < 0.0) | (cube > 1.0)))
        if n_out:
            log.warning("%s: clamped %d values into [0, 1]", path, n_out)
            cube = np.clip(cube, 0.0, 1.0)
    return cube


def save_checkpoint(sections: dict[str, np.ndarray], path) -> None:
    out = io.BytesIO()
    out.write(CKPT_MAGIC + struct.pack("<I", len(sections)))
    for name, mat in sections.items():
        mat = np.asarray(mat)
        if mat.ndim == 1:
            mat = mat[None, :]
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)) + raw)
        out.write(_encode_block(mat[:, :, None]))
    Path(path).write_bytes(out.getvalue())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = memoryview(Path(path).read_bytes())
    if len(buf) < 8 or bytes(buf[:4]) != CKPT_MAGIC:
        raise CubeFormatError("bad checkpoint magic", 0)
    (count,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    sections = {}
    for _ in range(count):
        if len(buf) - offset < 4:
            raise CubeFormatError("truncated section name", offset)
        (n,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        if len(buf) - offset < n:
            raise CubeFormatError("truncated section name", offset)
        name = bytes(buf[offset: offset + n]).decode("utf-8")
        offset += n
        block, offset = _decode_block(buf, offset)
        sections[name] = block[:, :, 0]
    if offset != len(buf):
        raise CubeFormatError(f"{len(buf) - offset} trailing bytes", offset)
    return sections


def load_response(path) -> np.ndarray:
    """Read an ``L x l`` response CSV (header row optional); columns normalized to sum 1."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty response file")
    try:
        [float(x) for x in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]
    try:
        R = np.array([[float(x) for x in ln.split(",")] for ln in lines])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if R.ndim != 2:
        raise ConfigError(f"{path}: ragged rows")
    return normalize_response(R)


def save_response(R: np.ndarray, path) -> None:
    header = ",".join(f"band{j}" for j in range(R.shape[1]))
    rows = [",".join(repr(float(x)) for x in row) for row in R]
    Path(path).write_text("\n".join([header, *rows]) + "\n")


def save_band_png(cube: np.ndarray, band: int, path) -> None:
    """8-bit grayscale of one band, mapping [0, 1] linearly onto [0, 255]."""
    from PIL import Image

    if not 0 <= band < cube.shape[2]:
        raise ConfigError(f"band {band} out of range for {cube.shape[2]} bands")
    img = np.round(np.clip(cube[:, :, band], 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
