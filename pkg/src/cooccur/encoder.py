"""Small convolutional encoder with a fully connected adjacency head.

Architecture, per conv block: 3x3 same-padded convolution, ReLU, 2x2 average
pool (stride 2). After the last block: global average pool, dense layer to
``gamma`` units, ReLU (the descriptor), dense layer to C*C outputs (the
flattened predicted adjacency, no activation).

Everything runs in float64 on NHWC arrays; images enter as (C_in, H, W) or
batched (N, C_in, H, W). Gradients are derived by hand.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

import numpy as np

CHECKPOINT_MAGIC = b"RRLM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = 3
    input_size: tuple[int, int] = (32, 32)
    block_widths: tuple[int, ...] = (16, 32)
    gamma: int = 128
    num_classes: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "block_widths", tuple(int(v) for v in self.block_widths))
        counts = [self.input_channels, *self.input_size, self.gamma, self.num_classes]
        if len(self.block_widths) < 1 or min(counts + list(self.block_widths)) < 1:
            raise ValueError(f"all encoder sizes must be >= 1: {self}")
        f = 2 ** len(self.block_widths)
        h, w = self.input_size
        if h % f or w % f:
            raise ValueError(
                f"input size {h}x{w} not divisible by 2**{len(self.block_widths)}"
            )

    @property
    def head_width(self) -> int:
        return self.num_classes * self.num_classes


@dataclass
class EncoderParams:
    """Network parameters; also used for their gradients (same shapes)."""

    conv_w: list[np.ndarray]  # each (3, 3, c_in, c_out)
    conv_b: list[np.ndarray]
    desc_w: np.ndarray  # (last block width, gamma)
    desc_b: np.ndarray
    head_w: np.ndarray  # (gamma, C*C)
    head_b: np.ndarray

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """All arrays in checkpoint declaration order."""
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            yield f"conv{i}.weight", w
            yield f"conv{i}.bias", b
        yield "desc.weight", self.desc_w
        yield "desc.bias", self.desc_b
        yield "head.weight", self.head_w
        yield "head.bias", self.head_b

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "EncoderParams":
        *conv, dw, db, hw, hb = arrays
        return cls(list(conv[0::2]), list(conv[1::2]), dw, db, hw, hb)

    def map(self, fn) -> "EncoderParams":
        return EncoderParams.from_arrays([fn(a) for a in self.arrays()])

    def copy(self) -> "EncoderParams":
        return self.map(np.copy)

    def zeros_like(self) -> "EncoderParams":
        return self.map(np.zeros_like)

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(
            x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b)
        )


Gradients = EncoderParams


def param_shapes(cfg: EncoderConfig) -> list[tuple[int, ...]]:
    shapes = []
    c_in = cfg.input_channels
    for c_out in cfg.block_widths:
        shapes += [(3, 3, c_in, c_out), (c_out,)]
        c_in = c_out
    shapes += [(c_in, cfg.gamma), (cfg.gamma,)]
    shapes += [(cfg.gamma, cfg.head_width), (cfg.head_width,)]
    return shapes


def init_params(cfg: EncoderConfig) -> EncoderParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(cfg.seed)
    arrays = []
    for shape in param_shapes(cfg):
        if len(shape) == 1:
            arrays.append(np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[:-1]))
            arrays.append(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))
    return EncoderParams.from_arrays(arrays)


def check_params(params: EncoderParams, cfg: EncoderConfig) -> None:
    got = [a.shape for a in params.arrays()]
    want = param_shapes(cfg)
    if got != want:
        raise ValueError(f"parameter shapes {got} do not match config {want}")


# ---------------------------------------------------------------------------
# layers


def _im2col(a: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N, H, W, 9*C) patches, (dy, dx, c) ordering."""
    n, h, w, c = a.shape
    p = np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, h, w, 3, 3, c))
    for dy in range(3):
        for dx in range(3):
            cols[:, :, :, dy, dx, :] = p[:, dy : dy + h, dx : dx + w, :]
    return cols.reshape(n, h, w, 9 * c)


def _col2im(dcols: np.ndarray, c: int) -> np.ndarray:
    n, h, w, _ = dcols.shape
    d = dcols.reshape(n, h, w, 3, 3, c)
    dp = np.zeros((n, h + 2, w + 2, c))
    for dy in range(3):
        for dx in range(3):
            dp[:, dy : dy + h, dx : dx + w, :] += d[:, :, :, dy, dx, :]
    return dp[:, 1:-1, 1:-1, :]


def _pool(a: np.ndarray) -> np.ndarray:
    n, h, w, c = a.shape
    return a.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def _unpool(d: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(d, 2, axis=1), 2, axis=2) * 0.25


# ---------------------------------------------------------------------------
# forward / loss / backward


@dataclass
class ForwardResult:
    descriptors: np.ndarray  # (N, gamma)
    predictions: np.ndarray  # (N, C*C)
    batched: bool
    params: EncoderParams = field(repr=False)
    cache: dict = field(repr=False)

    @property
    def descriptor(self) -> np.ndarray:
        return self.descriptors if self.batched else self.descriptors[0]

    @property
    def predicted_adjacency(self) -> np.ndarray:
        return self.predictions if self.batched else self.predictions[0]


def _as_batch(images: np.ndarray, cfg: EncoderConfig) -> tuple[np.ndarray, bool]:
    x = np.asarray(images, dtype=np.float64)
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    want = (cfg.input_channels, *cfg.input_size)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ValueError(f"image shape {np.shape(images)} does not match {want}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    return x, batched


def forward(params: EncoderParams, cfg: EncoderConfig, images: np.ndarray) -> ForwardResult:
    x, batched = _as_batch(images, cfg)
    a = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    blocks = []
    for w, b in zip(params.conv_w, params.conv_b):
        cols = _im2col(a)
        z = cols @ w.reshape(-1, w.shape[-1]) + b
        blocks.append((cols, z))
        a = _pool(np.maximum(z, 0.0))
    pooled = a.mean(axis=(1, 2))
    pre = pooled @ params.desc_w + params.desc_b
    desc = np.maximum(pre, 0.0)
    pred = desc @ params.head_w + params.head_b
    cache = {"blocks": blocks, "last_shape": a.shape, "pooled": pooled, "pre": pre}
    return ForwardResult(desc, pred, batched, params, cache)


def rrl_loss(predicted: np.ndarray, target: np.ndarray) -> float:
    """Sum of squared entry errors divided by C**2, for one image."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.size != t.size:
        raise ValueError(f"prediction length {p.size} != target length {t.size}")
    return float(np.sum((p - t) ** 2) / t.size)


def _targets(target: np.ndarray, n: int, c2: int) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64)
    if t.size != n * c2:
        raise ValueError(f"target size {t.size} != {n} x {c2}")
    return t.reshape(n, c2)


def batch_losses(fr: ForwardResult, target: np.ndarray) -> np.ndarray:
    """Per-image losses of a (possibly batched) forward result."""
    n, c2 = fr.predictions.shape
    diff = fr.predictions - _targets(target, n, c2)
    return np.sum(diff * diff, axis=1) / c2


def backward(
    params: EncoderParams, cfg: EncoderConfig, fr: ForwardResult, target: np.ndarray
) -> tuple[float, Gradients]:
    """Loss summed over the batch and its exact parameter gradients."""
    if fr.params is not params:
        raise ValueError("forward result was produced with different parameters")
    n, c2 = fr.predictions.shape
    if c2 != cfg.head_width:
        raise ValueError("forward result does not match config")
    t = _targets(target, n, c2)
    diff = fr.predictions - t
    loss = float(np.sum(np.sum(diff * diff, axis=1) / c2))

    dpred = 2.0 * diff / c2
    g_head_w = fr.descriptors.T @ dpred
    g_head_b = dpred.sum(axis=0)
    dpre = (dpred @ params.head_w.T) * (fr.cache["pre"] > 0)
    g_desc_w = fr.cache["pooled"].T @ dpre
    g_desc_b = dpre.sum(axis=0)

    _, hl, wl, cl = fr.cache["last_shape"]
    dpooled = dpre @ params.desc_w.T
    da = np.broadcast_to(dpooled[:, None, None, :] / (hl * wl), (n, hl, wl, cl))

    g_conv_w = [None] * len(params.conv_w)
    g_conv_b = [None] * len(params.conv_w)
    for i in reversed(range(len(params.conv_w))):
        cols, z = fr.cache["blocks"][i]
        w = params.conv_w[i]
        dz = _unpool(da) * (z > 0)
        dz2 = dz.reshape(-1, w.shape[-1])
        g_conv_w[i] = (cols.reshape(-1, cols.shape[-1]).T @ dz2).reshape(w.shape)
        g_conv_b[i] = dz2.sum(axis=0)
        if i:
            dcols = dz @ w.reshape(-1, w.shape[-1]).T
            da = _col2im(dcols, w.shape[2])
    grads = EncoderParams(g_conv_w, g_conv_b, g_desc_w, g_desc_b, g_head_w, g_head_b)
    return loss, grads


def describe(params: EncoderParams, cfg: EncoderConfig, image: np.ndarray) -> np.ndarray:
    """Descriptor of a single image."""
    return forward(params, cfg, image).descriptor


# ---------------------------------------------------------------------------
# checkpoints
#
# magic b"RRLM" | u32 version | u32 input_channels | u32 H | u32 W
# | u32 n_blocks | n_blocks x u32 width | u32 gamma | u32 C | i64 seed
# | parameter arrays, float64 little-endian, C order, in named_arrays() order


def write_checkpoint(sink: BinaryIO, cfg: EncoderConfig, params: EncoderParams) -> None:
    check_params(params, cfg)
    h, w = cfg.input_size
    nb = len(cfg.block_widths)
    sink.write(CHECKPOINT_MAGIC)
    sink.write(struct.pack("<IIIII", CHECKPOINT_VERSION, cfg.input_channels, h, w, nb))
    sink.write(struct.pack(f"<{nb}I", *cfg.block_widths))
    sink.write(struct.pack("<IIq", cfg.gamma, cfg.num_classes, cfg.seed))
    for a in params.arrays():
        sink.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read(src: BinaryIO, n: int) -> bytes:
    b = src.read(n)
    if len(b) != n:
        raise ValueError("truncated checkpoint")
    return b


def read_checkpoint(src: BinaryIO) -> tuple[EncoderConfig, EncoderParams]:
    if _read(src, 4) != CHECKPOINT_MAGIC:
        raise ValueError("not an RRLM checkpoint (bad magic)")
    version, c_in, h, w, nb = struct.unpack("<IIIII", _read(src, 20))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    widths = struct.unpack(f"<{nb}I", _read(src, 4 * nb))
    gamma, c, seed = struct.unpack("<IIq", _read(src, 16))
    cfg = EncoderConfig(c_in, (h, w), widths, gamma, c, seed)
    arrays = []
    for shape in param_shapes(cfg):
        count = int(np.prod(shape))
        buf = _read(src, 8 * count)
        arrays.append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
    if src.read(1):
        raise ValueError("trailing bytes after checkpoint")
    return cfg, EncoderParams.from_arrays(arrays)


def save_checkpoint(path, cfg: EncoderConfig, params: EncoderParams) -> None:
    with open(path, "wb") as fh:
        write_checkpoint(fh, cfg, params)


def load_checkpoint(path) -> tuple[EncoderConfig, EncoderParams]:
    with open(path, "rb") as fh:
        return read_checkpoint(fh)
