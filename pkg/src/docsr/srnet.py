"""The five-layer document super-resolution network.

conv1 5x5 (1->64), three 1x1 layers (64->44->24->14), conv5 3x3 (14->1).
Layers 1-4 are followed by ReLU or PReLU; the last layer is linear.  A
16x16 input patch maps to a 10x10 output, a margin of 3 pixels per side.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import nncore
from .dataset import GrayImage, NormStats, denormalize, normalize
from .errors import ChecksumError, FormatError, PageTooSmall, ShapeMismatch
from .nncore import Activation, ConvSpec, LayerParams

LR_PATCH = 16
HR_PATCH = 10
MARGIN = (LR_PATCH - HR_PATCH) // 2

# (kernel, in_channels, out_channels)
ARCHITECTURE = ((5, 1, 64), (1, 64, 44), (1, 44, 24), (1, 24, 14), (3, 14, 1))

MAGIC = b"DSR1"
FORMAT_VERSION = 1


def layer_specs(activation: Activation) -> list[ConvSpec]:
    last = len(ARCHITECTURE) - 1
    return [
        ConvSpec(cin, cout, k, activation=Activation.NONE if i == last else activation)
        for i, (k, cin, cout) in enumerate(ARCHITECTURE)
    ]


@dataclass
class SrModel:
    layers: list  # [(ConvSpec, LayerParams)]
    norm_stats: NormStats
    activation: Activation
    metadata: dict = field(default_factory=dict)

    @property
    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.layers)

    def zero_grad(self):
        for _, p in self.layers:
            p.zero_grad()

    def copy(self) -> "SrModel":
        return SrModel(
            [(s, p.copy()) for s, p in self.layers],
            self.norm_stats,
            self.activation,
            dict(self.metadata),
        )


def build_model(activation=Activation.RELU, rng_seed: int = 0, norm_stats: NormStats | None = None) -> SrModel:
    activation = Activation(activation)
    if activation == Activation.NONE:
        raise ValueError("hidden layers need ReLU or PReLU")
    seeds = np.random.SeedSequence(rng_seed).spawn(len(ARCHITECTURE))
    layers = [(spec, nncore.he_init(spec, seed)) for spec, seed in zip(layer_specs(activation), seeds)]
    return SrModel(layers, norm_stats or NormStats(0.0), activation)


def forward_patch(model: SrModel, lr_patch: np.ndarray) -> np.ndarray:
    """Normalized 16x16x1 patch (or a batch of them) -> 10x10x1 output."""
    if lr_patch.shape[-3:] != (LR_PATCH, LR_PATCH, 1):
        raise ShapeMismatch(f"expected (..., 16, 16, 1) patch, got {lr_patch.shape}")
    out, _ = nncore.stack_forward(model.layers, lr_patch)
    return out


@dataclass
class TilePlan:
    """Where each 16x16 input window is read and its 10x10 result is written.

    Coordinates refer to the page padded by ``MARGIN`` on top/left and by
    ``MARGIN + extra`` on bottom/right, where ``extra`` rounds the page up to
    a multiple of the output stride.
    """

    height: int
    width: int
    rows: list
    cols: list

    @classmethod
    def for_page(cls, height: int, width: int) -> "TilePlan":
        return cls(height, width, list(range(0, height, HR_PATCH)), list(range(0, width, HR_PATCH)))

    @property
    def output_anchors(self):
        return [(r, c) for r in self.rows for c in self.cols]

    @property
    def input_tiles(self):
        # input window top-left in padded coordinates equals the output anchor
        return [(r, c, LR_PATCH) for r, c in self.output_anchors]

    @property
    def padded_shape(self):
        return (len(self.rows) * HR_PATCH + 2 * MARGIN, len(self.cols) * HR_PATCH + 2 * MARGIN)


def super_resolve_page(model: SrModel, page: GrayImage, batch_size: int = 1024) -> GrayImage:
    """Reconstruct a full page (already in the bicubic-upsampled frame)."""
    h, w = page.shape
    if h < LR_PATCH or w < LR_PATCH:
        raise PageTooSmall(f"page {h}x{w} is smaller than {LR_PATCH}x{LR_PATCH}")
    plan = TilePlan.for_page(h, w)
    ph, pw = plan.padded_shape
    padded = np.pad(page.pixels, ((MARGIN, ph - h - MARGIN), (MARGIN, pw - w - MARGIN)), mode="edge")
    x = normalize(GrayImage(padded), model.norm_stats)[..., 0]
    tiles = sliding_window_view(x, (LR_PATCH, LR_PATCH))[::HR_PATCH, ::HR_PATCH]
    ny, nx = tiles.shape[:2]
    tiles = tiles.reshape(-1, LR_PATCH, LR_PATCH, 1)
    outs = [forward_patch(model, tiles[i:i + batch_size]) for i in range(0, len(tiles), batch_size)]
    out = np.concatenate(outs).reshape(ny, nx, HR_PATCH, HR_PATCH)
    out = out.transpose(0, 2, 1, 3).reshape(ny * HR_PATCH, nx * HR_PATCH)[:h, :w]
    return denormalize(out[..., None], model.norm_stats)


def model_to_bytes(model: SrModel) -> bytes:
    buf = io.BytesIO()
    act_code = 1 if model.activation == Activation.PRELU else 0
    buf.write(MAGIC)
    buf.write(struct.pack("<IBB", FORMAT_VERSION, act_code, len(model.layers)))
    for spec, params in model.layers:
        buf.write(struct.pack("<HHH", spec.kernel, spec.in_channels, spec.out_channels))
        buf.write(params.weights.astype("<f4").tobytes())
        buf.write(params.biases.astype("<f4").tobytes())
        if params.slopes is not None:
            buf.write(params.slopes.astype("<f4").tobytes())
    buf.write(struct.pack("<dd", model.norm_stats.mean, model.norm_stats.scale))
    meta = json.dumps(model.metadata, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated model file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)


def model_from_bytes(data: bytes) -> SrModel:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("bad magic; not a model file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(4)
    version, act_code, n_layers = r.unpack("<IBB")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version}")
    if act_code not in (0, 1):
        raise FormatError(f"unknown activation code {act_code}")
    activation = Activation.PRELU if act_code else Activation.RELU
    specs = layer_specs(activation)
    if n_layers != len(specs):
        raise FormatError(f"expected {len(specs)} layers, file declares {n_layers}")
    layers = []
    for spec in specs:
        k, cin, cout = r.unpack("<HHH")
        if (k, cin, cout) != (spec.kernel, spec.in_channels, spec.out_channels):
            raise FormatError(f"layer shape {(k, cin, cout)} does not match the architecture")
        w = r.floats(k * k * cin * cout).reshape(k, k, cin, cout)
        b = r.floats(cout)
        s = r.floats(cout) if spec.activation == Activation.PRELU else None
        layers.append((spec, LayerParams(w, b, s)))
    mean, scale = r.unpack("<dd")
    (meta_len,) = r.unpack("<I")
    meta_raw = r.take(meta_len)
    if r.pos != len(body):
        raise FormatError("declared payload length does not match file size")
    if zlib.crc32(body) != crc:
        raise ChecksumError("model file checksum mismatch")
    try:
        metadata = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata blob: {exc}") from None
    return SrModel(layers, NormStats(mean, scale), activation, metadata)


def save_model(model: SrModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> SrModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
