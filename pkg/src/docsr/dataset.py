"""Grayscale page I/O, bicubic resampling, degradation and patch-pair datasets."""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import (
    ChecksumError,
    EmptyCorpus,
    FormatError,
    ImageTooSmall,
    UnsupportedFormat,
)

LR_SIZE = 16
HR_SIZE = 10
MARGIN = (LR_SIZE - HR_SIZE) // 2
BLANK_STD = 2.0
BLANK_ATTEMPTS = 50


@dataclass
class GrayImage:
    """8-bit single-channel image, row-major ``(height, width)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"gray image needs a non-empty 2-D array, got {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise ValueError("pixel values outside [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class NormStats:
    mean: float
    scale: float = 1.0 / 255.0


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_uint8(x) -> np.ndarray:
    return np.clip(round_half_up(x), 0, 255).astype(np.uint8)


def luma(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.float64)
    return to_uint8(0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])


# Image files

def _pnm_header(data: bytes):
    """Parse a binary PNM header; return (magic, width, height, maxval, offset)."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise UnsupportedFormat("truncated PNM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if pos >= len(data):
        raise UnsupportedFormat("missing pixel data")
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise UnsupportedFormat("non-numeric PNM header field") from None
    return magic, width, height, maxval, pos + 1


def _read_pnm(data: bytes) -> GrayImage:
    magic, width, height, maxval, offset = _pnm_header(data)
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"unsupported PNM magic {magic!r}")
    if maxval != 255 or width < 1 or height < 1:
        raise UnsupportedFormat(f"only 8-bit images are supported (maxval {maxval}, {width}x{height})")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset) if len(data) - offset >= need else None
    if raw is None:
        raise UnsupportedFormat("PNM pixel data is truncated")
    if channels == 1:
        return GrayImage(raw.reshape(height, width).copy())
    return GrayImage(luma(raw.reshape(height, width, 3)))


def _read_png(path) -> GrayImage:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "1", "P", "LA"):
            arr = np.asarray(im.convert("L"))
        elif im.mode in ("RGB", "RGBA"):
            arr = luma(np.asarray(im.convert("RGB")))
        else:
            raise UnsupportedFormat(f"unsupported PNG mode {im.mode}")
    return GrayImage(np.array(arr, dtype=np.uint8))


def load_image(path) -> GrayImage:
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return _read_pnm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise UnsupportedFormat(f"{path}: not a binary PGM/PPM or PNG file")


def save_image(img: GrayImage, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".pnm", ""):
        h, w = img.shape
        path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.pixels.tobytes())
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(img.pixels, mode="L").save(path)
    else:
        raise UnsupportedFormat(f"cannot write {suffix!r} images")


# Resampling

def cubic_kernel(t, a=-0.5):
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of Catmull-Rom weights with edge clamping."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    taps = np.floor(src)[:, None] + np.arange(-1, 3)
    weights = cubic_kernel(src[:, None] - taps)
    idx = np.clip(taps, 0, n_in - 1).astype(np.intp)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), 4), idx.ravel()), weights.ravel())
    return m


def bicubic_resize(img: GrayImage, out_h: int, out_w: int) -> GrayImage:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = img.shape
    rows = resize_matrix(h, out_h)
    cols = resize_matrix(w, out_w)
    out = rows @ img.pixels.astype(np.float64) @ cols.T
    return GrayImage(to_uint8(out))


def degrade(img: GrayImage) -> GrayImage:
    """Bicubic down-sample by 2 (ceiling for odd sizes) and back up to the original size."""
    h, w = img.shape
    if h < 2 or w < 2:
        raise ImageTooSmall(f"cannot halve a {h}x{w} image")
    small = bicubic_resize(img, math.ceil(h / 2), math.ceil(w / 2))
    return bicubic_resize(small, h, w)


# Normalization

def compute_norm_stats(corpus: Sequence[GrayImage]) -> NormStats:
    if not corpus:
        raise EmptyCorpus("cannot compute statistics of an empty corpus")
    total = sum(int(img.pixels.sum(dtype=np.int64)) for img in corpus)
    count = sum(img.pixels.size for img in corpus)
    return NormStats(total / count / 255.0)


def normalize(img, stats: NormStats) -> np.ndarray:
    """8-bit image -> float32 ``(h, w, 1)`` tensor, ``v/255 - mean``."""
    px = img.pixels if isinstance(img, GrayImage) else np.asarray(img)
    out = px.astype(np.float64) * stats.scale - stats.mean
    return out.astype(np.float32)[..., None]


def denormalize_array(t, stats: NormStats) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return to_uint8((t + stats.mean) / stats.scale)


def denormalize(t, stats: NormStats) -> GrayImage:
    t = np.asarray(t)
    if t.ndim == 3:
        t = t[..., 0]
    return GrayImage(denormalize_array(t, stats))


# Patch pairs

@dataclass
class PatchPair:
    lr: np.ndarray  # (16, 16, 1) float32
    hr: np.ndarray  # (10, 10, 1) float32
    source: Optional[tuple] = None  # (image id, hr row, hr col)


def sample_patch_pairs(
    hr_img: GrayImage,
    count: int,
    rng_seed,
    stats: NormStats,
    reject_blank: bool = True,
    image_id=0,
    degraded: Optional[GrayImage] = None,
) -> list[PatchPair]:
    """Random aligned (16x16 degraded, 10x10 original) crops from one page.

    The HR anchor ``(r, c)`` is drawn uniformly from ``[3, dim - 13]`` so the
    LR window at ``(r - 3, c - 3)`` lies inside the page.  With
    ``reject_blank`` an HR window whose std is below 2 gray levels is redrawn,
    up to 50 attempts.
    """
    h, w = hr_img.shape
    if h < LR_SIZE or w < LR_SIZE:
        raise ImageTooSmall(f"image {h}x{w} is smaller than {LR_SIZE}x{LR_SIZE}")
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return []
    low = degraded if degraded is not None else degrade(hr_img)
    rng = np.random.default_rng(rng_seed)
    hi_r, hi_c = h - LR_SIZE + MARGIN, w - LR_SIZE + MARGIN
    hr_px = hr_img.pixels
    pairs = []
    for _ in range(count):
        for _attempt in range(BLANK_ATTEMPTS if reject_blank else 1):
            r = int(rng.integers(MARGIN, hi_r + 1))
            c = int(rng.integers(MARGIN, hi_c + 1))
            hr_win = hr_px[r:r + HR_SIZE, c:c + HR_SIZE]
            if not reject_blank or hr_win.std() >= BLANK_STD:
                break
        lr_win = low.pixels[r - MARGIN:r - MARGIN + LR_SIZE, c - MARGIN:c - MARGIN + LR_SIZE]
        pairs.append(PatchPair(normalize(lr_win, stats), normalize(hr_win, stats), (image_id, r, c)))
    return pairs


def sample_corpus(corpus: Sequence[GrayImage], count: int, rng_seed: int, stats: NormStats, reject_blank=True):
    """Spread ``count`` pairs evenly over the pages; page i uses seed ``rng_seed ^ i``."""
    if not corpus:
        raise EmptyCorpus("no pages to sample from")
    per, extra = divmod(count, len(corpus))
    pairs = []
    for i, img in enumerate(corpus):
        n = per + (1 if i < extra else 0)
        pairs.extend(sample_patch_pairs(img, n, rng_seed ^ i, stats, reject_blank, image_id=i))
    return pairs


DATASET_MAGIC = b"DSP1"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIQdd")
_PAIR_FLOATS = LR_SIZE * LR_SIZE + HR_SIZE * HR_SIZE


class PatchDataset:
    """In-memory patch pairs as stacked arrays plus their normalization stats."""

    def __init__(self, lr: np.ndarray, hr: np.ndarray, stats: NormStats):
        lr = np.asarray(lr, dtype=np.float32).reshape(-1, LR_SIZE, LR_SIZE, 1)
        hr = np.asarray(hr, dtype=np.float32).reshape(-1, HR_SIZE, HR_SIZE, 1)
        if len(lr) != len(hr):
            raise ValueError("lr/hr pair counts differ")
        self.lr, self.hr, self.stats = lr, hr, stats

    @classmethod
    def from_pairs(cls, pairs: Sequence[PatchPair], stats: NormStats) -> "PatchDataset":
        if not pairs:
            return cls(np.zeros((0, LR_SIZE, LR_SIZE, 1)), np.zeros((0, HR_SIZE, HR_SIZE, 1)), stats)
        return cls(np.stack([p.lr for p in pairs]), np.stack([p.hr for p in pairs]), stats)

    def __len__(self):
        return len(self.lr)

    def __iter__(self) -> Iterator[PatchPair]:
        for lr, hr in zip(self.lr, self.hr):
            yield PatchPair(lr, hr)

    def subset(self, idx) -> "PatchDataset":
        return PatchDataset(self.lr[idx], self.hr[idx], self.stats)

    def batches(self, batch_size: int = 32):
        for i in range(0, len(self), batch_size):
            yield self.lr[i:i + batch_size], self.hr[i:i + batch_size]


def dataset_to_bytes(pairs, stats: NormStats) -> bytes:
    ds = pairs if isinstance(pairs, PatchDataset) else PatchDataset.from_pairs(list(pairs), stats)
    n = len(ds)
    payload = np.concatenate([ds.lr.reshape(n, LR_SIZE * LR_SIZE), ds.hr.reshape(n, HR_SIZE * HR_SIZE)], axis=1).astype("<f4")
    body = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n, stats.mean, stats.scale) + payload.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def write_dataset(pairs, path, stats: Optional[NormStats] = None) -> None:
    if stats is None:
        if not isinstance(pairs, PatchDataset):
            raise ValueError("stats are required when writing a list of pairs")
        stats = pairs.stats
    Path(path).write_bytes(dataset_to_bytes(pairs, stats))


def _parse_header(head: bytes, file_size: int):
    if len(head) < _HEADER.size:
        raise FormatError("truncated dataset header")
    magic, version, count, mean, scale = _HEADER.unpack(head[:_HEADER.size])
    if magic != DATASET_MAGIC:
        raise FormatError("bad magic; not a dataset file")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    expected = _HEADER.size + count * _PAIR_FLOATS * 4 + 4
    if file_size != expected:
        raise FormatError(f"header declares {count} pairs ({expected} bytes) but file has {file_size} bytes")
    return count, NormStats(mean, scale)


def _split(block: np.ndarray):
    n = len(block)
    lr = block[:, :LR_SIZE * LR_SIZE].reshape(n, LR_SIZE, LR_SIZE, 1).astype(np.float32)
    hr = block[:, LR_SIZE * LR_SIZE:].reshape(n, HR_SIZE, HR_SIZE, 1).astype(np.float32)
    return lr, hr


def dataset_from_bytes(data: bytes) -> PatchDataset:
    count, stats = _parse_header(data, len(data))
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("dataset checksum mismatch")
    block = np.frombuffer(body, dtype="<f4", offset=_HEADER.size).reshape(count, _PAIR_FLOATS)
    return PatchDataset(*_split(block), stats)


def read_dataset(path) -> PatchDataset:
    return dataset_from_bytes(Path(path).read_bytes())


def iter_dataset_batches(path, batch_size: int = 32):
    """Stream ``(lr, hr)`` batches without loading the file at once.

    The checksum is verified incrementally; ChecksumError is raised after the
    last batch if it does not match.
    """
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        count, _ = _parse_header(head, size)
        crc = zlib.crc32(head)
        for start in range(0, count, batch_size):
            n = min(batch_size, count - start)
            raw = fh.read(n * _PAIR_FLOATS * 4)
            crc = zlib.crc32(raw, crc)
            yield _split(np.frombuffer(raw, dtype="<f4").reshape(n, _PAIR_FLOATS))
        (stored,) = struct.unpack("<I", fh.read(4))
    if stored != crc:
        raise ChecksumError("dataset checksum mismatch")
