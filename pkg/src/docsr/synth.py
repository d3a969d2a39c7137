"""Synthetic text pages that stand in for scanned documents.

Text is rasterized at 4x the target resolution with a TrueType font and
box-filtered down, which gives the soft anti-aliased strokes of a scan.
"""

from __future__ import annotations

import glob
from functools import lru_cache

import numpy as np

from .dataset import GrayImage, to_uint8

SUPERSAMPLE = 4
_LETTERS = "etaoinshrdlucmfwypvbgkjqxz"
_FREQ = np.array([12.7, 9.1, 8.2, 7.5, 7.0, 6.7, 6.3, 6.1, 6.0, 4.3, 4.0, 2.8, 2.8,
                  2.4, 2.4, 2.0, 2.0, 1.9, 1.0, 1.5, 2.0, 0.8, 0.2, 0.1, 0.2, 0.1])
_FREQ = _FREQ / _FREQ.sum()


@lru_cache(maxsize=None)
def available_fonts() -> tuple:
    fonts = sorted(glob.glob("/usr/share/fonts/**/*.ttf", recursive=True))
    return tuple(f for f in fonts if "DejaVu" in f) or tuple(fonts)


def random_text(rng: np.random.Generator, n_words: int) -> list[str]:
    words = []
    for _ in range(n_words):
        k = int(rng.integers(1, 10))
        w = "".join(rng.choice(list(_LETTERS), size=k, p=_FREQ))
        if rng.random() < 0.15:
            w = w.capitalize()
        if rng.random() < 0.08:
            w += rng.choice([",", ".", ";"])
        if rng.random() < 0.04:
            w = str(int(rng.integers(0, 2000)))
        words.append(w)
    return words


def render_page(height: int, width: int, dpi: int = 100, seed: int = 0,
                font_pt: float = 11.0, noise: float = 2.0, font=None) -> GrayImage:
    """Render a page of random words at ``dpi``; ``noise`` is Gaussian sensor noise in gray levels."""
    from PIL import Image, ImageDraw, ImageFont

    rng = np.random.default_rng(seed)
    fonts = available_fonts()
    if font is None:
        if not fonts:
            raise RuntimeError("no TrueType fonts found")
        font = fonts[int(rng.integers(len(fonts)))]
    px = max(6, int(round(font_pt * dpi / 72 * SUPERSAMPLE)))
    face = ImageFont.truetype(font, px)
    big = Image.new("L", (width * SUPERSAMPLE, height * SUPERSAMPLE), 255)
    draw = ImageDraw.Draw(big)
    margin = int(0.04 * width * SUPERSAMPLE)
    line_h = int(px * 1.35)
    y = margin
    while y + line_h < big.height - margin:
        x = margin
        for word in random_text(rng, 40):
            wlen = draw.textlength(word + " ", font=face)
            if x + wlen > big.width - margin:
                break
            draw.text((x, y), word, font=face, fill=int(rng.integers(0, 40)))
            x += wlen
        y += line_h
    small = big.reduce(SUPERSAMPLE)
    arr = np.asarray(small, dtype=np.float64)
    if noise > 0:
        arr = arr + rng.normal(0, noise, arr.shape)
    return GrayImage(to_uint8(arr))
