"""Byte-to-pixel rendering along the Hilbert curve.

Two canvas colorings:

* Color-Hilbert (CH): each byte picks a color by byte class (null byte,
  0xFF, printable ASCII, everything else) and lands on the cell its
  offset maps to on the curve.
* Entropy (EN): each offset is colored by the Shannon entropy of the
  byte window around it, on a black -> bright-pink gradient (0 to 8 bits).

Files longer than the canvas capacity are truncated to 4^k bytes; cells
beyond the file length keep the configured fill color.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import hilbert
from .corpus import BinarySample


class EmptyWindowError(ValueError):
    """Entropy requested over an empty byte window."""


class RenderMode(enum.Enum):
    COLOR_HILBERT = "ch"
    ENTROPY = "en"


# CH byte-class palette, version "ch-v1": null/0xFF/printable/other.
CH_BLACK = (0, 0, 0)
CH_WHITE = (255, 255, 255)
CH_BLUE = (75, 119, 190)
CH_RED = (190, 75, 75)

# Entropy gradient endpoint ("bright pink"); start is black.
EN_PINK = (255, 0, 192)

DEFAULT_ORDER = 9
DEFAULT_ENTROPY_WINDOW = 65


@dataclass(frozen=True)
class RenderConfig:
    mode: RenderMode = RenderMode.COLOR_HILBERT
    order: int = DEFAULT_ORDER
    entropy_window: int = DEFAULT_ENTROPY_WINDOW
    fill_color: tuple[int, int, int] = (0, 0, 0)
    palette_version: str = "ch-v1"

    def __post_init__(self) -> None:
        hilbert.side_length(self.order)  # validates order bounds
        if self.entropy_window < 3 or self.entropy_window % 2 == 0:
            raise ValueError("entropy_window must be odd and >= 3")

    def descriptor(self) -> str:
        return (
            f"{self.mode.value}:k{self.order}:w{self.entropy_window}"
            f":{self.palette_version}"
        )


@dataclass
class ImageRepr:
    """Square RGB canvas; pixels are row-major uint8 with shape (side, side, 3)."""

    side: int
    pixels: np.ndarray
    source_id: str
    mode: RenderMode

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.side, self.side, 3):
            raise ValueError(
                f"pixel array shape {self.pixels.shape} != ({self.side}, {self.side}, 3)"
            )


def shannon_entropy(window: bytes) -> float:
    """Shannon entropy in bits of a byte window, over the 256 possible values.

    Zero-probability values contribute nothing; the result lies in [0, 8].
    """
    if len(window) == 0:
        raise EmptyWindowError("entropy of empty window is undefined")
    total = len(window)
    ent = 0.0
    for count in Counter(window).values():
        p = count / total
        ent -= p * math.log2(p)
    return ent


def entropy_profile(data: bytes, window: int, limit: int | None = None) -> np.ndarray:
    """Windowed entropy at every byte offset (or the first `limit` offsets).

    The window is `window` bytes centered on the offset; near the file
    boundaries it slides inward so its size stays constant (offset 0 with
    window 65 sees bytes [0, 64]).  Files shorter than the window use the
    whole file at every offset.
    """
    if window < 1:
        raise ValueError("window must be positive")
    n = len(data)
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    stop = n if limit is None else min(limit, n)
    arr = np.frombuffer(data, dtype=np.uint8)
    w = min(window, n)
    half = window // 2
    lo = np.clip(np.arange(stop, dtype=np.int64) - half, 0, n - w)
    hi = lo + w
    # per-value prefix counts keep everything integer-exact
    nlogn = np.zeros(w + 1, dtype=np.float64)
    counts = np.arange(1, w + 1, dtype=np.float64)
    nlogn[1:] = counts * np.log2(counts)
    weighted = np.zeros(stop, dtype=np.float64)
    for value in range(256):
        prefix = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(arr == value, out=prefix[1:])
        cnt = prefix[hi] - prefix[lo]
        weighted += nlogn[cnt]
    return np.log2(w) - weighted / w


def _ch_palette() -> np.ndarray:
    lut = np.empty((256, 3), dtype=np.uint8)
    lut[:] = CH_RED
    lut[0x20 : 0x7E + 1] = CH_BLUE
    lut[0x00] = CH_BLACK
    lut[0xFF] = CH_WHITE
    return lut


_CH_LUT = _ch_palette()


def lerp_color(start: tuple[int, int, int], end: tuple[int, int, int], t: float) -> tuple[int, int, int]:
    """Linear RGB interpolation, rounded to the nearest 8-bit channel value."""
    return tuple(int(np.rint(s + (e - s) * t)) for s, e in zip(start, end))


def _blank_canvas(config: RenderConfig) -> np.ndarray:
    side = hilbert.side_length(config.order)
    canvas = np.empty((side * side, 3), dtype=np.uint8)
    canvas[:] = config.fill_color
    return canvas


def render_ch(sample: BinarySample, config: RenderConfig) -> ImageRepr:
    """Color-Hilbert render: byte at offset d colors the d-th curve cell."""
    if config.mode is not RenderMode.COLOR_HILBERT:
        raise ValueError("render_ch requires a ColorHilbert config")
    side = hilbert.side_length(config.order)
    data = sample.data[: hilbert.capacity(config.order)]
    canvas = _blank_canvas(config)
    if data:
        arr = np.frombuffer(data, dtype=np.uint8)
        cells = hilbert.curve_offsets(config.order)[: arr.size]
        canvas[cells] = _CH_LUT[arr]
    return ImageRepr(side, canvas.reshape(side, side, 3), sample.id, config.mode)


def render_en(sample: BinarySample, config: RenderConfig) -> ImageRepr:
    """Entropy render: offset d gets black->pink gradient color at t = E_d / 8."""
    if config.mode is not RenderMode.ENTROPY:
        raise ValueError("render_en requires an Entropy config")
    side = hilbert.side_length(config.order)
    data = sample.data[: hilbert.capacity(config.order)]
    canvas = _blank_canvas(config)
    if data:
        t = entropy_profile(data, config.entropy_window) / 8.0
        colors = np.rint(np.outer(t, np.asarray(EN_PINK, dtype=np.float64)))
        cells = hilbert.curve_offsets(config.order)[: t.size]
        canvas[cells] = colors.astype(np.uint8)
    return ImageRepr(side, canvas.reshape(side, side, 3), sample.id, config.mode)


def render(sample: BinarySample, config: RenderConfig) -> ImageRepr:
    if config.mode is RenderMode.COLOR_HILBERT:
        return render_ch(sample, config)
    return render_en(sample, config)


def to_png(image: ImageRepr, path) -> None:
    """Write a lossless 8-bit RGB PNG; reading it back yields identical pixels."""
    try:
        Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IOError(f"cannot write PNG to {path}: {exc}") from exc


def from_png(path, source_id: str = "", mode: RenderMode = RenderMode.COLOR_HILBERT) -> ImageRepr:
    """Load a square RGB PNG back into an ImageRepr."""
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    if pixels.shape[0] != pixels.shape[1]:
        raise ValueError(f"{path}: canvas is not square")
    return ImageRepr(pixels.shape[0], pixels, source_id or str(path), mode)
