"""Feature extraction: byte-sequence features for the black-box side,
pixel-grid features for substitutes.  The two sides never share a space.
"""

from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .corpus import BinarySample, TooShortError
from .render import ImageRepr

DEFAULT_BIGRAM_BUCKETS = 1024
DEFAULT_GRID = 16
MIN_BIGRAM_BUCKETS = 64


class BadGridError(ValueError):
    """Grid does not divide the canvas side."""


class SpaceMismatchError(ValueError):
    """Feature vector offered to a consumer from a different feature space."""


class FeatureSpace(enum.Enum):
    BYTE_HIST = "byte_hist"
    BYTE_BIGRAM = "byte_bigram"
    BYTE_COMBO = "byte_combo"  # histogram ++ hashed bigrams
    PIXEL_GRID = "pixel_grid"


BYTE_SPACES = frozenset(
    {FeatureSpace.BYTE_HIST, FeatureSpace.BYTE_BIGRAM, FeatureSpace.BYTE_COMBO}
)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    space: FeatureSpace

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64)
        )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def descriptor(self) -> str:
        return f"{self.space.value}:{self.dim}"


def _payload(sample: BinarySample | bytes) -> bytes:
    # the oracle server extracts straight from raw request bodies
    return sample.data if isinstance(sample, BinarySample) else sample


def byte_histogram(sample: BinarySample | bytes) -> FeatureVector:
    """256-dim normalized byte-value frequencies."""
    data = _payload(sample)
    if not data:
        raise TooShortError("histogram features need at least 1 byte")
    arr = np.frombuffer(data, dtype=np.uint8)
    counts = np.bincount(arr, minlength=256).astype(np.float64)
    return FeatureVector(counts / arr.size, FeatureSpace.BYTE_HIST)


@lru_cache(maxsize=4)
def _bigram_bucket_table(buckets: int) -> np.ndarray:
    """Stable bucket of every possible byte pair: blake2b(pair) mod buckets."""
    table = np.empty(65536, dtype=np.int64)
    for a in range(256):
        for b in range(256):
            h = hashlib.blake2b(bytes((a, b)), digest_size=8).digest()
            table[a * 256 + b] = int.from_bytes(h, "big") % buckets
    return table


def byte_bigram_hashed(
    sample: BinarySample | bytes, buckets: int = DEFAULT_BIGRAM_BUCKETS
) -> FeatureVector:
    """Normalized counts of adjacent byte pairs hashed into `buckets` bins."""
    if buckets < MIN_BIGRAM_BUCKETS:
        raise ValueError(f"buckets must be >= {MIN_BIGRAM_BUCKETS}")
    arr = np.frombuffer(_payload(sample), dtype=np.uint8).astype(np.int64)
    if arr.size < 2:
        raise TooShortError("bigram features need at least 2 bytes")
    pair_ids = arr[:-1] * 256 + arr[1:]
    bins = _bigram_bucket_table(buckets)[pair_ids]
    counts = np.bincount(bins, minlength=buckets).astype(np.float64)
    return FeatureVector(counts / pair_ids.size, FeatureSpace.BYTE_BIGRAM)


def blackbox_features(
    sample: BinarySample | bytes, buckets: int = DEFAULT_BIGRAM_BUCKETS
) -> FeatureVector:
    """Default black-box space: byte histogram concatenated with hashed
    bigrams (substitutes never see these; the black-box never sees pixels)."""
    hist = byte_histogram(sample)
    bigram = byte_bigram_hashed(sample, buckets)
    return FeatureVector(
        np.concatenate([hist.values, bigram.values]), FeatureSpace.BYTE_COMBO
    )


def pixel_grid_features(image: ImageRepr, grid: int = DEFAULT_GRID) -> FeatureVector:
    """Mean R, G, B per grid block, scaled to [0, 1]; blocks in row-major order."""
    if grid < 1 or image.side % grid != 0:
        raise BadGridError(f"grid {grid} does not divide side {image.side}")
    block = image.side // grid
    means = (
        image.pixels.reshape(grid, block, grid, block, 3)
        .mean(axis=(1, 3))
        .reshape(grid * grid, 3)
    )
    return FeatureVector(means.reshape(-1) / 255.0, FeatureSpace.PIXEL_GRID)


def byte_extractor_for(descriptor: str):
    """Extraction callable for a byte-space descriptor ("space:dim")."""
    name, _, dim = descriptor.partition(":")
    space = FeatureSpace(name)
    dim = int(dim)
    if space is FeatureSpace.BYTE_HIST:
        return byte_histogram
    if space is FeatureSpace.BYTE_BIGRAM:
        return lambda s: byte_bigram_hashed(s, buckets=dim)
    if space is FeatureSpace.BYTE_COMBO:
        return lambda s: blackbox_features(s, buckets=dim - 256)
    raise SpaceMismatchError(f"{descriptor} is not a byte-feature space")


def export_csv(
    vectors: list[tuple[str, FeatureVector]], path: Path | str
) -> None:
    """Feature matrix as CSV: id column plus one column per dimension,
    headed by the space descriptor."""
    if not vectors:
        raise ValueError("nothing to export")
    descriptor = vectors[0][1].descriptor()
    if any(v.descriptor() != descriptor for _, v in vectors):
        raise SpaceMismatchError("mixed feature spaces in one matrix")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"{descriptor}[{i}]" for i in range(vectors[0][1].dim)])
        for sample_id, vec in vectors:
            writer.writerow([sample_id] + [repr(x) for x in vec.values.tolist()])
