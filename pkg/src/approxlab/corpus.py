"""Corpus handling: binary samples, a deterministic synthetic PE corpus,
and the disjoint three-way split (black-box train / substitute pool /
comparison) that the rest of the pipeline relies on.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_SAMPLE_BYTES = 64
SYNTH_SIZE_FLOOR = 4096
SYNTH_SIZE_CEIL = 262144

_HEADER_SIZE = 128
_PE_SIG_OFFSET = 0x40


class TooShortError(ValueError):
    """Byte sequence below the minimum the pipeline accepts."""


class InvalidRangeError(ValueError):
    """Synthetic size range outside the supported bounds."""


class DuplicateSampleError(ValueError):
    """Two samples share the same content digest."""


class BadRatiosError(ValueError):
    """Partition ratios malformed (wrong count, non-positive, or sum != 1)."""


class Label(enum.Enum):
    BENIGN = "benign"
    MALWARE = "malware"


class Source(enum.Enum):
    LOADED = "loaded"
    SYNTHETIC = "synthetic"


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class BinarySample:
    """A binary blob plus identity and provenance; `id` is the sha256 of `data`."""

    id: str
    data: bytes
    ground_truth: Label | None = None
    source: Source = Source.LOADED

    def __post_init__(self) -> None:
        if len(self.data) < MIN_SAMPLE_BYTES:
            raise TooShortError(
                f"sample has {len(self.data)} bytes, minimum is {MIN_SAMPLE_BYTES}"
            )
        if self.id != digest_bytes(self.data):
            raise ValueError("sample id does not match content digest")

    @classmethod
    def from_bytes(
        cls,
        data: bytes,
        ground_truth: Label | None = None,
        source: Source = Source.LOADED,
    ) -> "BinarySample":
        return cls(digest_bytes(data), bytes(data), ground_truth, source)


@dataclass(frozen=True)
class PeInfo:
    has_mz_magic: bool
    pe_offset: int | None = None
    section_count: int | None = None


def validate_pe(data: bytes) -> PeInfo:
    """Parse the MZ/PE header facts out of a byte sequence.

    pe_offset is reported only when the little-endian dword at 0x3C points
    inside the file at a "PE\\0\\0" signature; section_count only when the
    COFF field behind that signature is present too.
    """
    if len(data) < MIN_SAMPLE_BYTES:
        raise TooShortError(f"need at least {MIN_SAMPLE_BYTES} bytes, got {len(data)}")
    has_mz = data[:2] == b"MZ"
    pe_offset = None
    section_count = None
    e_lfanew = struct.unpack_from("<I", data, 0x3C)[0]
    if e_lfanew + 4 <= len(data) and data[e_lfanew : e_lfanew + 4] == b"PE\x00\x00":
        pe_offset = e_lfanew
        if e_lfanew + 8 <= len(data):
            section_count = struct.unpack_from("<H", data, e_lfanew + 6)[0]
    return PeInfo(has_mz, pe_offset, section_count)


# --------------------------------------------------------------------------
# synthetic corpus
# --------------------------------------------------------------------------

# Word-level Markov basis for the printable regions of synthetic samples.
_TEXT_BASIS = (
    "the installer copies every file into the program directory and then "
    "registers the service so the update task can run at boot time when "
    "the user logs in the helper checks the manifest and loads each module "
    "from the cache if the version matches the stored value otherwise it "
    "downloads a fresh copy from the mirror and verifies the checksum before "
    "the loader maps the section table into memory and resolves the import "
    "names from the export list of every library on the search path then "
    "control transfers to the entry point and the main window opens with "
    "the default settings from the configuration file in the local folder"
)


def _build_transitions() -> dict[str, list[str]]:
    words = _TEXT_BASIS.split()
    table: dict[str, list[str]] = {}
    for cur, nxt in zip(words, words[1:]):
        table.setdefault(cur, []).append(nxt)
    return table


_TRANSITIONS = _build_transitions()
_VOCAB = sorted(_TRANSITIONS)

# Fixed 16-byte motifs planted in every synthetic malware sample
# (packer-stub style signatures the byte-feature models can latch onto).
MALWARE_MOTIFS = (
    bytes.fromhex("e8000000005d8bc581ed0510400033c0"),
    bytes.fromhex("60be001040008dbe0000ffff5783cdff"),
    bytes.fromhex("558bec83c4f0b800104000e800000000"),
)


def _subseed(seed: int, index: int) -> int:
    h = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def _markov_text(rng: np.random.Generator, length: int) -> bytes:
    """Printable filler: a seeded Markov walk over the basis words, tiled."""
    words = []
    word = _VOCAB[rng.integers(0, len(_VOCAB))]
    chars = 0
    while chars < min(length, 2048):
        words.append(word)
        chars += len(word) + 1
        successors = _TRANSITIONS.get(word)
        if not successors:
            word = _VOCAB[rng.integers(0, len(_VOCAB))]
        else:
            word = successors[rng.integers(0, len(successors))]
    text = (" ".join(words) + "\n").encode("ascii")
    reps = length // len(text) + 1
    return (text * reps)[:length]


def _pe_header(rng: np.random.Generator) -> bytearray:
    header = bytearray(_HEADER_SIZE)
    header[0:2] = b"MZ"
    struct.pack_into("<I", header, 0x3C, _PE_SIG_OFFSET)
    header[_PE_SIG_OFFSET : _PE_SIG_OFFSET + 4] = b"PE\x00\x00"
    struct.pack_into("<H", header, _PE_SIG_OFFSET + 4, 0x014C)  # i386
    struct.pack_into("<H", header, _PE_SIG_OFFSET + 6, int(rng.integers(2, 6)))
    return header


def _synth_benign(rng: np.random.Generator, size: int) -> bytes:
    body = size - _HEADER_SIZE
    text_len = int(body * rng.uniform(0.70, 0.90))
    blob = _pe_header(rng) + _markov_text(rng, text_len)
    blob += bytes(size - len(blob))  # zero-padded section tail
    return bytes(blob)


def _synth_malware(rng: np.random.Generator, size: int) -> bytes:
    body = size - _HEADER_SIZE
    packed_len = int(body * rng.uniform(0.40, 0.60))
    filler_len = body - packed_len
    blob = _pe_header(rng) + _markov_text(rng, filler_len) + rng.bytes(packed_len)
    blob = bytearray(blob[:size])
    for motif in MALWARE_MOTIFS:
        at = int(rng.integers(_HEADER_SIZE, size - len(motif)))
        blob[at : at + len(motif)] = motif
    return bytes(blob)


def synth_corpus(
    seed: int,
    n_benign: int,
    n_malware: int,
    size_range: tuple[int, int] = (4096, 16384),
) -> list[BinarySample]:
    """Deterministic synthetic corpus: printable-heavy benign PEs and
    malware PEs with high-entropy packed regions plus fixed byte motifs.

    Every sample carries a valid MZ/PE header stub and its ground-truth
    label.  Each sample's RNG is seeded from digest(seed, index), so
    regeneration is reproducible sample by sample.
    """
    if n_benign < 1 or n_malware < 1:
        raise ValueError("need at least one sample of each class")
    lo, hi = size_range
    if not (SYNTH_SIZE_FLOOR <= lo <= hi <= SYNTH_SIZE_CEIL):
        raise InvalidRangeError(
            f"size_range must lie within [{SYNTH_SIZE_FLOOR}, {SYNTH_SIZE_CEIL}]"
        )
    samples = []
    for index in range(n_benign + n_malware):
        rng = np.random.default_rng(_subseed(seed, index))
        size = int(rng.integers(lo, hi + 1))
        if index < n_benign:
            data = _synth_benign(rng, size)
            label = Label.BENIGN
        else:
            data = _synth_malware(rng, size)
            label = Label.MALWARE
        samples.append(BinarySample.from_bytes(data, label, Source.SYNTHETIC))
    return samples


# --------------------------------------------------------------------------
# partitioning
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetPartition:
    """Disjoint id sets: black-box train (X), substitute pool (X'),
    comparison (X'')."""

    blackbox_train: frozenset[str]
    substitute_pool: frozenset[str]
    comparison: frozenset[str]

    def __post_init__(self) -> None:
        parts = (self.blackbox_train, self.substitute_pool, self.comparison)
        if not all(parts):
            raise ValueError("every partition part must be non-empty")
        total = len(parts[0]) + len(parts[1]) + len(parts[2])
        if len(parts[0] | parts[1] | parts[2]) != total:
            raise ValueError("partition parts must be pairwise disjoint")
        if len(self.substitute_pool) >= len(self.blackbox_train):
            raise ValueError("substitute pool must be smaller than black-box train set")


def largest_remainder(total: int, fractions: tuple[float, ...]) -> list[int]:
    """Integer apportionment of `total` by `fractions`, preserving the sum.

    Floors every quota, then hands the leftover units to the largest
    fractional remainders (ties go to the lower index).
    """
    quotas = [total * f for f in fractions]
    sizes = [int(q) for q in quotas]
    leftovers = sorted(
        range(len(fractions)),
        key=lambda i: (-(quotas[i] - sizes[i]), i),
    )
    for i in leftovers[: total - sum(sizes)]:
        sizes[i] += 1
    return sizes


def partition(
    samples: list[BinarySample],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetPartition:
    """Seeded shuffle then three-way split with largest-remainder sizing.

    Pure function of (sample contents, ratios, seed): ids are sorted before
    shuffling, so input order never matters.  Duplicate contents are
    rejected up front.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise BadRatiosError("need three positive ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatiosError(f"ratios sum to {sum(ratios)}, expected 1")
    ids = sorted(s.id for s in samples)
    if len(set(ids)) != len(ids):
        raise DuplicateSampleError("two samples share a content digest")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_x, n_pool, _ = largest_remainder(len(ids), tuple(ratios))
    return DatasetPartition(
        blackbox_train=frozenset(shuffled[:n_x]),
        substitute_pool=frozenset(shuffled[n_x : n_x + n_pool]),
        comparison=frozenset(shuffled[n_x + n_pool :]),
    )


def samples_by_id(samples: list[BinarySample]) -> dict[str, BinarySample]:
    return {s.id: s for s in samples}


# --------------------------------------------------------------------------
# external interfaces: directory corpus and partition manifest
# --------------------------------------------------------------------------

LABELS_FILENAME = "labels.csv"


def load_directory(path: Path | str) -> list[BinarySample]:
    """Read every regular file in `path` as one sample; an optional
    labels.csv (rows: filename,benign|malware) supplies ground truth."""
    root = Path(path)
    labels: dict[str, Label] = {}
    labels_file = root / LABELS_FILENAME
    if labels_file.is_file():
        with open(labels_file, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                name, value = row[0].strip(), row[1].strip().lower()
                labels[name] = Label(value)
    samples = []
    for entry in sorted(root.iterdir()):
        if not entry.is_file() or entry.name == LABELS_FILENAME:
            continue
        data = entry.read_bytes()
        if len(data) < MIN_SAMPLE_BYTES:
            raise TooShortError(f"{entry}: {len(data)} bytes, minimum is {MIN_SAMPLE_BYTES}")
        samples.append(BinarySample.from_bytes(data, labels.get(entry.name)))
    return samples


def save_directory(samples: list[BinarySample], path: Path | str) -> None:
    """Write one <id>.bin per sample plus a labels.csv for ground truth."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for sample in samples:
        name = f"{sample.id}.bin"
        (root / name).write_bytes(sample.data)
        if sample.ground_truth is not None:
            rows.append((name, sample.ground_truth.value))
    if rows:
        with open(root / LABELS_FILENAME, "w", newline="") as fh:
            csv.writer(fh).writerows(sorted(rows))


def partition_manifest(
    part: DatasetPartition, ratios: tuple[float, float, float], seed: int
) -> dict:
    return {
        "blackbox_train": sorted(part.blackbox_train),
        "substitute_pool": sorted(part.substitute_pool),
        "comparison": sorted(part.comparison),
        "ratios": list(ratios),
        "seed": seed,
    }


def partition_from_manifest(manifest: dict) -> DatasetPartition:
    return DatasetPartition(
        blackbox_train=frozenset(manifest["blackbox_train"]),
        substitute_pool=frozenset(manifest["substitute_pool"]),
        comparison=frozenset(manifest["comparison"]),
    )
