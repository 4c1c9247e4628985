"""Order-k Hilbert space-filling curve between byte offsets and canvas coordinates.

Convention used throughout the package: the order-k curve lives on a
2^k x 2^k canvas, starts at (0, 0) and ends at (2^k - 1, 0); x is the
column, y the row, origin top-left when rasterized.  Consecutive curve
indices are always Manhattan-adjacent, which is the locality property
that keeps nearby bytes nearby on the canvas.
"""

from __future__ import annotations

import numpy as np

MIN_ORDER = 1
MAX_ORDER = 12


class OutOfRangeError(ValueError):
    """Curve index or point outside the order-k canvas."""


def _check_order(k: int) -> None:
    if not MIN_ORDER <= k <= MAX_ORDER:
        raise ValueError(f"order must be in [{MIN_ORDER}, {MAX_ORDER}], got {k}")


def side_length(k: int) -> int:
    _check_order(k)
    return 1 << k


def capacity(k: int) -> int:
    """Number of cells (= addressable byte offsets) on the order-k canvas."""
    _check_order(k)
    return 1 << (2 * k)


def d2xy(k: int, d: int) -> tuple[int, int]:
    """Map curve index d to the (x, y) cell it visits on the order-k curve.

    Iterative bit-manipulation form; processes two bits of d per level,
    rotating/reflecting the sub-square as required by the quadrant.
    """
    _check_order(k)
    if not 0 <= d < capacity(k):
        raise OutOfRangeError(f"index {d} outside [0, 4^{k})")
    x = y = 0
    t = d
    s = 1
    side = 1 << k
    while s < side:
        rx = 1 & (t >> 1)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        x += s * rx
        y += s * ry
        t >>= 2
        s <<= 1
    return x, y


def xy2d(k: int, x: int, y: int) -> int:
    """Exact inverse of d2xy: curve index of cell (x, y)."""
    _check_order(k)
    side = 1 << k
    if not (0 <= x < side and 0 <= y < side):
        raise OutOfRangeError(f"point ({x}, {y}) outside {side}x{side} canvas")
    d = 0
    s = side >> 1
    while s > 0:
        rx = 1 if x & s else 0
        ry = 1 if y & s else 0
        d += s * s * ((3 * rx) ^ ry)
        # descend into the child square, undoing the quadrant transform
        x &= s - 1
        y &= s - 1
        if ry == 0:
            if rx == 1:
                x = s - 1 - x
                y = s - 1 - y
            x, y = y, x
        s >>= 1
    return d


def d2xy_batch(k: int, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized d2xy over an array of indices; same algorithm elementwise."""
    _check_order(k)
    d = np.asarray(d, dtype=np.int64)
    if d.size and (d.min() < 0 or d.max() >= capacity(k)):
        raise OutOfRangeError("index outside [0, 4^k)")
    x = np.zeros_like(d)
    y = np.zeros_like(d)
    t = d.copy()
    s = 1
    side = 1 << k
    while s < side:
        rx = 1 & (t >> 1)
        ry = 1 & (t ^ rx)
        flip = (ry == 0) & (rx == 1)
        x = np.where(flip, s - 1 - x, x)
        y = np.where(flip, s - 1 - y, y)
        swap = ry == 0
        x, y = np.where(swap, y, x), np.where(swap, x, y)
        x += s * rx
        y += s * ry
        t >>= 2
        s <<= 1
    return x, y


_CURVE_CACHE: dict[int, np.ndarray] = {}


def curve_offsets(k: int) -> np.ndarray:
    """Row-major pixel index (y * side + x) of every curve position d < 4^k.

    Cached per order; this is the scatter permutation renders use to place
    byte d at its canvas cell in one vectorized assignment.
    """
    _check_order(k)
    perm = _CURVE_CACHE.get(k)
    if perm is None:
        x, y = d2xy_batch(k, np.arange(capacity(k), dtype=np.int64))
        perm = y * (1 << k) + x
        perm.setflags(write=False)
        _CURVE_CACHE[k] = perm
    return perm
