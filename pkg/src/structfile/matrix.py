"""Matrix payloads, shapes, and the 16-byte float helpers."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple

import numpy as np

from .types import NumKind


class LossyConversionWarning(UserWarning):
    pass


def dtype_for(kind: NumKind) -> np.dtype:
    if kind is NumKind.F16:
        return np.dtype("V16")
    return np.dtype(kind.value)


@dataclass(frozen=True)
class MatrixShape:
    """Rank, per-dimension index bounds and storage order.

    Only the counts travel through files; lower bounds are dropped to 0.
    """
    lower: Tuple[int, ...]
    upper: Tuple[int, ...]
    first_index_fastest: bool = True

    @classmethod
    def from_counts(cls, counts: Sequence[int], lower: Optional[Sequence[int]] = None,
                    first_index_fastest: bool = True) -> "MatrixShape":
        lower = tuple(lower) if lower is not None else (0,) * len(counts)
        return cls(lower, tuple(lo + c - 1 for lo, c in zip(lower, counts)), first_index_fastest)

    @property
    def rank(self) -> int:
        return len(self.lower)

    @property
    def counts(self) -> Tuple[int, ...]:
        return tuple(hi - lo + 1 for lo, hi in zip(self.lower, self.upper))

    @property
    def size(self) -> int:
        return math.prod(self.counts)


class MatrixValue:
    """A numeric matrix: kind, shape and a flat cell array in storage order.

    Cells are kept first-index-fastest (the wire order).  For f16 each cell is
    16 raw big-endian bytes.
    """

    def __init__(self, kind: NumKind, shape: MatrixShape, cells: Optional[np.ndarray] = None):
        if any(c < 0 for c in shape.counts):
            raise ValueError("negative matrix extent")
        dt = dtype_for(kind)
        if cells is None:
            cells = np.zeros(shape.size, dtype=dt)
        else:
            cells = np.asarray(cells)
            if kind is NumKind.F16:
                cells = np.frombuffer(cells.tobytes(), dtype=dt) if cells.dtype != dt else cells
            else:
                cells = cells.astype(dt, copy=False)
            cells = cells.reshape(-1)
            if cells.size != shape.size:
                raise ValueError(f"{cells.size} cells for shape {shape.counts}")
            if not shape.first_index_fastest and shape.rank > 1:
                cells = cells.reshape(shape.counts, order="C").ravel(order="F")
                shape = MatrixShape(shape.lower, shape.upper, True)
        self.kind = kind
        self.shape = shape
        self.cells = cells

    @classmethod
    def zeros(cls, kind: NumKind, counts: Sequence[int]) -> "MatrixValue":
        return cls(kind, MatrixShape.from_counts(counts))

    @classmethod
    def from_array(cls, kind: NumKind, arr) -> "MatrixValue":
        arr = np.asarray(arr)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(kind, MatrixShape.from_counts(arr.shape), arr.ravel(order="F"))

    @classmethod
    def from_bytes(cls, kind: NumKind, counts: Sequence[int], buf, order: str) -> "MatrixValue":
        dt = dtype_for(kind)
        if kind is NumKind.F16:
            cells = np.frombuffer(bytes(buf), dtype=dt)
            if order == "<":
                cells = _flip16(cells)
            return cls(kind, MatrixShape.from_counts(counts), cells.copy())
        cells = np.frombuffer(bytes(buf), dtype=dt.newbyteorder(order)).astype(dt)
        return cls(kind, MatrixShape.from_counts(counts), cells)

    def to_bytes(self, order: str) -> bytes:
        if self.kind is NumKind.F16:
            cells = self.cells if order == ">" else _flip16(self.cells)
            return cells.tobytes()
        return self.cells.astype(self.cells.dtype.newbyteorder(order), copy=False).tobytes()

    @property
    def counts(self) -> Tuple[int, ...]:
        return self.shape.counts

    def as_array(self) -> np.ndarray:
        return self.cells.reshape(self.counts, order="F")

    def copy(self) -> "MatrixValue":
        return MatrixValue(self.kind, self.shape, self.cells.copy())

    def __eq__(self, other):
        if not isinstance(other, MatrixValue):
            return NotImplemented
        return (self.kind is other.kind and self.counts == other.counts
                and self.cells.tobytes() == other.cells.tobytes())

    def __repr__(self):
        return f"MatrixValue({self.kind.value}, {self.counts}, {self.cells.tolist()!r})"


def _flip16(cells):
    raw = np.frombuffer(cells.tobytes(), dtype=np.uint8).reshape(-1, 16)[:, ::-1]
    return np.frombuffer(raw.tobytes(), dtype=np.dtype("V16"))


# -- IEEE 754 binary128 ------------------------------------------------------

_Q_BIAS = 16383
_Q_FRAC = 112


def float_to_f16(x: float) -> bytes:
    """Exact binary128 encoding (big-endian) of a Python float."""
    x = float(x)
    sign = 1 if math.copysign(1.0, x) < 0 else 0
    if math.isnan(x):
        bits = (0x7FFF << _Q_FRAC) | (1 << (_Q_FRAC - 1))
    elif math.isinf(x):
        bits = 0x7FFF << _Q_FRAC
    elif x == 0.0:
        bits = 0
    else:
        m, e = math.frexp(abs(x))
        frac = int((2.0 * m - 1.0) * 2.0 ** _Q_FRAC)
        bits = ((e - 1 + _Q_BIAS) << _Q_FRAC) | frac
    return ((sign << 127) | bits).to_bytes(16, "big")


def f16_to_float(raw: bytes) -> float:
    """Nearest Python float to a big-endian binary128 value."""
    bits = int.from_bytes(raw, "big")
    sign = -1.0 if bits >> 127 else 1.0
    exp = (bits >> _Q_FRAC) & 0x7FFF
    frac = bits & ((1 << _Q_FRAC) - 1)
    if exp == 0x7FFF:
        return math.nan if frac else sign * math.inf
    if exp == 0:
        mant, e = frac, 1 - _Q_BIAS - _Q_FRAC
    else:
        mant, e = (1 << _Q_FRAC) | frac, exp - _Q_BIAS - _Q_FRAC
    if mant == 0:
        return sign * 0.0
    if e + mant.bit_length() - 1 < -1022:
        return sign * float(Fraction(mant) / (Fraction(2) ** -e))
    try:
        return sign * math.ldexp(float(mant), e)
    except OverflowError:
        return sign * math.inf


def f16_to_float_checked(raw: bytes) -> float:
    x = f16_to_float(raw)
    if not math.isnan(x) and float_to_f16(x) != bytes(raw):
        warnings.warn("real*16 value rounded to the nearest double", LossyConversionWarning,
                      stacklevel=3)
    return x
