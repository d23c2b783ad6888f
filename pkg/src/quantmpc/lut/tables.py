"""Plain lookup tables and the builders for every function the engine tabulates.

A table with input widths (a, b) maps the concatenated index ``x * 2**b + y`` to
an ``out_width``-bit ring element; single-input tables have b = 0.  Tables carry
an optional leading batch shape so one object can describe many tables of the
same geometry (one per channel, per attention row, ...).

Real-valued functions are floored after scaling and saturated to the output
range, the same floor-and-clip rule the quantizer uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import DomainError, StructuralError
from ..ring import RingArray

MAX_SLOT_WIDTH = 8


@dataclass(frozen=True)
class TableLayout:
    """Public geometry of a batch of tables.

    ``shared_slot`` marks an offset group: all tables along the last batch axis
    use one offset (and therefore one opened value) in that input slot.
    """

    batch_shape: tuple[int, ...]
    in_widths: tuple[int, int]
    out_width: int
    shared_slot: int | None = None

    def __post_init__(self):
        a, b = self.in_widths
        if not (1 <= a <= MAX_SLOT_WIDTH and 0 <= b <= MAX_SLOT_WIDTH):
            raise StructuralError(f"table input widths {self.in_widths} outside 1..{MAX_SLOT_WIDTH}")
        if self.shared_slot is not None:
            if self.shared_slot not in (0, 1) or (self.shared_slot == 1 and b == 0):
                raise StructuralError("shared slot must name an existing input")
            if not self.batch_shape:
                raise StructuralError("an offset group needs a batch axis to share over")

    @property
    def size(self) -> int:
        return 1 << (self.in_widths[0] + self.in_widths[1])

    @property
    def slots(self) -> int:
        return 1 if self.in_widths[1] == 0 else 2

    @property
    def count(self) -> int:
        return int(np.prod(self.batch_shape, dtype=np.int64)) if self.batch_shape else 1

    def slot_shape(self, slot: int) -> tuple[int, ...]:
        """Shape of the input (and offset) for ``slot``."""
        if slot == self.shared_slot:
            return self.batch_shape[:-1]
        return self.batch_shape

    def with_batch(self, batch_shape, shared_slot=None) -> TableLayout:
        return TableLayout(tuple(batch_shape), self.in_widths, self.out_width, shared_slot)


@dataclass
class PlainTable:
    entries: RingArray  # shape batch_shape + (2**(a+b),)
    in_widths: tuple[int, int]

    def __post_init__(self):
        a, b = self.in_widths
        if self.entries.shape[-1] != 1 << (a + b):
            raise StructuralError(f"table has {self.entries.shape[-1]} entries, expected {1 << (a + b)}")

    @property
    def out_width(self) -> int:
        return self.entries.width

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.entries.shape[:-1]

    def layout(self, shared_slot: int | None = None) -> TableLayout:
        return TableLayout(self.batch_shape, self.in_widths, self.out_width, shared_slot)

    def lookup(self, x, y=None) -> RingArray:
        """Direct application; x and y are unsigned index arrays broadcastable to the batch."""
        a, b = self.in_widths
        x = np.asarray(x, dtype=np.int64) & ((1 << a) - 1)
        idx = x if b == 0 else (x << b) | (np.asarray(y, dtype=np.int64) & ((1 << b) - 1))
        if not self.batch_shape:
            return RingArray._raw(np.asarray(self.entries.value[idx]), self.out_width)
        idx = np.broadcast_to(idx, self.batch_shape)
        vals = np.take_along_axis(self.entries.value, np.asarray(idx)[..., None], axis=-1)[..., 0]
        return RingArray._raw(vals, self.out_width)

    @classmethod
    def from_function(cls, f: Callable, in_widths, out_width: int, batch_shape=()) -> PlainTable:
        """Tabulate ``f(i)`` or ``f(i, j)`` on unsigned index grids.

        ``f`` is called once with int64 index arrays of shape ``(2**a,)`` (and
        ``(2**a, 2**b)`` for two inputs) and must return integers broadcastable to
        ``batch_shape + grid``; negative results are stored in two's complement.
        """
        a, b = in_widths
        if b == 0:
            vals = np.asarray(f(np.arange(1 << a, dtype=np.int64)))
        else:
            i, j = np.meshgrid(np.arange(1 << a, dtype=np.int64), np.arange(1 << b, dtype=np.int64), indexing="ij")
            vals = np.asarray(f(i, j))
            vals = vals.reshape(vals.shape[:-2] + (1 << (a + b),))
        vals = np.broadcast_to(vals, tuple(batch_shape) + (1 << (a + b),))
        return cls(RingArray.wrap(np.ascontiguousarray(vals, dtype=np.int64), out_width), (a, b))


def _signed(idx: np.ndarray, width: int) -> np.ndarray:
    half = 1 << (width - 1)
    return np.where(idx >= half, idx - (1 << width), idx)


def floor_clip(values, lo: int, hi: int) -> np.ndarray:
    out = np.floor(np.asarray(values, dtype=np.float64))
    return np.clip(out, lo, hi).astype(np.int64)


# -- conversion and activation tables ----------------------------------------


def conversion_table(in_width: int, out_width: int, signed: bool = False, scale: int = 1) -> PlainTable:
    """T(i) = scale * i over the wide ring; ``signed`` sign-extends the narrow value first."""
    if out_width < in_width:
        raise DomainError("conversion must widen the ring")

    def f(i):
        v = _signed(i, in_width) if signed else i
        return v * int(scale)

    return PlainTable.from_function(f, (in_width, 0), out_width)


def relu_table(in_width: int = 4, out_width: int = 16) -> PlainTable:
    return PlainTable.from_function(lambda i: np.maximum(_signed(i, in_width), 0), (in_width, 0), out_width)


def max_table(width: int = 4, signed: bool = False) -> PlainTable:
    """T(x||y) = max(x, y), comparing two's-complement values when ``signed``."""
    if signed:
        return PlainTable.from_function(lambda i, j: np.maximum(_signed(i, width), _signed(j, width)),
                                        (width, width), width)
    return PlainTable.from_function(np.maximum, (width, width), width)


def exp_table(s_x: float, in_width: int = 4, out_width: int = 8) -> PlainTable:
    """Quantized exp of the non-positive difference x_i - x_max.

    Index d is the ring representative of the difference: d = 0 maps to 15
    (e**0 saturated into four bits), d >= 1 encodes d - 2**in_width.
    """
    n = 1 << in_width
    vals = np.empty(n, dtype=np.int64)
    vals[0] = 15
    for d in range(1, n):
        vals[d] = min(15, max(0, math.floor(16.0 * math.exp(s_x * (d - n)))))
    return PlainTable(RingArray.wrap(vals, out_width), (in_width, 0))


def softmax_division_table(kappa: int = 2, den_width: int = 8) -> PlainTable:
    """T(u||D) = clip(floor(16*u / (2**kappa * floor(D / 2**kappa))), 0, 15).

    The denominator slot takes the whole ``den_width``-bit sum, so the window of
    significant bits is chosen inside the table instead of by share-local
    truncation; a zero effective denominator saturates to 15.
    """
    def f(u, d):
        den = (d >> kappa) << kappa
        safe = np.where(den == 0, 1, den)
        q = (16 * u) // safe
        return np.where(den == 0, 15, np.minimum(q, 15))

    return PlainTable.from_function(f, (4, den_width), 4)


def softmax_mid_division_table(kappa: int = 2) -> PlainTable:
    """4x4 variant indexed by the extracted middle nibble v = floor(D / 2**kappa) mod 16."""
    def f(u, v):
        den = v << kappa
        safe = np.where(den == 0, 1, den)
        return np.where(den == 0, 15, np.minimum((16 * u) // safe, 15))

    return PlainTable.from_function(f, (4, 4), 4)


def layernorm_table(gamma, beta, s_x: float, s_var: float, s_out: float, eps: float,
                    centered_width: int = 5, var_width: int = 4) -> PlainTable:
    """Per-channel T(c||v) = clip(floor((gamma*c*s_x/sqrt(v*s_var+eps) + beta)/s_out), -8, 7).

    ``c`` is the signed centered value x - mean (``centered_width`` bits) and ``v``
    the unsigned quantized variance.  One table per channel along the batch axis.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)

    def f(c, v):
        cs = _signed(c, centered_width).astype(np.float64) * s_x
        den = np.sqrt(v.astype(np.float64) * s_var + eps)
        val = (gamma[:, None, None] * cs / den + beta[:, None, None]) / s_out
        return floor_clip(val, -8, 7)

    return PlainTable.from_function(f, (centered_width, var_width), 4, batch_shape=gamma.shape)
