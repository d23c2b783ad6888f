"""Integers modulo 2**width, stored as uint64 numpy arrays.

A :class:`RingArray` of shape ``()`` is a single ring element; any other shape is
a vector or matrix of elements sharing one width.  uint64 arithmetic wraps modulo
2**64, so reducing with a bit mask afterwards gives the exact result for every
width up to 64.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import DomainError, StructuralError

MAX_WIDTH = 64


def _wrapping():
    # 0-d operands go through numpy scalar arithmetic, which warns on the intended wraparound
    return np.errstate(over="ignore")


def ring_mask(width: int) -> np.uint64:
    if not 1 <= width <= MAX_WIDTH:
        raise StructuralError(f"ring width must be in [1, {MAX_WIDTH}], got {width}")
    return np.uint64((1 << width) - 1)


class RingArray:
    """Elements of Z_{2^width} with two's-complement signed interpretation."""

    __slots__ = ("value", "width")

    def __init__(self, value, width: int):
        mask = ring_mask(width)
        arr = np.asarray(value)
        if arr.dtype != np.uint64:
            if arr.dtype.kind == "O" or arr.dtype.kind == "f":
                raise StructuralError(f"ring values must be integers, got dtype {arr.dtype}")
            if arr.dtype.kind == "i" and arr.size and arr.min() < 0:
                raise DomainError("negative value given for an unsigned ring element; use from_signed")
            arr = arr.astype(np.uint64)
        if arr.size and (arr & ~mask).any():
            raise DomainError(f"value does not fit in {width} bits")
        self.value = arr
        self.width = width

    @classmethod
    def _raw(cls, value: np.ndarray, width: int) -> RingArray:
        # trusted constructor: value already uint64 and reduced
        obj = cls.__new__(cls)
        obj.value = value
        obj.width = width
        return obj

    @classmethod
    def wrap(cls, value, width: int) -> RingArray:
        """Reduce arbitrary (possibly negative) integers modulo 2**width."""
        arr = np.asarray(value)
        if arr.dtype.kind == "O":
            arr = np.array([int(v) % (1 << width) for v in arr.ravel()], dtype=np.uint64).reshape(arr.shape)
        elif arr.dtype.kind == "i":
            arr = arr.astype(np.int64).view(np.uint64)
        else:
            arr = arr.astype(np.uint64)
        return cls._raw(arr & ring_mask(width), width)

    @classmethod
    def from_signed(cls, value, width: int) -> RingArray:
        arr = np.asarray(value, dtype=np.int64)
        lo, hi = -(1 << (width - 1)), (1 << (width - 1))
        if arr.size and (arr.min() < lo or arr.max() >= hi):
            raise DomainError(f"signed value outside [{lo}, {hi}) for width {width}")
        return cls.wrap(arr, width)

    @classmethod
    def zeros(cls, shape, width: int) -> RingArray:
        ring_mask(width)
        return cls._raw(np.zeros(shape, dtype=np.uint64), width)

    # -- views -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def signed(self) -> np.ndarray:
        """Two's-complement decoding as int64."""
        v = self.value.astype(np.int64) if self.width < 64 else self.value.view(np.int64)
        if self.width == 64:
            return v.copy()
        half = 1 << (self.width - 1)
        return np.where(v >= half, v - (1 << self.width), v)

    def unsigned(self) -> np.ndarray:
        return self.value.copy()

    def __int__(self) -> int:
        if self.value.shape != ():
            raise StructuralError("int() needs a scalar ring element")
        return int(self.value)

    def __getitem__(self, idx) -> RingArray:
        return RingArray._raw(np.asarray(self.value[idx]), self.width)

    def reshape(self, *shape) -> RingArray:
        return RingArray._raw(self.value.reshape(*shape), self.width)

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"RingArray({self.value.tolist()!r}, width={self.width})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, RingArray):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.value, other.value)

    __hash__ = None  # type: ignore[assignment]

    # -- arithmetic ------------------------------------------------------
    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, RingArray):
            if other.width != self.width:
                raise StructuralError(f"width mismatch: {self.width} vs {other.width}")
            return other.value
        arr = np.asarray(other)
        if arr.dtype.kind in "iu" or isinstance(other, int):
            return RingArray.wrap(arr, self.width).value
        raise StructuralError(f"cannot combine ring element with {type(other).__name__}")

    def __add__(self, other) -> RingArray:
        with _wrapping():
            return RingArray._raw((self.value + self._coerce(other)) & ring_mask(self.width), self.width)

    __radd__ = __add__

    def __sub__(self, other) -> RingArray:
        with _wrapping():
            return RingArray._raw((self.value - self._coerce(other)) & ring_mask(self.width), self.width)

    def __rsub__(self, other) -> RingArray:
        with _wrapping():
            return RingArray._raw((self._coerce(other) - self.value) & ring_mask(self.width), self.width)

    def __mul__(self, other) -> RingArray:
        with _wrapping():
            return RingArray._raw((self.value * self._coerce(other)) & ring_mask(self.width), self.width)

    __rmul__ = __mul__

    def __neg__(self) -> RingArray:
        with _wrapping():
            return RingArray._raw((np.uint64(0) - self.value) & ring_mask(self.width), self.width)

    def __matmul__(self, other: RingArray) -> RingArray:
        return RingArray._raw(np.matmul(self.value, self._coerce(other)) & ring_mask(self.width), self.width)

    def sum(self, axis=None) -> RingArray:
        return RingArray._raw(np.asarray(self.value.sum(axis=axis, dtype=np.uint64)) & ring_mask(self.width), self.width)

    # -- width changes ---------------------------------------------------
    def trc(self, k: int) -> RingArray:
        """Keep the k most significant bits."""
        if not 1 <= k <= self.width:
            raise DomainError(f"cannot keep {k} bits of a {self.width}-bit element")
        return RingArray._raw(self.value >> np.uint64(self.width - k), k)

    def low(self, k: int) -> RingArray:
        """Reduce modulo 2**k (exact on additive shares: no carry term)."""
        if not 1 <= k <= self.width:
            raise DomainError(f"cannot keep {k} low bits of a {self.width}-bit element")
        return RingArray._raw(self.value & ring_mask(k), k)

    def bits(self, start: int, k: int) -> RingArray:
        """floor(x / 2**start) mod 2**k."""
        if start < 0 or start + k > self.width:
            raise DomainError(f"bit window [{start}, {start + k}) outside width {self.width}")
        return RingArray._raw((self.value >> np.uint64(start)) & ring_mask(k), k)

    def astype_width(self, width: int) -> RingArray:
        """Zero-extend (or reduce) the unsigned representative into another ring."""
        return RingArray._raw(self.value & ring_mask(width), width)


def concatenate(parts: Iterable[RingArray], axis: int = 0) -> RingArray:
    parts = list(parts)
    width = parts[0].width
    if any(p.width != width for p in parts):
        raise StructuralError("cannot concatenate ring arrays of different widths")
    return RingArray._raw(np.concatenate([p.value for p in parts], axis=axis), width)


def stack(parts: Iterable[RingArray], axis: int = 0) -> RingArray:
    parts = list(parts)
    width = parts[0].width
    if any(p.width != width for p in parts):
        raise StructuralError("cannot stack ring arrays of different widths")
    return RingArray._raw(np.stack([p.value for p in parts], axis=axis), width)


def ring_arith(a: RingArray, b, op: str) -> RingArray:
    """Elementwise ring operation; ``op`` is one of add, sub, mul, const_mul."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op in ("mul", "const_mul"):
        if op == "mul" and not isinstance(b, RingArray):
            raise StructuralError("mul expects two ring elements; use const_mul for public integers")
        return a * b
    raise StructuralError(f"unknown ring op {op!r}")


def encode_signed(v, width: int) -> RingArray:
    return RingArray.from_signed(v, width)


def decode_signed(e: RingArray):
    out = e.signed()
    return int(out) if out.shape == () else out


def trc(x: RingArray, k: int) -> RingArray:
    return x.trc(k)
