"""Bit-exact wire format.

Elements of width 1, 2 or 4 bits are packed densely (LSB first) so that two 4-bit
values share one byte; widths 3 and 5..8 occupy one slot of the next supported
size; wider elements take ceil(width/8) little-endian bytes each.

A frame is ``u32 length || u16 session || u16 tag || u32 sequence || payload``,
all little-endian, where ``length`` covers header and payload.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from ..errors import ProtocolDesyncError, StructuralError
from ..ring import RingArray, ring_mask

HEADER = struct.Struct("<HHI")
LENGTH = struct.Struct("<I")
HEADER_BYTES = HEADER.size  # 8
FRAME_OVERHEAD = LENGTH.size + HEADER.size


def element_bits(width: int) -> int:
    if width <= 0:
        raise StructuralError("width must be positive")
    if width <= 4:
        return 1 << (width - 1).bit_length()  # 1, 2, 4
    return 8 * ((width + 7) // 8)


def packed_size(count: int, width: int) -> int:
    """Bytes occupied by ``count`` elements of ``width`` bits."""
    return (count * element_bits(width) + 7) // 8


def pack(arr: RingArray) -> bytes:
    flat = arr.value.ravel()
    eb = element_bits(arr.width)
    if eb < 8:
        per = 8 // eb
        pad = (-len(flat)) % per
        if pad:
            flat = np.concatenate([flat, np.zeros(pad, dtype=np.uint64)])
        lanes = flat.reshape(-1, per).astype(np.uint8)
        shifts = (np.arange(per, dtype=np.uint8) * eb).astype(np.uint8)
        out = np.bitwise_or.reduce(lanes << shifts, axis=1).astype(np.uint8)
        return out.tobytes()
    nbytes = eb // 8
    raw = flat.astype("<u8").view(np.uint8).reshape(-1, 8)[:, :nbytes]
    return np.ascontiguousarray(raw).tobytes()


def unpack(data: bytes, shape, width: int) -> RingArray:
    count = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
    if len(data) != packed_size(count, width):
        raise ProtocolDesyncError(f"payload of {len(data)} bytes does not hold {count} x {width}-bit elements")
    eb = element_bits(width)
    buf = np.frombuffer(data, dtype=np.uint8)
    if eb < 8:
        per = 8 // eb
        shifts = (np.arange(per, dtype=np.uint8) * eb).astype(np.uint8)
        lanes = (buf[:, None] >> shifts) & np.uint8((1 << eb) - 1)
        flat = lanes.ravel()[:count].astype(np.uint64)
    else:
        nbytes = eb // 8
        wide = np.zeros((count, 8), dtype=np.uint8)
        wide[:, :nbytes] = buf.reshape(count, nbytes)
        flat = wide.view("<u8").ravel().astype(np.uint64)
    flat &= ring_mask(width)
    return RingArray._raw(flat.reshape(shape), width)


def pack_segments(arrays: Sequence[RingArray]) -> bytes:
    return b"".join(pack(a) for a in arrays)


def unpack_segments(data: bytes, layout: Sequence[tuple[tuple[int, ...], int]]) -> list[RingArray]:
    out, pos = [], 0
    for shape, width in layout:
        count = int(np.prod(shape, dtype=np.int64)) if tuple(shape) != () else 1
        n = packed_size(count, width)
        out.append(unpack(data[pos : pos + n], tuple(shape), width))
        pos += n
    if pos != len(data):
        raise ProtocolDesyncError(f"payload has {len(data) - pos} trailing bytes")
    return out


def encode_frame(session: int, tag: int, seq: int, payload: bytes) -> bytes:
    return LENGTH.pack(HEADER_BYTES + len(payload)) + HEADER.pack(session, tag, seq) + payload


def decode_frame(frame: bytes) -> tuple[int, int, int, bytes]:
    """Inverse of :func:`encode_frame`, for a complete frame including the length prefix."""
    (length,) = LENGTH.unpack_from(frame, 0)
    if length != len(frame) - LENGTH.size:
        raise ProtocolDesyncError("frame length prefix does not match frame size")
    session, tag, seq = HEADER.unpack_from(frame, LENGTH.size)
    return session, tag, seq, frame[FRAME_OVERHEAD:]
