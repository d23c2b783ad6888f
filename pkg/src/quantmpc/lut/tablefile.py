"""Binary persistence of one party's offline material.

Table file layout (little-endian)::

    magic "QLUT" | u8 version | u8 party | u8 in_width_a | u8 in_width_b | u8 out_width
    | u8 shared_slot (255 = none) | u8 ndim | u32 dims[ndim] | u64 count
    | packed entry shares | packed offset shares (one block per slot)

P0 stores no entry shares, only its dealer offsets.  Ring arrays use the
transport packing, so a file's size is predictable from its header.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from ..errors import ModelFormatError
from ..ring import RingArray
from ..sharing import AdditiveShare, RssShare
from ..transport.wire import pack, packed_size, unpack
from .protocol import ShiftedTable
from .tables import TableLayout

TABLE_MAGIC = b"QLUT"
ARRAY_MAGIC = b"QARR"
VERSION = 1


def _read(f: BinaryIO, n: int, what: str) -> bytes:
    pos = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise ModelFormatError(f"truncated {what}", pos)
    return data


def write_array(f: BinaryIO, arr: RingArray) -> None:
    f.write(ARRAY_MAGIC + struct.pack("<BB", arr.width, len(arr.shape)))
    f.write(struct.pack(f"<{len(arr.shape)}I", *arr.shape))
    f.write(pack(arr))


def read_array(f: BinaryIO) -> RingArray:
    pos = f.tell()
    if _read(f, 4, "array magic") != ARRAY_MAGIC:
        raise ModelFormatError("bad array magic", pos)
    width, ndim = struct.unpack("<BB", _read(f, 2, "array header"))
    shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, "array shape"))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    return unpack(_read(f, packed_size(count, width), "array data"), tuple(shape), width)


def write_table(f: BinaryIO, st: ShiftedTable, party: int) -> None:
    lay = st.layout
    shared = 255 if lay.shared_slot is None else lay.shared_slot
    f.write(TABLE_MAGIC)
    f.write(struct.pack("<BBBBBBB", VERSION, party, lay.in_widths[0], lay.in_widths[1], lay.out_width, shared,
                        len(lay.batch_shape)))
    f.write(struct.pack(f"<{len(lay.batch_shape)}I", *lay.batch_shape))
    f.write(struct.pack("<Q", lay.count))
    if party == 0:
        for d in st.dealer_offsets or []:
            f.write(pack(d))
        return
    f.write(pack(st.entries.component))
    for off in st.offsets:
        f.write(pack(off.component))


def read_table(f: BinaryIO) -> ShiftedTable:
    pos = f.tell()
    if _read(f, 4, "table magic") != TABLE_MAGIC:
        raise ModelFormatError("bad table magic", pos)
    version, party, a, b, out_w, shared, ndim = struct.unpack("<BBBBBBB", _read(f, 7, "table header"))
    if version != VERSION:
        raise ModelFormatError(f"unsupported table file version {version}", pos + 4)
    batch = tuple(struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, "batch shape")))
    (count,) = struct.unpack("<Q", _read(f, 8, "table count"))
    layout = TableLayout(batch, (a, b), out_w, None if shared == 255 else shared)
    if count != layout.count:
        raise ModelFormatError("table count disagrees with batch shape", pos)

    def block(shape, width, what):
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        return unpack(_read(f, packed_size(n, width), what), tuple(shape), width)

    st = ShiftedTable(layout)
    slots = range(layout.slots)
    if party == 0:
        st.dealer_offsets = [block(layout.slot_shape(s), layout.in_widths[s], "dealer offsets") for s in slots]
        return st
    st.entries = AdditiveShare(block(batch + (layout.size,), out_w, "entry shares"), party)
    st.offsets = [AdditiveShare(block(layout.slot_shape(s), layout.in_widths[s], "offset shares"), party)
                  for s in slots]
    return st


def write_rss(f: BinaryIO, share: RssShare) -> None:
    write_array(f, share.nxt)
    write_array(f, share.prv)


def read_rss(f: BinaryIO, party: int) -> RssShare:
    return RssShare(read_array(f), read_array(f), party)
