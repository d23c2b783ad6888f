"""Offset-shifted lookup tables: dealer side and evaluator side.

Offline, P0 rotates each table by secret offsets and secret-shares the rotated
entries and the offsets between P1 and P2.  The P1 component of everything is
drawn from the P0-P1 seed, so only the P2 components travel.  Online, P1 and P2
open ``x - offset`` per input slot and index their entry shares with it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import StateError, StructuralError
from ..ring import RingArray
from ..sharing import AdditiveShare, RssShare
from ..transport import tags
from ..transport.party import PartyContext
from .tables import PlainTable, TableLayout

OFFLINE_STREAM = "offline"
RESHARE_STREAM = "reshare"


@dataclass
class ShiftedTable:
    """One party's view of a batch of rotated, secret-shared tables.

    P1/P2 hold ``entries`` and ``offsets`` (one additive share per input slot);
    P0 keeps only ``dealer_offsets``.  Single use: evaluating twice would reveal
    the difference of the two inputs.
    """

    layout: TableLayout
    entries: AdditiveShare | None = None
    offsets: list = field(default_factory=list)
    dealer_offsets: list | None = None
    consumed: bool = False

    @property
    def in_widths(self) -> tuple[int, int]:
        return self.layout.in_widths

    def consume(self) -> None:
        if self.consumed:
            raise StateError("shifted table already consumed; reuse would leak the input difference")
        self.consumed = True


def rotate_entries(entries: np.ndarray, layout: TableLayout, offsets: Sequence[np.ndarray]) -> np.ndarray:
    """Entry at index i*2**b + j becomes T(((i+D) mod 2**a) * 2**b + ((j+D') mod 2**b))."""
    a, b = layout.in_widths
    size = layout.size
    pos = np.arange(size, dtype=np.int64)
    i, j = pos >> b, pos & ((1 << b) - 1)

    def expand(slot: int) -> np.ndarray:
        d = np.asarray(offsets[slot], dtype=np.int64)
        if slot == layout.shared_slot:
            d = d[..., None]
        return d[..., None]

    src = ((i + expand(0)) & ((1 << a) - 1)) << b
    if b:
        src = src | ((j + expand(1)) & ((1 << b) - 1))
    full = np.broadcast_to(entries, layout.batch_shape + (size,))
    src = np.broadcast_to(src, layout.batch_shape + (size,))
    return np.take_along_axis(full, src, axis=-1)


class Dealer:
    """Collects offline material and distributes it in one round on ``flush``.

    Every party calls the same methods in the same order; P0 passes the secret
    values, P1/P2 pass ``None``.  P2's components arrive only at ``flush``.
    """

    def __init__(self, ctx: PartyContext, purpose: str = OFFLINE_STREAM):
        self.ctx = ctx
        self.purpose = purpose
        self._p2_payload: list[RingArray] = []
        self._p2_layout: list[tuple] = []
        self._p2_slots: list[AdditiveShare] = []
        self._rss_payload: list[RingArray] = []
        self._rss_layout: list[tuple] = []
        self._rss_slots: list[tuple[RssShare, str]] = []

    # -- two-party dealer sharing ------------------------------------------
    def share2(self, value: RingArray | None, shape, width: int) -> AdditiveShare | None:
        ctx, shape = self.ctx, tuple(shape)
        if ctx.id == 0:
            if value is None or value.width != width or value.shape != shape:
                raise StructuralError("dealer value does not match the declared shape/width")
            r = ctx.prg(1, self.purpose).ring(shape, width)
            self._p2_payload.append(value - r)
            self._p2_layout.append((shape, width))
            return None
        if ctx.id == 1:
            self._p2_layout.append((shape, width))
            return AdditiveShare(ctx.prg(0, self.purpose).ring(shape, width), 1)
        self._p2_layout.append((shape, width))
        slot = AdditiveShare(RingArray.zeros(shape, width), 2)
        self._p2_slots.append(slot)
        return slot

    # -- replicated dealer sharing -----------------------------------------
    def rss(self, value: RingArray | None, shape, width: int) -> RssShare:
        """P0 shares ``value`` replicated; components 1 and 2 come from seeds, component 0 is sent."""
        ctx, shape = self.ctx, tuple(shape)
        self._rss_layout.append((shape, width))
        if ctx.id == 0:
            if value is None or value.width != width or value.shape != shape:
                raise StructuralError("dealer value does not match the declared shape/width")
            c1 = ctx.prg(2, self.purpose).ring(shape, width)
            c2 = ctx.prg(1, self.purpose).ring(shape, width)
            self._rss_payload.append(value - c1 - c2)
            return RssShare(c1, c2, 0)
        placeholder = RingArray.zeros(shape, width)
        if ctx.id == 1:
            share = RssShare(ctx.prg(0, self.purpose).ring(shape, width), placeholder, 1)
            self._rss_slots.append((share, "prv"))
        else:
            share = RssShare(placeholder, ctx.prg(0, self.purpose).ring(shape, width), 2)
            self._rss_slots.append((share, "nxt"))
        return share

    # -- shifted tables ----------------------------------------------------
    def table(self, layout: TableLayout, plain: PlainTable | None = None, offsets=None) -> ShiftedTable:
        """Rotate ``plain`` by fresh offsets (or the given ones) and share it.

        ``offsets`` overrides the random offsets at P0 (used to test fixed shifts).
        """
        ctx = self.ctx
        st = ShiftedTable(layout)
        dealer_vals = [None] * layout.slots
        rotated = None
        if ctx.id == 0:
            if plain is None:
                raise StructuralError("the dealer must supply the plain table")
            if plain.in_widths != layout.in_widths or plain.out_width != layout.out_width:
                raise StructuralError("plain table does not match the layout")
            try:
                fits = np.broadcast_shapes(plain.batch_shape, layout.batch_shape) == layout.batch_shape
            except ValueError:
                fits = False
            if not fits:
                raise StructuralError(f"table batch {plain.batch_shape} does not fit layout {layout.batch_shape}")
            for s in range(layout.slots):
                shape, w = layout.slot_shape(s), layout.in_widths[s]
                if offsets is not None:
                    d = np.asarray(offsets[s], dtype=np.int64)
                    if d.shape != shape:
                        raise StructuralError(
                            f"offsets for slot {s} have shape {d.shape}, expected {shape} "
                            "(tables of one offset group share a single offset)"
                        )
                    dealer_vals[s] = RingArray.wrap(d, w)
                else:
                    dealer_vals[s] = ctx.private("table-offsets").ring(shape, w)
            rotated = RingArray._raw(
                np.ascontiguousarray(rotate_entries(plain.entries.value, layout, [d.value for d in dealer_vals])),
                layout.out_width,
            )
            st.dealer_offsets = dealer_vals
        st.entries = self.share2(rotated, layout.batch_shape + (layout.size,), layout.out_width)
        st.offsets = [
            self.share2(dealer_vals[s], layout.slot_shape(s), layout.in_widths[s]) for s in range(layout.slots)
        ]
        return st

    def pending(self) -> bool:
        return bool(self._p2_layout or self._rss_layout)

    def flush(self) -> None:
        if not self.pending():
            return
        ctx = self.ctx
        with ctx.round():
            if ctx.id == 0:
                if self._p2_layout:
                    ctx.send(2, tags.OFFLINE_TABLES, self._p2_payload)
                if self._rss_layout:
                    ctx.send(1, tags.OFFLINE_RSS, self._rss_payload)
                    ctx.send(2, tags.OFFLINE_RSS, self._rss_payload)
            if ctx.id == 2 and self._p2_layout:
                for slot, arr in zip(self._p2_slots, ctx.recv(0, tags.OFFLINE_TABLES, self._p2_layout)):
                    slot.component = arr
            if ctx.id in (1, 2) and self._rss_layout:
                for (share, attr), arr in zip(self._rss_slots, ctx.recv(0, tags.OFFLINE_RSS, self._rss_layout)):
                    setattr(share, attr, arr)
        self._p2_payload, self._p2_layout, self._p2_slots = [], [], []
        self._rss_payload, self._rss_layout, self._rss_slots = [], [], []


def gen_table(ctx: PartyContext, layout: TableLayout, plain: PlainTable | None = None, offsets=None) -> ShiftedTable:
    """Deal one batch of tables in its own offline round."""
    dealer = Dealer(ctx)
    st = dealer.table(layout, plain, offsets)
    dealer.flush()
    return st


def gen_table_single(ctx, plain: PlainTable | None, layout: TableLayout | None = None, offsets=None) -> ShiftedTable:
    layout = layout or plain.layout()
    if layout.slots != 1:
        raise StructuralError("gen_table_single needs a single-input table")
    return gen_table(ctx, layout, plain, offsets)


def gen_table_two(ctx, plain: PlainTable | None, layout: TableLayout | None = None, offsets=None) -> ShiftedTable:
    layout = layout or plain.layout()
    if layout.slots != 2:
        raise StructuralError("gen_table_two needs a two-input table")
    return gen_table(ctx, layout, plain, offsets)


# -- online evaluation --------------------------------------------------------


def lut_prepare(ctx: PartyContext, st: ShiftedTable, inputs: Sequence[AdditiveShare | None]):
    """Blind the inputs; returns (values to open, their (shape, width) layout)."""
    layout = st.layout
    if len(inputs) != layout.slots:
        raise StructuralError(f"table takes {layout.slots} input(s), got {len(inputs)}")
    st.consume()
    to_open, open_layout = [], []
    for s, x in enumerate(inputs):
        shape, w = layout.slot_shape(s), layout.in_widths[s]
        open_layout.append((shape, w))
        if ctx.id == 0:
            to_open.append(None)
            continue
        if x.width != w:
            raise StructuralError(f"input {s} has width {x.width}, table expects {w}")
        if tuple(x.shape) != shape:
            raise StructuralError(f"input {s} has shape {x.shape}, table expects {shape}")
        to_open.append(x - st.offsets[s])
    return to_open, open_layout


def lut_finish(ctx: PartyContext, st: ShiftedTable, opened: Sequence[RingArray] | None) -> AdditiveShare | None:
    """Index the entry shares with the opened deltas."""
    if ctx.id == 0:
        return None
    layout = st.layout
    a, b = layout.in_widths
    d0 = opened[0].value.astype(np.int64)
    if layout.shared_slot == 0:
        d0 = d0[..., None]
    idx = d0 << b
    if b:
        d1 = opened[1].value.astype(np.int64)
        if layout.shared_slot == 1:
            d1 = d1[..., None]
        idx = idx | d1
    ent = st.entries.component
    if layout.batch_shape:
        idx = np.broadcast_to(idx, layout.batch_shape)
        out = np.take_along_axis(ent.value, idx[..., None], axis=-1)[..., 0]
    else:
        out = ent.value[idx]
    return AdditiveShare(RingArray._raw(np.asarray(out), ent.width), ctx.id)


class OpenBatch:
    """Gathers blinded values from several protocols so they share one round."""

    def __init__(self, ctx: PartyContext):
        self.ctx = ctx
        self.values: list = []
        self.layout: list = []
        self._jobs: list = []

    def add_table(self, st: ShiftedTable, *inputs) -> int:
        to_open, lay = lut_prepare(self.ctx, st, inputs)
        start = len(self.values)
        self.values.extend(to_open)
        self.layout.extend(lay)
        self._jobs.append(("table", st, start, len(lay)))
        return len(self._jobs) - 1

    def add_value(self, share: AdditiveShare | None, shape, width: int) -> int:
        start = len(self.values)
        self.values.append(share)
        self.layout.append((tuple(shape), width))
        self._jobs.append(("value", None, start, 1))
        return len(self._jobs) - 1

    def run(self, label: str = "lut") -> list:
        """Open everything in one round; returns one result per job (table output or opened value)."""
        opened = self.ctx.open(self.values, self.layout, label=label) if self.values else []
        out = []
        for kind, st, start, n in self._jobs:
            vals = None if opened is None else opened[start : start + n]
            if kind == "table":
                out.append(lut_finish(self.ctx, st, vals))
            else:
                out.append(None if vals is None else vals[0])
        return out

    def opened_elements(self) -> int:
        return sum(int(np.prod(shape, dtype=np.int64)) if shape else 1 for shape, _ in self.layout)


def eval_tables(ctx: PartyContext, jobs: Sequence[tuple]) -> list:
    """Evaluate several (table, *inputs) jobs with their opens batched into one round."""
    batch = OpenBatch(ctx)
    for st, *inputs in jobs:
        batch.add_table(st, *inputs)
    return batch.run()


def eval_single(ctx: PartyContext, st: ShiftedTable, x: AdditiveShare | None) -> AdditiveShare | None:
    if st.layout.slots != 1:
        raise StructuralError("eval_single needs a single-input table")
    return eval_tables(ctx, [(st, x)])[0]


def eval_two(ctx: PartyContext, st: ShiftedTable, x, y) -> AdditiveShare | None:
    if st.layout.slots != 2:
        raise StructuralError("eval_two needs a two-input table")
    return eval_tables(ctx, [(st, x, y)])[0]


def eval_group(ctx: PartyContext, st: ShiftedTable, shared, others) -> AdditiveShare | None:
    """Evaluate an offset group: ``shared`` is opened once for all tables on the last batch axis."""
    if st.layout.shared_slot is None:
        raise StructuralError("table batch was not dealt as an offset group")
    inputs = [others, shared] if st.layout.shared_slot == 1 else [shared, others]
    return eval_tables(ctx, [(st, *inputs)])[0]


# -- share conversion -----------------------------------------------------------


def convert_up(ctx: PartyContext, st: ShiftedTable, x: AdditiveShare | None) -> AdditiveShare | None:
    """Widen a two-party share with a conversion table (identity or sign extension)."""
    return eval_single(ctx, st, x)


@dataclass
class _Reshare:
    c1: RingArray | None
    c2: RingArray | None


def reshare_prepare(ctx: PartyContext, x: AdditiveShare | None, shape, width: int):
    """First half of turning P1/P2 additive shares into replicated shares.

    P0 and P1 derive component 2, P0 and P2 derive component 1; the holders
    blind their additive shares with them and the sum of the two blinded values
    is component 0.  Returns (state, value to open).
    """
    shape = tuple(shape)
    if ctx.id == 0:
        c1 = ctx.prg(2, RESHARE_STREAM).ring(shape, width)
        c2 = ctx.prg(1, RESHARE_STREAM).ring(shape, width)
        return _Reshare(c1, c2), None
    if ctx.id == 1:
        c2 = ctx.prg(0, RESHARE_STREAM).ring(shape, width)
        return _Reshare(None, c2), AdditiveShare(x.component - c2, 1)
    c1 = ctx.prg(0, RESHARE_STREAM).ring(shape, width)
    return _Reshare(c1, None), AdditiveShare(x.component - c1, 2)


def reshare_finish(ctx: PartyContext, state: _Reshare, c0: RingArray | None) -> RssShare:
    if ctx.id == 0:
        return RssShare(state.c1, state.c2, 0)
    if ctx.id == 1:
        return RssShare(state.c2, c0, 1)
    return RssShare(c0, state.c1, 2)


def reshare(ctx: PartyContext, x: AdditiveShare | None, shape, width: int) -> RssShare:
    state, delta = reshare_prepare(ctx, x, shape, width)
    batch = OpenBatch(ctx)
    batch.add_value(delta, shape, width)
    (c0,) = batch.run(label="reshare")
    return reshare_finish(ctx, state, c0)


def convert_to_rss(ctx: PartyContext, st: ShiftedTable, x: AdditiveShare | None,
                   return_additive: bool = False):
    """Narrow two-party share -> wide replicated share: one table round plus one reshare round."""
    wide = convert_up(ctx, st, x)
    out = reshare(ctx, wide, st.layout.batch_shape, st.layout.out_width)
    return (out, wide) if return_additive else out


def convert_many(ctx: PartyContext, jobs: Sequence[tuple[ShiftedTable, AdditiveShare | None]]) -> list[RssShare]:
    """Several conversions sharing one table round and one reshare round."""
    wide = eval_tables(ctx, jobs)
    states, batch = [], OpenBatch(ctx)
    for (st, _), w in zip(jobs, wide):
        shape, width = st.layout.batch_shape, st.layout.out_width
        state, delta = reshare_prepare(ctx, w, shape, width)
        states.append(state)
        batch.add_value(delta, shape, width)
    opened = batch.run(label="reshare")
    return [reshare_finish(ctx, s, c0) for s, c0 in zip(states, opened)]
