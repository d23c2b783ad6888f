"""How sharing one random offset across a group of lookups shrinks what must be opened.

Each softmax row divides k exponentials by the same denominator.  With an
ungrouped layout every lookup opens its own masked numerator and masked
denominator (2k elements); with a shared slot the denominator is opened once
(k + 1 elements).

Run:  python3 demos/offset_group_saving.py
"""

import numpy as np

from quantmpc.lut import Dealer, OpenBatch, PlainTable, TableLayout
from quantmpc.ring import RingArray
from quantmpc.sharing import AdditiveShare, reveal2
from quantmpc.transport import run_local


def split(ctx, values, width, seed):
    """Additive shares of public demo values for P1 and P2 (P0 holds nothing)."""
    values = np.asarray(values)
    mask = np.random.default_rng(seed).integers(0, 1 << width, values.shape)
    if ctx.id == 0:
        return None
    data = mask if ctx.id == 1 else values - mask
    return AdditiveShare(RingArray.wrap(data, width), ctx.id)


def opened_elements(k: int, grouped: bool) -> tuple[int, np.ndarray]:
    layout = TableLayout((k,), (4, 8), 4, shared_slot=1 if grouped else None)
    divide = PlainTable.from_function(lambda num, den: (15 * num) // np.maximum(den, 1) % 16, (4, 8), 4, (k,))
    seen = {}

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        table = dealer.table(layout, divide if ctx.id == 0 else None)
        dealer.flush()
        ctx.set_phase("online")
        batch = OpenBatch(ctx)
        denominator = split(ctx, 40 if grouped else np.full(k, 40), 8, seed=1)
        batch.add_table(table, split(ctx, np.arange(k) % 16, 4, seed=2), denominator)
        seen[ctx.id] = batch.opened_elements()
        return batch.run()[0]

    results, _, _ = run_local(program, 3)
    return seen[1], reveal2(results[1:]).unsigned()


for k in (2, 4, 8, 16):
    grouped, out_grouped = opened_elements(k, True)
    separate, out_separate = opened_elements(k, False)
    assert (out_grouped == out_separate).all()
    print(f"k={k:>2}: opened {grouped:>2} grouped vs {separate:>2} separate "
          f"({1 - grouped / separate:.0%} fewer), outputs identical: {out_grouped.tolist()}")
