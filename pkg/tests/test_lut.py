import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from quantmpc.errors import ModelFormatError, StateError, StructuralError
from quantmpc.lut import (
    Dealer,
    OpenBatch,
    PlainTable,
    TableLayout,
    conversion_table,
    convert_to_rss,
    convert_up,
    eval_group,
    eval_single,
    eval_two,
    max_table,
    relu_table,
    softmax_division_table,
)
from quantmpc.lut.tablefile import read_table, write_table
from quantmpc.ring import RingArray
from quantmpc.sharing import reveal2, reveal3
from quantmpc.transport import run_local

from conftest import additive_for


def identity_table(width=4, batch=()):
    return PlainTable.from_function(lambda i: i, (width, 0), width, batch)


def deal(plain, layout=None, offsets=None, seed=1):
    """Deal one table batch; returns (per-party ShiftedTables)."""
    layout = layout or plain.layout()

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(layout, plain if ctx.id == 0 else None, offsets)
        dealer.flush()
        return st_

    results, _, _ = run_local(program, seed)
    return results


def reconstructed_entries(tables):
    return reveal2([tables[1].entries, tables[2].entries]).unsigned()


def deal_and_eval(plain, xs, ys=None, layout=None, offsets=None, seed=1):
    """Deal then evaluate; returns (revealed outputs, stats)."""
    layout = layout or plain.layout()

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(layout, plain if ctx.id == 0 else None, offsets)
        dealer.flush()
        ctx.set_phase("online")
        x = additive_for(ctx, xs, layout.in_widths[0], seed=3)
        if layout.slots == 1:
            return eval_single(ctx, st_, x)
        y = additive_for(ctx, ys, layout.in_widths[1], seed=4)
        return eval_two(ctx, st_, x, y)

    results, stats, _ = run_local(program, seed)
    return reveal2(results[1:]), stats


# -- dealt tables ------------------------------------------------------------------


def test_zero_offset_gives_unrotated_table():
    plain = identity_table()
    tables = deal(plain, offsets=[np.array(0)])
    assert np.array_equal(reconstructed_entries(tables), np.arange(16))


def test_identity_table_rotates_by_every_offset():
    plain = identity_table(batch=(16,))
    tables = deal(plain, offsets=[np.arange(16)])
    got = reconstructed_entries(tables)
    expect = (np.arange(16)[None, :] + np.arange(16)[:, None]) % 16
    assert np.array_equal(got, expect)


def test_two_bit_table_has_four_entries():
    plain = PlainTable.from_function(lambda i: 3 - i, (2, 0), 2)
    tables = deal(plain)
    assert tables[1].entries.shape == (4,)


def test_two_input_rotation_exhaustive_over_offset_pairs():
    entries = np.random.default_rng(5).integers(0, 16, 16)
    plain = PlainTable(RingArray.wrap(np.broadcast_to(entries, (16, 16)).copy(), 4), (2, 2))
    dx, dy = np.divmod(np.arange(16), 4)
    tables = deal(plain, offsets=[dx, dy])
    got = reconstructed_entries(tables)
    i, j = np.divmod(np.arange(16), 4)
    for k in range(16):
        assert np.array_equal(got[k], entries[((i + dx[k]) % 4) * 4 + (j + dy[k]) % 4])


def test_two_input_zero_offsets_unpermuted():
    plain = max_table(2)
    tables = deal(plain, offsets=[np.array(0), np.array(0)])
    assert np.array_equal(reconstructed_entries(tables), plain.entries.unsigned())


def test_two_four_bit_inputs_have_256_entries():
    assert max_table(4).layout().size == 256


def test_dealer_rejects_mismatched_plain_table():
    def program(ctx):
        ctx.set_phase("offline")
        Dealer(ctx).table(TableLayout((), (4, 0), 8), relu_table(4, 16) if ctx.id == 0 else None)

    with pytest.raises(StructuralError):
        run_local(program, 1)


# -- evaluation ------------------------------------------------------------------------


def test_identity_lookup_returns_input():
    out, _ = deal_and_eval(identity_table(), 5)
    assert int(out.value) == 5


def test_relu_of_negative_is_zero():
    out, _ = deal_and_eval(relu_table(4, 16), 13)  # 13 encodes -3
    assert int(out.value) == 0


def test_single_input_exhaustive_inputs_and_offsets():
    plain = relu_table(4, 16)
    xs = np.tile(np.arange(16), 16)
    offsets = np.repeat(np.arange(16), 16)
    layout = TableLayout((256,), (4, 0), 16)
    out, _ = deal_and_eval(plain, xs, layout=layout, offsets=[offsets])
    assert np.array_equal(out.unsigned(), plain.lookup(xs).unsigned())


def test_two_input_exhaustive_inputs_and_offsets():
    plain = PlainTable(RingArray.wrap(np.random.default_rng(2).integers(0, 16, 16), 4), (2, 2))
    grid = np.array(np.meshgrid(np.arange(4), np.arange(4), np.arange(4), np.arange(4), indexing="ij")).reshape(4, -1)
    x, y, dx, dy = grid
    layout = TableLayout((256,), (2, 2), 4)
    out, _ = deal_and_eval(plain, x, y, layout=layout, offsets=[dx, dy])
    assert np.array_equal(out.unsigned(), plain.lookup(x, y).unsigned())


def test_random_four_by_four_triples():
    rng = np.random.default_rng(11)
    n = 1000
    plain = PlainTable(RingArray.wrap(rng.integers(0, 16, (n, 256)), 4), (4, 4))
    x, y = rng.integers(0, 16, n), rng.integers(0, 16, n)
    out, _ = deal_and_eval(plain, x, y)
    assert np.array_equal(out.unsigned(), plain.lookup(x, y).unsigned())


def test_max_table_lookup():
    out, _ = deal_and_eval(max_table(4), 3, 7)
    assert int(out.value) == 7


def test_division_table_lookup():
    out, _ = deal_and_eval(softmax_division_table(2, 8), 4, 8)
    assert int(out.value) == 8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 10_000))
def test_two_input_lookup_property(x, y, seed):
    plain = max_table(4, signed=True)
    out, _ = deal_and_eval(plain, x, y, seed=seed)
    assert out == plain.lookup(x, y)


def test_reusing_a_table_raises_state_error():
    plain = identity_table()

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(plain.layout(), plain if ctx.id == 0 else None)
        dealer.flush()
        ctx.set_phase("online")
        x = additive_for(ctx, 1, 4)
        eval_single(ctx, st_, x)
        eval_single(ctx, st_, x)

    with pytest.raises(StateError):
        run_local(program, 1)


# -- offset groups ---------------------------------------------------------------------


def group_opened_elements(k: int, grouped: bool) -> int:
    """Opened-element count for k division tables sharing one denominator."""
    plain = PlainTable.from_function(lambda u, d: (u + d) % 16, (4, 4), 4, (k,))
    layout = TableLayout((k,), (4, 4), 4, shared_slot=1 if grouped else None)
    counts = {}

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(layout, plain if ctx.id == 0 else None)
        dealer.flush()
        ctx.set_phase("online")
        u = additive_for(ctx, np.arange(k) % 16, 4)
        d = additive_for(ctx, 9 if grouped else np.full(k, 9), 4, seed=5)
        batch = OpenBatch(ctx)
        batch.add_table(st_, u, d)
        counts[ctx.id] = batch.opened_elements()
        (out,) = batch.run()
        return out

    results, _, _ = run_local(program, 4)
    assert np.array_equal(reveal2(results[1:]).unsigned(), (np.arange(k) + 9) % 16)
    return counts[1]


@pytest.mark.parametrize("k", [1, 2, 4, 8])
def test_grouped_tables_open_k_plus_one_values(k):
    assert group_opened_elements(k, grouped=True) == k + 1
    assert group_opened_elements(k, grouped=False) == 2 * k


def test_eval_group_matches_direct_application():
    k = 6
    plain = softmax_division_table(2, 8)
    layout = TableLayout((k,), (4, 8), 4, shared_slot=1)
    u = np.array([0, 3, 7, 15, 8, 1])

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(layout, plain if ctx.id == 0 else None)
        dealer.flush()
        ctx.set_phase("online")
        return eval_group(ctx, st_, additive_for(ctx, 60, 8), additive_for(ctx, u, 4, seed=2))

    results, _, _ = run_local(program, 4)
    assert np.array_equal(reveal2(results[1:]).unsigned(), plain.lookup(u, 60).unsigned())


# -- conversions -------------------------------------------------------------------------


def conversions(xs, signed, to_rss):
    plain = conversion_table(4, 16, signed=signed)
    layout = TableLayout(np.shape(xs), (4, 0), 16)

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(layout, plain if ctx.id == 0 else None)
        dealer.flush()
        ctx.set_phase("online")
        x = additive_for(ctx, xs, 4)
        return convert_to_rss(ctx, st_, x) if to_rss else convert_up(ctx, st_, x)

    results, _, _ = run_local(program, 8)
    return reveal3(results) if to_rss else reveal2(results[1:])


def test_convert_up_unsigned_five():
    assert int(conversions(5, False, False).value) == 5


def test_convert_up_sign_extends():
    assert int(conversions(13, True, False).value) == 0xFFFD


@pytest.mark.parametrize("signed", [False, True])
@pytest.mark.parametrize("to_rss", [False, True])
def test_conversion_exhaustive(signed, to_rss):
    xs = np.arange(16)
    expect = np.where(xs >= 8, xs - 16, xs) if signed else xs
    out = conversions(xs, signed, to_rss)
    assert np.array_equal(out.signed() if signed else out.unsigned(), expect)


def test_convert_zero_to_rss_is_zero():
    assert int(conversions(0, True, True).value) == 0


def test_converted_rss_values_add():
    plain = conversion_table(4, 16, signed=True)
    layout = TableLayout((2,), (4, 0), 16)

    def program(ctx):
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(layout, plain if ctx.id == 0 else None)
        dealer.flush()
        ctx.set_phase("online")
        r = convert_to_rss(ctx, st_, additive_for(ctx, [6, 13], 4))
        return r[0] + r[1]

    results, _, _ = run_local(program, 8)
    assert reveal3(results).signed() == 3


# -- blinding ---------------------------------------------------------------------------


def test_opened_deltas_are_uniform():
    n = 10_000
    plain = identity_table(batch=(n,))

    def program(ctx):
        ctx.record_opened = True
        ctx.set_phase("offline")
        dealer = Dealer(ctx)
        st_ = dealer.table(plain.layout(), plain if ctx.id == 0 else None)
        dealer.flush()
        ctx.set_phase("online")
        return eval_single(ctx, st_, additive_for(ctx, np.full(n, 5), 4))

    _, _, ctxs = run_local(program, 12)
    deltas = ctxs[1].opened[0][1].unsigned()
    counts = np.bincount(deltas, minlength=16)
    assert chisquare(counts).pvalue > 0.01


# -- persistence -------------------------------------------------------------------------


def test_table_file_round_trip():
    plain = max_table(4)
    layout = TableLayout((3,), (4, 4), 4, shared_slot=1)
    tables = deal(PlainTable(RingArray.wrap(np.broadcast_to(plain.entries.unsigned(), (3, 256)).copy(), 4),
                             (4, 4)), layout)
    for pid, t in enumerate(tables):
        buf = io.BytesIO()
        write_table(buf, t, pid)
        buf.seek(0)
        back = read_table(buf)
        assert back.layout == t.layout
        if pid == 0:
            assert all(a == b for a, b in zip(back.dealer_offsets, t.dealer_offsets))
        else:
            assert back.entries.component == t.entries.component
            assert all(a.component == b.component for a, b in zip(back.offsets, t.offsets))


def test_truncated_table_file_reports_offset():
    tables = deal(identity_table())
    buf = io.BytesIO()
    write_table(buf, tables[1], 1)
    data = buf.getvalue()[:-3]
    with pytest.raises(ModelFormatError) as info:
        read_table(io.BytesIO(data))
    assert info.value.offset > 0
