import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantmpc.errors import DomainError, StructuralError
from quantmpc.ring import RingArray, decode_signed, encode_signed, ring_arith, trc


def ring(v, w):
    return RingArray(np.asarray(v, dtype=np.uint64), w)


def test_add_wraps_at_four_bits():
    assert int(ring_arith(ring(15, 4), ring(1, 4), "add").value) == 0


def test_add_zero_is_identity():
    assert int(ring_arith(ring(9, 4), ring(0, 4), "add").value) == 9


def test_add_wraps_at_sixteen_bits():
    assert int(ring_arith(ring(0xF000, 16), ring(0x2000, 16), "add").value) == 0x1000


def test_encode_minus_one_is_fifteen():
    assert int(encode_signed(-1, 4).value) == 15


def test_encode_minus_eight_is_eight():
    assert int(encode_signed(-8, 4).value) == 8


def test_decode_positive():
    assert decode_signed(ring(7, 4)) == 7


def test_trc_keeps_top_nibble():
    assert int(trc(ring(0xABCD, 16), 4).value) == 0xA
    assert int(trc(ring(0x2000, 16), 4).value) == 2


def test_trc_full_width_is_identity():
    x = ring(0xBEEF, 16)
    assert trc(x, 16) == x


def test_out_of_range_value_rejected():
    with pytest.raises(DomainError):
        RingArray(np.uint64(16), 4)


def test_width_mismatch_rejected():
    with pytest.raises(StructuralError):
        ring(1, 4) + ring(1, 8)


def test_unknown_op_rejected():
    with pytest.raises(StructuralError):
        ring_arith(ring(1, 4), ring(1, 4), "div")


def test_scalar_wraparound_emits_no_warning():
    with np.errstate(all="raise"):
        assert int((ring(0xFFFF, 16) + ring(1, 16)).value) == 0
        assert int((ring(0, 16) - ring(1, 16)).value) == 0xFFFF


@given(st.integers(1, 64), st.integers(), st.integers())
def test_add_and_mul_match_python_modulo(width, a, b):
    m = 1 << width
    x, y = RingArray.wrap(a % m, width), RingArray.wrap(b % m, width)
    assert int((x + y).value) == (a + b) % m
    assert int((x - y).value) == (a - b) % m
    assert int((x * y).value) == (a * b) % m


@given(st.integers(2, 16).flatmap(lambda w: st.tuples(st.just(w), st.integers(-(1 << (w - 1)), (1 << (w - 1)) - 1))))
def test_signed_round_trip(wv):
    width, v = wv
    assert decode_signed(encode_signed(v, width)) == v


@given(st.integers(0, 0xFFFF), st.integers(1, 16))
def test_trc_is_floor_division(v, k):
    assert int(ring(v, 16).trc(k).value) == v >> (16 - k)
