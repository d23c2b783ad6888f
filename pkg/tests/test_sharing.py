import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantmpc.errors import IntegrityError
from quantmpc.ring import RingArray
from quantmpc.sharing import AdditiveShare, RssShare, SeedPair, derive_seed, reveal2, reveal3, share2, share3, share_linear


class ZeroRng:
    def ring(self, shape, width):
        return RingArray.zeros(shape, width)


def seeded(n=0, purpose="t"):
    return SeedPair(derive_seed(n, "test"), purpose)


def test_share2_round_trip_all_nibbles():
    rng = seeded()
    for x in range(16):
        assert int(reveal2(share2(RingArray.wrap(x, 4), rng)).value) == x


def test_share2_with_zero_mask_gives_value_to_p2():
    s1, s2 = share2(RingArray.wrap(5, 4), ZeroRng())
    assert int(s1.component.value) == 0 and int(s2.component.value) == 5


def test_same_seed_same_sharing():
    x = RingArray.wrap(np.arange(16), 4)
    a, b = share2(x, seeded(3)), share2(x, seeded(3))
    assert a[0].component == b[0].component and a[1].component == b[1].component


def test_seed_streams_agree_and_purposes_differ():
    a, b = seeded(5, "x"), seeded(5, "x")
    assert a.ring((10,), 16) == b.ring((10,), 16)
    assert a.counter == 10
    assert seeded(5, "x").ring((10,), 16) != seeded(5, "y").ring((10,), 16)


def test_share3_round_trip_all_nibbles():
    rng = seeded(1)
    for x in range(16):
        assert int(reveal3(share3(RingArray.wrap(x, 4), rng)).value) == x


def test_tampered_replica_raises_integrity_error():
    shares = list(share3(RingArray.wrap(9, 4), seeded(2)))
    shares[0] = RssShare(shares[0].nxt + 1, shares[0].prv, 0)
    with pytest.raises(IntegrityError):
        reveal3(shares)


def test_each_component_held_by_the_other_two_parties():
    shares = share3(RingArray.wrap(np.arange(4), 8), seeded(4))
    for i in range(3):
        holders = [s for s in shares if s.owner != i]
        assert holders[0].component(i) == holders[1].component(i)


def test_public_multiple_of_rss():
    c = (1 << 12) // 3
    x = RingArray.wrap(np.array([1, 5, 200]), 16)
    shares = share3(x, seeded(6))
    got = reveal3([share_linear([s], [c]) for s in shares])
    assert got == RingArray.wrap(np.array([1, 5, 200]) * c, 16)


def test_difference_with_itself_is_zero():
    shares = share3(RingArray.wrap(11, 8), seeded(7))
    assert int(reveal3([s - s for s in shares]).value) == 0
    a = share2(RingArray.wrap(11, 8), seeded(8))
    assert int(reveal2([s - s for s in a]).value) == 0


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 1000))
def test_rss_is_additively_homomorphic(a, b, seed):
    rng = seeded(seed)
    sa, sb = share3(RingArray.wrap(a, 8), rng), share3(RingArray.wrap(b, 8), rng)
    assert int(reveal3([x + y for x, y in zip(sa, sb)]).value) == (a + b) % 256
    assert int(reveal3([x.add_public(3) for x in sa]).value) == (a + 3) % 256


@given(st.integers(0, 255), st.integers(0, 1000))
def test_additive_public_add(a, seed):
    shares = share2(RingArray.wrap(a, 8), seeded(seed))
    assert int(reveal2([s.add_public(7) for s in shares]).value) == (a + 7) % 256


def test_truncation_law_exhaustive_width8_keep4():
    """Share-local trc of every (x, share) pair lands on t or t-1 mod 16; both occur."""
    x = np.arange(256, dtype=np.int64)[:, None]
    r = np.arange(256, dtype=np.int64)[None, :]
    a = RingArray.wrap(np.broadcast_to(r, (256, 256)), 8)
    b = RingArray.wrap(x - r, 8)
    got = (AdditiveShare(a, 1).trc(4).component + AdditiveShare(b, 2).trc(4).component).value.astype(np.int64)
    t = np.broadcast_to(x >> 4, got.shape)
    exact, low = got == t, got == (t - 1) % 16
    assert (exact | low).all()
    assert exact.any() and low.any()
