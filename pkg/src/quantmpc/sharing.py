"""Two-party additive and three-party replicated secret sharing over Z_{2^l}.

Party numbering follows the deployment: P0 is the model owner and dealer, P1 the
data owner, P2 the computing assistant.  Two-party shares are held by P1 and P2.

For a replicated sharing <x> = (<x>_0, <x>_1, <x>_2), party P_i holds the pair
(<x>_{i+1}, <x>_{i-1}), stored as ``nxt`` and ``prv``.  Each component is
therefore held by the two parties other than its index.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import IntegrityError, StructuralError
from .ring import RingArray, ring_mask


class SeedPair:
    """Keyed counter-mode generator over a seed shared by two parties.

    The key is ``blake2b(seed || purpose)`` and the stream is Philox in counter
    mode, so two holders of the same seed and purpose draw identical elements as
    long as they make the same sequence of calls.  ``counter`` counts the 64-bit
    words consumed so far.
    """

    def __init__(self, seed: bytes, purpose: str = ""):
        if not isinstance(seed, (bytes, bytearray)) or len(seed) < 16:
            raise StructuralError("seed must be at least 16 bytes")
        self.seed = bytes(seed)
        self.purpose = purpose
        key = hashlib.blake2b(self.seed + b"\x00" + purpose.encode(), digest_size=16).digest()
        self._bitgen = np.random.Philox(key=int.from_bytes(key, "little"))
        self.counter = 0

    def substream(self, purpose: str) -> SeedPair:
        """Independent stream for another purpose (e.g. offline vs online)."""
        sub = f"{self.purpose}/{purpose}" if self.purpose else purpose
        return SeedPair(self.seed, sub)

    def ring(self, shape, width: int) -> RingArray:
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        raw = self._bitgen.random_raw(n) if n else np.zeros(0, dtype=np.uint64)
        self.counter += n
        return RingArray._raw(np.asarray(raw, dtype=np.uint64).reshape(shape) & ring_mask(width), width)

    def digest(self) -> bytes:
        """Commitment to the seed, exchanged at session start to catch mismatches."""
        return hashlib.blake2b(b"seed-check" + self.seed, digest_size=8).digest()


def derive_seed(master: int | bytes, label: str) -> bytes:
    if isinstance(master, int):
        master = master.to_bytes(16, "little", signed=False)
    return hashlib.blake2b(master + b"\x01" + label.encode(), digest_size=32).digest()


# -- share types -----------------------------------------------------------


@dataclass
class AdditiveShare:
    """One party's component of a 2-of-2 additive sharing (owner is 1 or 2)."""

    component: RingArray
    owner: int

    @property
    def width(self) -> int:
        return self.component.width

    @property
    def shape(self):
        return self.component.shape

    def _check(self, other: AdditiveShare) -> None:
        if other.owner != self.owner:
            raise StructuralError("cannot combine shares held by different parties")

    def __add__(self, other) -> AdditiveShare:
        if isinstance(other, AdditiveShare):
            self._check(other)
            return AdditiveShare(self.component + other.component, self.owner)
        return self.add_public(other)

    def __sub__(self, other) -> AdditiveShare:
        if isinstance(other, AdditiveShare):
            self._check(other)
            return AdditiveShare(self.component - other.component, self.owner)
        return self.add_public(-np.asarray(other, dtype=np.int64))

    def __neg__(self) -> AdditiveShare:
        return AdditiveShare(-self.component, self.owner)

    def __mul__(self, c) -> AdditiveShare:
        return AdditiveShare(self.component * c, self.owner)

    __rmul__ = __mul__

    def add_public(self, c) -> AdditiveShare:
        if self.owner == 1:
            return AdditiveShare(self.component + c, 1)
        return self

    def __getitem__(self, idx) -> AdditiveShare:
        return AdditiveShare(self.component[idx], self.owner)

    def reshape(self, *shape) -> AdditiveShare:
        return AdditiveShare(self.component.reshape(*shape), self.owner)

    def sum(self, axis=None) -> AdditiveShare:
        return AdditiveShare(self.component.sum(axis=axis), self.owner)

    def trc(self, k: int) -> AdditiveShare:
        """Share-local truncation; the reconstruction may be one below the true value."""
        return AdditiveShare(self.component.trc(k), self.owner)

    def low(self, k: int) -> AdditiveShare:
        return AdditiveShare(self.component.low(k), self.owner)

    def bits(self, start: int, k: int) -> AdditiveShare:
        return AdditiveShare(self.component.bits(start, k), self.owner)


@dataclass
class RssShare:
    """Party ``owner``'s pair (<x>_{owner+1}, <x>_{owner-1})."""

    nxt: RingArray
    prv: RingArray
    owner: int

    def __post_init__(self):
        if self.nxt.width != self.prv.width or self.nxt.shape != self.prv.shape:
            raise StructuralError("replicated components must agree in width and shape")

    @property
    def width(self) -> int:
        return self.nxt.width

    @property
    def shape(self):
        return self.nxt.shape

    def component(self, index: int) -> RingArray:
        index %= 3
        if index == (self.owner + 1) % 3:
            return self.nxt
        if index == (self.owner - 1) % 3:
            return self.prv
        raise StructuralError(f"P{self.owner} does not hold component {index}")

    def __add__(self, other) -> RssShare:
        if isinstance(other, RssShare):
            if other.owner != self.owner:
                raise StructuralError("cannot combine shares held by different parties")
            return RssShare(self.nxt + other.nxt, self.prv + other.prv, self.owner)
        return self.add_public(other)

    def __sub__(self, other) -> RssShare:
        if isinstance(other, RssShare):
            if other.owner != self.owner:
                raise StructuralError("cannot combine shares held by different parties")
            return RssShare(self.nxt - other.nxt, self.prv - other.prv, self.owner)
        return self.add_public(-np.asarray(other, dtype=np.int64))

    def __neg__(self) -> RssShare:
        return RssShare(-self.nxt, -self.prv, self.owner)

    def __mul__(self, c) -> RssShare:
        return RssShare(self.nxt * c, self.prv * c, self.owner)

    __rmul__ = __mul__

    def add_public(self, c) -> RssShare:
        # the constant goes into component 0, held by P1 (as prv) and P2 (as nxt)
        if self.owner == 1:
            return RssShare(self.nxt, self.prv + c, 1)
        if self.owner == 2:
            return RssShare(self.nxt + c, self.prv, 2)
        return self

    def __getitem__(self, idx) -> RssShare:
        return RssShare(self.nxt[idx], self.prv[idx], self.owner)

    def reshape(self, *shape) -> RssShare:
        return RssShare(self.nxt.reshape(*shape), self.prv.reshape(*shape), self.owner)

    def sum(self, axis=None) -> RssShare:
        return RssShare(self.nxt.sum(axis=axis), self.prv.sum(axis=axis), self.owner)


# -- dealer-view sharing and reconstruction -----------------------------------


def share2(x: RingArray, rng) -> tuple[AdditiveShare, AdditiveShare]:
    """Split ``x``: the P1 component comes from ``rng``, P2 gets the difference."""
    r = rng.ring(x.shape, x.width)
    return AdditiveShare(r, 1), AdditiveShare(x - r, 2)


def reveal2(shares: Sequence[AdditiveShare]) -> RingArray:
    if len(shares) != 2:
        raise StructuralError("a two-party sharing has exactly two components")
    a, b = shares
    if {a.owner, b.owner} != {1, 2}:
        raise StructuralError("two-party shares must come from P1 and P2")
    return a.component + b.component


def share3(x: RingArray, rng) -> tuple[RssShare, RssShare, RssShare]:
    c0 = rng.ring(x.shape, x.width)
    c1 = rng.ring(x.shape, x.width)
    c2 = x - c0 - c1
    comps = (c0, c1, c2)
    return tuple(RssShare(comps[(i + 1) % 3], comps[(i - 1) % 3], i) for i in range(3))  # type: ignore[return-value]


def reveal3(shares: Sequence[RssShare]) -> RingArray:
    """Check replication consistency, then sum the three components."""
    if len(shares) != 3:
        raise StructuralError("a replicated sharing has three parties")
    by_owner = {s.owner: s for s in shares}
    if set(by_owner) != {0, 1, 2}:
        raise StructuralError("replicated shares must come from P0, P1 and P2")
    comps = []
    for i in range(3):
        left = by_owner[(i - 1) % 3].nxt
        right = by_owner[(i + 1) % 3].prv
        if left != right:
            raise IntegrityError(f"replicated component {i} differs between P{(i - 1) % 3} and P{(i + 1) % 3}")
        comps.append(left)
    return comps[0] + comps[1] + comps[2]


def share_linear(shares: Sequence, coefficients: Sequence[int]):
    """Local sum of c_i * s_i over shares held by one party (no communication)."""
    if len(shares) != len(coefficients) or not shares:
        raise StructuralError("need one coefficient per share")
    acc = shares[0] * int(coefficients[0])
    for s, c in zip(shares[1:], coefficients[1:]):
        acc = acc + s * int(c)
    return acc
