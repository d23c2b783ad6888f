"""Replicated-sharing linear algebra and the quantized inner product.

Weights are folded: the dealer shares ``W'_i = floor(2**12 * s_w*s_x/s_y) * W_i``
over Z_{2^16}, so the requantized 4-bit output is simply the top nibble of
``sum W'_i x_i``.  No clipping is applied: values beyond the 4-bit range wrap in
the truncated nibble.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError, StructuralError
from ..ring import RingArray
from ..sharing import AdditiveShare, RssShare
from ..transport import tags
from ..transport.party import PartyContext

ACC_WIDTH = 16
FOLD_BITS = 12
MAX_INNER = 1 << FOLD_BITS
OUT_BITS = 4


def fold_scale(ratio: float) -> int:
    """floor(2**12 * ratio); must fit in 15 bits so the signed folded weight fits 16."""
    if not ratio > 0:
        raise ConfigError(f"scale ratio must be positive, got {ratio}")
    f = int(np.floor((1 << FOLD_BITS) * ratio))
    if f >= 1 << 15:
        raise ConfigError(f"folded scale {f} does not fit in 15 bits")
    return f


@dataclass(frozen=True)
class ScaleSet:
    """Input, weight and output scales of one quantized linear layer.

    ``gain`` is an extra public factor folded alongside (1/sqrt(d_head) for
    attention scores).
    """

    s_x: float
    s_w: float
    s_y: float
    gain: float = 1.0

    def __post_init__(self):
        if not (self.s_x > 0 and self.s_w > 0 and self.s_y > 0 and self.gain > 0):
            raise ConfigError(f"scales must be strictly positive: {self}")

    @property
    def ratio(self) -> float:
        return self.gain * self.s_w * self.s_x / self.s_y

    @property
    def fold(self) -> int:
        return fold_scale(self.ratio)


@dataclass
class FoldedWeights:
    """Replicated shares of fold * W for W in {-1, +1}^(m, n), over Z_{2^16}."""

    entries: RssShare
    dims: tuple[int, int]

    @staticmethod
    def plain(weights: np.ndarray, fold: int) -> RingArray:
        w = np.asarray(weights, dtype=np.int64)
        if not np.isin(w, (-1, 1)).all():
            raise ConfigError("binary weights must be -1 or +1")
        return RingArray.wrap(w * int(fold), ACC_WIDTH)


def _cross_terms(x: RssShare, y: RssShare, contract: Callable) -> RingArray:
    """Party-local z_i = x_{i-1}.y_{i+1} + x_{i+1}.y_{i-1} + x_{i+1}.y_{i+1}; the z_i sum to x.y."""
    return contract(x.prv, y.nxt) + contract(x.nxt, y.prv) + contract(x.nxt, y.nxt)


def dot_last(a: RingArray, b: RingArray) -> RingArray:
    return (a * b).sum(axis=-1)


def matmul_rt(a: RingArray, b: RingArray) -> RingArray:
    """a @ b^T over the last axis of both (rows of b are weight rows)."""
    return a @ RingArray._raw(np.swapaxes(b.value, -1, -2), b.width)


def matmul(a: RingArray, b: RingArray) -> RingArray:
    return a @ b


def zero_share(ctx: PartyContext, shape, width: int) -> RingArray:
    """Party-local alpha_i with alpha_0 + alpha_1 + alpha_2 = 0, from pairwise seeds."""
    nxt, prv = (ctx.id + 1) % 3, (ctx.id - 1) % 3
    return ctx.prg(nxt, "zero").ring(shape, width) - ctx.prg(prv, "zero").ring(shape, width)


def rss_inner_product(ctx: PartyContext, xs: RssShare, ys: RssShare, contract: Callable = dot_last) -> RssShare:
    """Replicated product: local cross terms, zero-share masking, one send to the next party.

    Three messages in one round, each of the output size (independent of the
    inner dimension).
    """
    if xs.width != ys.width:
        raise StructuralError("inner product operands must share a ring width")
    if contract is dot_last and xs.shape != ys.shape:
        raise StructuralError(f"length mismatch: {xs.shape} vs {ys.shape}")
    z = _cross_terms(xs, ys, contract)
    z = z + zero_share(ctx, z.shape, z.width)
    nxt, prv = (ctx.id + 1) % 3, (ctx.id - 1) % 3
    with ctx.round():
        ctx.send(nxt, tags.RSS_RESHARE, [z])
        (z_prev,) = ctx.recv(prv, tags.RSS_RESHARE, [(z.shape, z.width)])
    return RssShare(z_prev, z, ctx.id)


def elementwise(a: RingArray, b: RingArray) -> RingArray:
    return a * b


def quantized_dot(ctx: PartyContext, w: RssShare, x: RssShare, contract: Callable, inner: int,
                  extra: tuple[RssShare, RssShare] | None = None) -> AdditiveShare | None:
    """Folded inner product followed by top-nibble truncation (one P0 -> P1 message).

    P0 masks its partial sum with randomness it shares with P2, so P1 learns
    nothing from it.  The result is a P1/P2 additive 4-bit sharing that may be
    one below the exact top nibble (share-local truncation carry).

    ``extra = (r, f)`` adds the elementwise product r * f before truncating;
    residual connections use it with f a dealer-shared residual fold.
    """
    if inner > MAX_INNER:
        raise ConfigError(f"inner dimension {inner} exceeds {MAX_INNER}: the 16-bit accumulator could overflow")
    if w.width != ACC_WIDTH or x.width != ACC_WIDTH:
        raise StructuralError("quantized inner products run over Z_{2^16}")
    y = _cross_terms(w, x, contract)
    if extra is not None:
        y = y + _cross_terms(extra[0], extra[1], elementwise)
    if ctx.id == 0:
        y = y + ctx.prg(2, "fc-mask").ring(y.shape, y.width)
    elif ctx.id == 2:
        y = y - ctx.prg(0, "fc-mask").ring(y.shape, y.width)
    with ctx.round():
        if ctx.id == 0:
            ctx.send(1, tags.FC_MASKED_Y0, [y])
            return None
        if ctx.id == 1:
            (y0,) = ctx.recv(0, tags.FC_MASKED_Y0, [(y.shape, y.width)])
            y = y0 + y
    return AdditiveShare(y.trc(OUT_BITS), ctx.id)


def fc_quantized(ctx: PartyContext, weights: RssShare | FoldedWeights, x: RssShare,
                 residual: tuple[RssShare, RssShare] | None = None) -> AdditiveShare | None:
    """Quantized fully connected layer.

    ``weights`` has shape (out, in) (or (in,) for one neuron) holding folded
    weights; ``x`` has shape (..., in) holding sign-extended 4-bit activations.
    ``residual = (r, f)`` adds f * r (shape (..., out)) inside the accumulator.
    """
    if isinstance(weights, FoldedWeights):
        weights = weights.entries
    n = weights.shape[-1]
    if x.shape[-1] != n:
        raise StructuralError(f"input length {x.shape[-1]} does not match weight length {n}")
    contract = dot_last if len(weights.shape) == 1 else matmul_rt
    return quantized_dot(ctx, weights, x, lambda w, v: contract(v, w), n, residual)


def matmul_quantized(ctx: PartyContext, a: RssShare, b: RssShare, fold: int | None = None) -> AdditiveShare | None:
    """Quantized product of two activation matrices (..., n, k) @ (..., k, m).

    ``a`` must already carry the folded scale floor(2**12 * s_a*s_b/s_y) (the
    conversion table that produced it multiplies it in); ``fold`` instead
    applies a public fold locally.
    """
    if a.shape[-1] != b.shape[-2]:
        raise StructuralError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    if fold is not None:
        a = a * int(fold)
    return quantized_dot(ctx, a, b, matmul, a.shape[-1])


def share_input(ctx: PartyContext, value: RingArray | None, shape, width: int = ACC_WIDTH) -> RssShare:
    """The data owner P1 shares its input replicated.

    Components 2 and 0 come from P1's seeds with P0 and P2; component 1 is sent
    to both of them.
    """
    shape = tuple(shape)
    with ctx.round():
        if ctx.id == 1:
            c2 = ctx.prg(0, "input").ring(shape, width)
            c0 = ctx.prg(2, "input").ring(shape, width)
            c1 = value - c0 - c2
            ctx.send(0, tags.INPUT_SHARE, [c1])
            ctx.send(2, tags.INPUT_SHARE, [c1])
            return RssShare(c2, c0, 1)
        if ctx.id == 0:
            c2 = ctx.prg(1, "input").ring(shape, width)
            (c1,) = ctx.recv(1, tags.INPUT_SHARE, [(shape, width)])
            return RssShare(c1, c2, 0)
        c0 = ctx.prg(1, "input").ring(shape, width)
        (c1,) = ctx.recv(1, tags.INPUT_SHARE, [(shape, width)])
        return RssShare(c0, c1, 2)


def reveal_to_p1(ctx: PartyContext, x: AdditiveShare | None, shape, width: int) -> RingArray | None:
    """P2 sends its share to the data owner; only P1 learns the value."""
    with ctx.round():
        if ctx.id == 2:
            ctx.send(1, tags.OUTPUT_REVEAL, [x.component])
            return None
        if ctx.id == 1:
            (other,) = ctx.recv(2, tags.OUTPUT_REVEAL, [(tuple(shape), width)])
            return x.component + other
    return None
