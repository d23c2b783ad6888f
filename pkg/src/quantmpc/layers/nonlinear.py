"""Table-based non-linear layers: max, softmax, ReLU and LayerNorm.

Each layer comes as a ``deal_*`` function, run by all parties during the
offline phase (P0 supplies the scales, the others pass ``None``), and an online
function consuming the dealt material.  Inputs and outputs are P1/P2 additive
4-bit shares unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError, StructuralError
from ..ring import concatenate, stack
from ..sharing import AdditiveShare, RssShare
from ..lut.protocol import (
    Dealer,
    OpenBatch,
    ShiftedTable,
    convert_to_rss,
    eval_group,
    eval_single,
    eval_two,
    reshare_finish,
    reshare_prepare,
)
from ..lut.tables import (
    PlainTable,
    TableLayout,
    conversion_table,
    exp_table,
    layernorm_table,
    max_table,
    relu_table,
    softmax_division_table,
    softmax_mid_division_table,
)
from ..transport.party import PartyContext
from .linear import ACC_WIDTH, dot_last, fold_scale, quantized_dot

ACT_WIDTH = 4
EXP_WIDTH = 8
SOFTMAX_CAP = 16


def _cat(parts: list[AdditiveShare], owner: int) -> AdditiveShare:
    return AdditiveShare(concatenate([p.component for p in parts], axis=-1), owner)


def _is_dealer(ctx: PartyContext) -> bool:
    return ctx.id == 0


# -- max ------------------------------------------------------------------------


def tournament_pairs(n: int) -> list[int]:
    """Number of comparisons at each level of a pairwise max tournament over n items."""
    if n < 1:
        raise DomainError("max over an empty vector")
    pairs = []
    while n > 1:
        pairs.append(n // 2)
        n = n - n // 2
    return pairs


def deal_max(dealer: Dealer, batch_shape, n: int, signed: bool = False, width: int = ACT_WIDTH) -> list[ShiftedTable]:
    """One batch of two-input max tables per tournament level (n - 1 tables per row in total)."""
    plain = max_table(width, signed) if _is_dealer(dealer.ctx) else None
    return [
        dealer.table(TableLayout(tuple(batch_shape) + (p,), (width, width), width), plain)
        for p in tournament_pairs(n)
    ]


def secure_max(ctx: PartyContext, levels: list[ShiftedTable], xs: AdditiveShare | None) -> AdditiveShare | None:
    """Max over the last axis in ceil(log2 n) rounds."""
    cur = xs
    for st in levels:
        p = st.layout.batch_shape[-1]
        if ctx.id == 0:
            eval_two(ctx, st, None, None)
            continue
        n = cur.shape[-1]
        if n < 2 * p:
            raise StructuralError(f"max level expects at least {2 * p} items, got {n}")
        winners = eval_two(ctx, st, cur[..., 0 : 2 * p : 2], cur[..., 1 : 2 * p : 2])
        cur = _cat([winners, cur[..., 2 * p :]], ctx.id) if n > 2 * p else winners
    if ctx.id == 0:
        return None
    if cur.shape[-1] != 1:
        raise StructuralError("max tournament ended with more than one item")
    return cur[..., 0]


# -- softmax --------------------------------------------------------------------


def mid_extract(d: AdditiveShare, kappa: int, k: int = ACT_WIDTH) -> AdditiveShare:
    """Share-local bits [kappa, kappa + k): reconstructs to floor(d / 2**kappa) mod 2**k, or one less."""
    if not 0 <= kappa <= d.width - k:
        raise DomainError(f"kappa must lie in 0..{d.width - k}, got {kappa}")
    return d.bits(kappa, k)


@dataclass
class SoftmaxMaterial:
    max_levels: list[ShiftedTable]
    exp: ShiftedTable
    division: ShiftedTable
    kappa: int
    denominator: str


def deal_softmax(dealer: Dealer, batch_shape, n: int, s_x: float | None, kappa: int = 2,
                 signed: bool = True, denominator: str = "exact", cap: int = SOFTMAX_CAP) -> SoftmaxMaterial:
    """Tables for a softmax over rows of length n.

    ``denominator="exact"`` divides by the full 8-bit sum inside a 4x8 table;
    ``"mid"`` uses a 4x4 table on the share-locally extracted middle nibble.
    """
    if denominator not in ("exact", "mid"):
        raise StructuralError(f"unknown denominator mode {denominator!r}")
    if n > cap:
        raise ConfigError(f"softmax length {n} exceeds the cap {cap}: the 8-bit denominator could wrap")
    if not 0 <= kappa <= EXP_WIDTH - ACT_WIDTH:
        raise DomainError(f"kappa must lie in 0..{EXP_WIDTH - ACT_WIDTH}, got {kappa}")
    batch = tuple(batch_shape)
    dealing = _is_dealer(dealer.ctx)
    levels = deal_max(dealer, batch, n, signed)
    exp = dealer.table(TableLayout(batch + (n,), (ACT_WIDTH, 0), EXP_WIDTH),
                       exp_table(s_x, ACT_WIDTH, EXP_WIDTH) if dealing else None)
    if denominator == "exact":
        div_plain = softmax_division_table(kappa, EXP_WIDTH) if dealing else None
        div_layout = TableLayout(batch + (n,), (ACT_WIDTH, EXP_WIDTH), ACT_WIDTH, shared_slot=1)
    else:
        div_plain = softmax_mid_division_table(kappa) if dealing else None
        div_layout = TableLayout(batch + (n,), (ACT_WIDTH, ACT_WIDTH), ACT_WIDTH, shared_slot=1)
    return SoftmaxMaterial(levels, exp, dealer.table(div_layout, div_plain), kappa, denominator)


def secure_softmax(ctx: PartyContext, mat: SoftmaxMaterial, xs: AdditiveShare | None) -> AdditiveShare | None:
    """Softmax over the last axis; output probabilities at scale 1/16.

    Rounds: the max tournament, one exp round, one division round.
    """
    top = secure_max(ctx, mat.max_levels, xs)
    diff = None if ctx.id == 0 else xs - AdditiveShare(top.component[..., None], ctx.id)
    e = eval_single(ctx, mat.exp, diff)
    if ctx.id == 0:
        eval_group(ctx, mat.division, None, None)
        return None
    total = e.sum(axis=-1)
    numer = e.low(ACT_WIDTH)
    den = total if mat.denominator == "exact" else mid_extract(total, mat.kappa)
    return eval_group(ctx, mat.division, den, numer)


# -- ReLU -----------------------------------------------------------------------


def deal_relu(dealer: Dealer, batch_shape) -> ShiftedTable:
    plain = relu_table(ACT_WIDTH, ACC_WIDTH) if _is_dealer(dealer.ctx) else None
    return dealer.table(TableLayout(tuple(batch_shape), (ACT_WIDTH, 0), ACC_WIDTH), plain)


def secure_relu(ctx: PartyContext, st: ShiftedTable, x: AdditiveShare | None) -> RssShare:
    """ReLU of a signed 4-bit value, delivered as a 16-bit replicated share (two rounds)."""
    return convert_to_rss(ctx, st, x)


# -- LayerNorm ------------------------------------------------------------------


@dataclass
class LayerNormParams:
    """Dealer-side LayerNorm constants (never leave P0).

    ``s_x`` is the scale of the pre-norm input, ``s_var`` that of the quantized
    variance and ``s_out`` that of the output.
    """

    gamma: np.ndarray
    beta: np.ndarray
    s_x: float
    s_var: float
    s_out: float
    eps: float = 1.0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if min(self.s_x, self.s_var, self.s_out) <= 0 or self.eps < 0:
            raise ConfigError("LayerNorm scales must be positive and eps non-negative")

    def variance_fold(self, n: int | None = None) -> int:
        n = len(self.gamma) if n is None else n
        return fold_scale(self.s_x * self.s_x / (n * self.s_var))


@dataclass
class LayerNormMaterial:
    convert_x: ShiftedTable  # identity and variance-scaled conversions of x
    convert_mean: ShiftedTable
    normalize: ShiftedTable
    n: int


CENTERED_WIDTH = 5


def mean_multiplier(n: int) -> int:
    return (1 << 12) // n


def _conversion_pair(fold: int) -> PlainTable:
    ident = conversion_table(ACT_WIDTH, ACC_WIDTH, signed=True)
    scaled = conversion_table(ACT_WIDTH, ACC_WIDTH, signed=True, scale=fold)
    return PlainTable(stack([ident.entries, scaled.entries]), (ACT_WIDTH, 0))


def deal_layernorm(dealer: Dealer, batch_shape, n: int, params: LayerNormParams | None) -> LayerNormMaterial:
    if n < 1:
        raise DomainError("layernorm over an empty vector")
    batch = tuple(batch_shape)
    pair = norm = None
    if _is_dealer(dealer.ctx):
        if len(params.gamma) != n or len(params.beta) != n:
            raise StructuralError("gamma and beta need one entry per channel")
        pair = _conversion_pair(params.variance_fold(n))
        norm = layernorm_table(params.gamma, params.beta, params.s_x, params.s_var, params.s_out, params.eps,
                               CENTERED_WIDTH, ACT_WIDTH)
    conv_layout = TableLayout(batch + (n, 2), (ACT_WIDTH, 0), ACC_WIDTH, shared_slot=0)
    mean_layout = TableLayout(batch + (2,), (ACT_WIDTH, 0), ACC_WIDTH, shared_slot=0)
    norm_layout = TableLayout(batch + (n,), (CENTERED_WIDTH, ACT_WIDTH), ACT_WIDTH, shared_slot=1)
    return LayerNormMaterial(dealer.table(conv_layout, pair), dealer.table(mean_layout, pair),
                             dealer.table(norm_layout, norm), n)


def secure_layernorm(ctx: PartyContext, mat: LayerNormMaterial, xs: AdditiveShare | None) -> AdditiveShare | None:
    """LayerNorm over the last axis of signed 4-bit values (five rounds).

    The mean is the top nibble of floor(2**12 / n) * sum(x) and the variance the
    top nibble of sum(c * F c) with c = x - mean; both may carry one unit low.
    The centered input to the per-channel table is exact modulo 32.
    """
    n = mat.n
    batch = mat.convert_x.layout.batch_shape[:-2]
    conv_shape = batch + (n, 2)

    # round 1: widen x (identity and variance-scaled)
    batch_open = OpenBatch(ctx)
    batch_open.add_table(mat.convert_x, xs)
    (x16,) = batch_open.run("layernorm-x")

    mean4 = None
    if ctx.id != 0:
        total = x16[..., 0].sum(axis=-1)
        mean4 = (total * mean_multiplier(n)).trc(ACT_WIDTH)

    # round 2: reshare x, widen the mean
    state_x, delta_x = reshare_prepare(ctx, x16, conv_shape, ACC_WIDTH)
    batch_open = OpenBatch(ctx)
    batch_open.add_value(delta_x, conv_shape, ACC_WIDTH)
    batch_open.add_table(mat.convert_mean, mean4)
    c0_x, mean16 = batch_open.run("layernorm-mean")
    x_rss = reshare_finish(ctx, state_x, c0_x)

    # round 3: reshare the mean
    state_m, delta_m = reshare_prepare(ctx, mean16, batch + (2,), ACC_WIDTH)
    batch_open = OpenBatch(ctx)
    batch_open.add_value(delta_m, batch + (2,), ACC_WIDTH)
    (c0_m,) = batch_open.run("layernorm-mean-reshare")
    mean_rss = reshare_finish(ctx, state_m, c0_m)

    centered = x_rss[..., 0] - mean_rss[..., None, 0]
    centered_scaled = x_rss[..., 1] - mean_rss[..., None, 1]

    # round 4: variance as a folded inner product
    var4 = quantized_dot(ctx, centered_scaled, centered, dot_last, n)

    # round 5: per-channel normalization table, grouped on the variance
    if ctx.id == 0:
        eval_group(ctx, mat.normalize, None, None)
        return None
    c5 = (x16[..., 0] - AdditiveShare(mean16.component[..., None, 0], ctx.id)).low(CENTERED_WIDTH)
    return eval_group(ctx, mat.normalize, var4, c5)
