"""Offline preparation and the secure forward pass of the post-norm encoder.

Every party runs the same program.  P0 deals tables and weights from the
model; P1 (the data owner) supplies the quantized embeddings; P2 assists.
Between layers, 4-bit two-party shares are lifted to 16-bit replicated
shares by conversion tables, with the scale that the next product needs
folded into the table where P1 and P2 must not see it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ModelFormatError, StateError, StructuralError
from ..layers.linear import ACC_WIDTH, FoldedWeights, fc_quantized, matmul_quantized, reveal_to_p1, share_input
from ..layers.nonlinear import (
    LayerNormMaterial,
    SoftmaxMaterial,
    deal_layernorm,
    deal_relu,
    deal_softmax,
    secure_layernorm,
    secure_relu,
    secure_softmax,
)
from ..lut.protocol import Dealer, ShiftedTable, convert_many
from ..lut.tablefile import read_rss, read_table, write_rss, write_table
from ..lut.tables import TableLayout, conversion_table
from ..ring import RingArray, concatenate
from ..sharing import AdditiveShare, RssShare
from ..transport.party import PartyContext
from .config import Model, ModelConfig, QuantTensor

ACT = 4


@dataclass(frozen=True)
class PublicShape:
    """What P1 and P2 know about the model: dimensions and softmax settings, no scales or weights."""

    hidden: int
    heads: int
    ffn: int
    layers: int
    classes: int
    kappa: int = 2
    softmax_cap: int = 16
    denominator: str = "exact"

    @classmethod
    def of(cls, config: ModelConfig, denominator: str = "exact") -> PublicShape:
        return cls(config.hidden, config.heads, config.ffn, config.n_layers, config.classes, config.kappa,
                   config.softmax_cap, denominator)

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def fields(self) -> dict[str, object]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class OfflineBundle:
    """One party's offline material for one forward pass, in dealing order."""

    shape: PublicShape
    seq: int
    party: int
    items: dict[str, ShiftedTable | RssShare] = field(default_factory=dict)
    _taken: set = field(default_factory=set)

    def take(self, name: str):
        if name not in self.items:
            raise StateError(f"offline bundle has no item {name!r} (exhausted or built for another shape)")
        if name in self._taken:
            raise StateError(f"offline item {name!r} was already used")
        self._taken.add(name)
        return self.items[name]

    def tables(self) -> list[ShiftedTable]:
        return [v for v in self.items.values() if isinstance(v, ShiftedTable)]

    def table_counts(self) -> dict[str, int]:
        """Number of individual tables per kind (max, exp, division, layernorm, conversion)."""
        kinds = ((".softmax.max", "max"), (".softmax.exp", "exp"), (".softmax.div", "division"),
                 (".normalize", "layernorm"))
        counts = {"max": 0, "exp": 0, "division": 0, "layernorm": 0, "conversion": 0}
        for name, item in self.items.items():
            if isinstance(item, ShiftedTable):
                kind = next((k for tag, k in kinds if tag in name), "conversion")
                counts[kind] += item.layout.count
        return counts

    @property
    def consumed(self) -> bool:
        return all(t.consumed for t in self.tables()) and self._taken == set(self.items)

    def softmax(self, prefix: str) -> SoftmaxMaterial:
        levels = []
        while f"{prefix}.max{len(levels)}" in self.items:
            levels.append(self.take(f"{prefix}.max{len(levels)}"))
        return SoftmaxMaterial(levels, self.take(f"{prefix}.exp"), self.take(f"{prefix}.div"),
                               self.shape.kappa, self.shape.denominator)

    def layernorm(self, prefix: str) -> LayerNormMaterial:
        return LayerNormMaterial(self.take(f"{prefix}.convert_x"), self.take(f"{prefix}.convert_mean"),
                                 self.take(f"{prefix}.normalize"), self.shape.hidden)

    # -- persistence -------------------------------------------------------------
    def save(self, directory: str) -> None:
        """Write ``manifest.txt`` (key=value lines plus the item order) and ``items.bin``."""
        os.makedirs(directory, exist_ok=True)
        lines = ["format=quantmpc-bundle", "version=1", f"party={self.party}", f"seq={self.seq}"]
        lines += [f"shape.{k}={v}" for k, v in self.shape.fields().items()]
        with open(os.path.join(directory, "items.bin"), "wb") as f:
            for name, item in self.items.items():
                if isinstance(item, ShiftedTable):
                    write_table(f, item, self.party)
                    lines.append(f"item={name} table")
                else:
                    write_rss(f, item)
                    lines.append(f"item={name} rss")
        with open(os.path.join(directory, "manifest.txt"), "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory: str) -> OfflineBundle:
        meta, order = {}, []
        with open(os.path.join(directory, "manifest.txt")) as f:
            offset = 0
            for line in f:
                key, sep, value = line.rstrip("\n").partition("=")
                if not sep:
                    raise ModelFormatError(f"malformed manifest line {line!r}", offset)
                if key == "item":
                    name, _, kind = value.partition(" ")
                    order.append((name, kind))
                else:
                    meta[key] = value
                offset += len(line.encode())
        if meta.get("format") != "quantmpc-bundle" or meta.get("version") != "1":
            raise ModelFormatError("not a version 1 bundle manifest", 0)
        kinds = PublicShape.__dataclass_fields__
        shape = PublicShape(**{k: (meta[f"shape.{k}"] if kinds[k].type in ("str",) else int(meta[f"shape.{k}"]))
                               for k in kinds})
        party = int(meta["party"])
        bundle = cls(shape, int(meta["seq"]), party)
        with open(os.path.join(directory, "items.bin"), "rb") as f:
            for name, kind in order:
                bundle.items[name] = read_table(f) if kind == "table" else read_rss(f, party)
        return bundle


# -- offline ----------------------------------------------------------------------


def _stack_weights(model: Model, names, folds) -> RingArray:
    return concatenate([FoldedWeights.plain(model.weights[n], f) for n, f in zip(names, folds)], axis=0)


def offline_prepare(ctx: PartyContext, shape: PublicShape, seq: int, model: Model | None = None) -> OfflineBundle:
    """Deal all tables and folded weights for one forward pass at sequence length ``seq`` (one round)."""
    if not 1 <= seq <= shape.softmax_cap:
        raise ConfigError(f"sequence length {seq} outside 1..{shape.softmax_cap}")
    dealing = ctx.id == 0
    if dealing:
        if model is None:
            raise ConfigError("the dealer needs the model")
        if PublicShape.of(model.config, shape.denominator) != shape:
            raise StructuralError("public shape does not describe the dealer's model")
        if seq > model.config.max_seq:
            raise ConfigError(f"sequence length {seq} exceeds the model's cap {model.config.max_seq}")
    h, heads, f = shape.hidden, shape.heads, shape.ffn
    dealer = Dealer(ctx)
    bundle = OfflineBundle(shape, seq, ctx.id)
    items = bundle.items

    def rss(name, value, dims):
        items[name] = dealer.rss(value if dealing else None, dims, ACC_WIDTH)

    def convert(name, batch, signed=True, scale=1):
        plain = conversion_table(ACT, ACC_WIDTH, signed, scale) if dealing else None
        items[name] = dealer.table(TableLayout(tuple(batch), (ACT, 0), ACC_WIDTH), plain)

    for i in range(shape.layers):
        p = f"L{i}"
        layer = model.config.layers[i] if dealing else None
        folds = layer.folds() if dealing else {}
        w = (lambda names, keys: _stack_weights(model, [f"{i}.{n}" for n in names], [folds[k] for k in keys])) \
            if dealing else (lambda names, keys: None)
        const = (lambda key: RingArray.wrap(np.int64(folds[key]), ACC_WIDTH)) if dealing else (lambda key: None)

        if i > 0:
            convert(f"{p}.conv_in", (seq, h))
        rss(f"{p}.wqkv", w(("wq", "wk", "wv"), ("q", "k", "v")), (3 * h, h))
        convert(f"{p}.conv_q", (seq, h), scale=folds.get("scores", 1))
        convert(f"{p}.conv_k", (seq, h))
        convert(f"{p}.conv_v", (seq, h))
        sm = deal_softmax(dealer, (heads, seq), seq, layer.scores.s_y if dealing else None, shape.kappa,
                          signed=True, denominator=shape.denominator, cap=shape.softmax_cap)
        for j, st in enumerate(sm.max_levels):
            items[f"{p}.softmax.max{j}"] = st
        items[f"{p}.softmax.exp"] = sm.exp
        items[f"{p}.softmax.div"] = sm.division
        convert(f"{p}.conv_p", (heads, seq, seq), signed=False, scale=folds.get("context", 1))
        convert(f"{p}.conv_ctx", (seq, h))
        rss(f"{p}.wo", w(("wo",), ("out",)), (h, h))
        rss(f"{p}.res1", const("res1"), ())
        ln1 = deal_layernorm(dealer, (seq,), h, layer.ln1 if dealing else None)
        items[f"{p}.ln1.convert_x"], items[f"{p}.ln1.convert_mean"], items[f"{p}.ln1.normalize"] = \
            ln1.convert_x, ln1.convert_mean, ln1.normalize
        convert(f"{p}.conv_ln1", (seq, h))
        rss(f"{p}.w1", w(("w1",), ("ff1",)), (f, h))
        items[f"{p}.relu"] = deal_relu(dealer, (seq, f))
        rss(f"{p}.w2", w(("w2",), ("ff2",)), (h, f))
        rss(f"{p}.res2", const("res2"), ())
        ln2 = deal_layernorm(dealer, (seq,), h, layer.ln2 if dealing else None)
        items[f"{p}.ln2.convert_x"], items[f"{p}.ln2.convert_mean"], items[f"{p}.ln2.normalize"] = \
            ln2.convert_x, ln2.convert_mean, ln2.normalize
    if shape.layers:
        convert("final.conv", (h,))
    cls_fold = model.config.classifier.fold if dealing else 0
    rss("final.classifier",
        FoldedWeights.plain(model.weights["classifier"], cls_fold) if dealing else None, (shape.classes, h))
    dealer.flush()
    return bundle


# -- online -----------------------------------------------------------------------


def _map_rss(x: RssShare, fn) -> RssShare:
    return RssShare(RingArray._raw(np.ascontiguousarray(fn(x.nxt.value)), x.width),
                    RingArray._raw(np.ascontiguousarray(fn(x.prv.value)), x.width), x.owner)


def _map_add(x: AdditiveShare | None, fn) -> AdditiveShare | None:
    if x is None:
        return None
    return AdditiveShare(RingArray._raw(np.ascontiguousarray(fn(x.component.value)), x.width), x.owner)


def _record(ctx: PartyContext, name: str, x: AdditiveShare | None) -> None:
    if x is not None:
        ctx.trace[name] = x.component


def secure_forward(ctx: PartyContext, bundle: OfflineBundle, inputs: QuantTensor | np.ndarray | None = None,
                   reveal: bool = True, shape: PublicShape | None = None):
    """Run the encoder and classifier on P1's quantized embeddings of shape (seq, hidden).

    Returns the signed logits at P1 when ``reveal`` (None elsewhere), or each
    party's 4-bit logit share otherwise.  Stage outputs are recorded in
    ``ctx.trace`` (share components at P1 and P2).
    """
    if shape is not None and shape != bundle.shape:
        raise StructuralError("offline bundle was built for a different model shape")
    if bundle.party != ctx.id:
        raise StructuralError(f"bundle belongs to P{bundle.party}, not P{ctx.id}")
    if bundle._taken:
        raise StateError("offline bundle was already used")
    sh, seq = bundle.shape, bundle.seq
    h, heads, dh = sh.hidden, sh.heads, sh.head_dim
    value = None
    if ctx.id == 1:
        data = np.asarray(inputs.data if isinstance(inputs, QuantTensor) else inputs, dtype=np.int64)
        if data.shape != (seq, h):
            raise StructuralError(f"inputs have shape {data.shape}, bundle expects {(seq, h)}")
        if data.min(initial=0) < -8 or data.max(initial=0) > 7:
            raise StructuralError("inputs must be signed 4-bit values")
        value = RingArray.wrap(data, ACC_WIDTH)
    x_rss = share_input(ctx, value, (seq, h))
    x2 = None

    def split_heads(t):
        return t.reshape(t.shape[:-2] + (seq, heads, dh)).swapaxes(-3, -2)

    for i in range(sh.layers):
        p = f"L{i}"
        if i > 0:
            (x_rss,) = convert_many(ctx, [(bundle.take(f"{p}.conv_in"), x2)])
        qkv = fc_quantized(ctx, bundle.take(f"{p}.wqkv"), x_rss)
        q, k, v = (_map_add(qkv, lambda a, j=j: a[..., j * h:(j + 1) * h]) for j in range(3))
        for name, t in (("q", q), ("k", k), ("v", v)):
            _record(ctx, f"{i}.{name}", t)
        qs, ks, vs = convert_many(ctx, [(bundle.take(f"{p}.conv_q"), q), (bundle.take(f"{p}.conv_k"), k),
                                        (bundle.take(f"{p}.conv_v"), v)])
        qh = _map_rss(qs, split_heads)
        kt = _map_rss(ks, lambda a: split_heads(a).swapaxes(-1, -2))
        vh = _map_rss(vs, split_heads)
        scores = matmul_quantized(ctx, qh, kt)
        _record(ctx, f"{i}.scores", scores)
        probs = secure_softmax(ctx, bundle.softmax(f"{p}.softmax"), scores)
        _record(ctx, f"{i}.probs", probs)
        (ps,) = convert_many(ctx, [(bundle.take(f"{p}.conv_p"), probs)])
        context = _map_add(matmul_quantized(ctx, ps, vh), lambda a: a.swapaxes(0, 1).reshape(seq, h))
        _record(ctx, f"{i}.context", context)
        (cs,) = convert_many(ctx, [(bundle.take(f"{p}.conv_ctx"), context)])
        attn = fc_quantized(ctx, bundle.take(f"{p}.wo"), cs, residual=(x_rss, bundle.take(f"{p}.res1")))
        _record(ctx, f"{i}.attn", attn)
        ln1 = secure_layernorm(ctx, bundle.layernorm(f"{p}.ln1"), attn)
        _record(ctx, f"{i}.ln1", ln1)
        (l1s,) = convert_many(ctx, [(bundle.take(f"{p}.conv_ln1"), ln1)])
        ff1 = fc_quantized(ctx, bundle.take(f"{p}.w1"), l1s)
        _record(ctx, f"{i}.ff1", ff1)
        hidden = secure_relu(ctx, bundle.take(f"{p}.relu"), ff1)
        ff2 = fc_quantized(ctx, bundle.take(f"{p}.w2"), hidden, residual=(l1s, bundle.take(f"{p}.res2")))
        _record(ctx, f"{i}.ff2", ff2)
        x2 = secure_layernorm(ctx, bundle.layernorm(f"{p}.ln2"), ff2)
        _record(ctx, f"{i}.ln2", x2)
    if sh.layers:
        (first,) = convert_many(ctx, [(bundle.take("final.conv"), None if x2 is None else x2[0])])
    else:
        first = x_rss[0]
    logits = fc_quantized(ctx, bundle.take("final.classifier"), first)
    _record(ctx, "logits", logits)
    if not bundle.consumed:
        raise StateError("offline bundle was not fully consumed")
    if not reveal:
        return logits
    out = reveal_to_p1(ctx, logits, (sh.classes,), ACT)
    return None if out is None else out.signed()


# -- trace reconstruction -----------------------------------------------------------

UNSIGNED_STAGES = ("probs",)


def reveal_trace(contexts) -> dict[str, np.ndarray]:
    """Combine P1's and P2's recorded stage shares into plaintext values (test and audit use only)."""
    t1, t2 = contexts[1].trace, contexts[2].trace
    out = {}
    for name, a in t1.items():
        v = a + t2[name]
        out[name] = v.unsigned().astype(np.int64) if name.endswith(UNSIGNED_STAGES) else v.signed()
    return out
