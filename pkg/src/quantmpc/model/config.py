"""Model description: dimensions, per-layer scales, LayerNorm parameters and binary weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..layers.linear import ScaleSet, fold_scale
from ..layers.nonlinear import SOFTMAX_CAP, LayerNormParams

PROB_SCALE = 1.0 / 16


@dataclass
class QuantTensor:
    """Integer tensor with its bit width, signedness and dequantization scale."""

    data: np.ndarray
    bits: int
    signed: bool
    scale: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        lo, hi = (-(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1) if self.signed else (0, (1 << self.bits) - 1)
        if self.data.size and (self.data.min() < lo or self.data.max() > hi):
            raise ConfigError(f"entries outside the {self.bits}-bit {'signed' if self.signed else 'unsigned'} range")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return self.data * self.scale


LayerNormConfig = LayerNormParams


@dataclass
class LayerConfig:
    """Scales of one post-norm encoder block.

    ``scores.gain`` carries 1/sqrt(d_head); ``context.s_x`` is the fixed
    probability scale 1/16.  ``res1``/``res2`` are the residual ratios
    s_skip / s_sum folded into the output projection and the second FFN layer.
    """

    q: ScaleSet
    k: ScaleSet
    v: ScaleSet
    scores: ScaleSet
    context: ScaleSet
    out: ScaleSet
    res1: float
    ln1: LayerNormConfig
    ff1: ScaleSet
    ff2: ScaleSet
    res2: float
    ln2: LayerNormConfig

    def folds(self) -> dict[str, int]:
        return {
            "q": self.q.fold, "k": self.k.fold, "v": self.v.fold, "scores": self.scores.fold,
            "context": self.context.fold, "out": self.out.fold, "res1": fold_scale(self.res1),
            "ff1": self.ff1.fold, "ff2": self.ff2.fold, "res2": fold_scale(self.res2),
            "var1": self.ln1.variance_fold(), "var2": self.ln2.variance_fold(),
        }


@dataclass
class ModelConfig:
    hidden: int
    heads: int
    ffn: int
    max_seq: int
    classes: int
    input_scale: float
    layers: list[LayerConfig] = field(default_factory=list)
    classifier: ScaleSet | None = None
    kappa: int = 2
    softmax_cap: int = SOFTMAX_CAP

    def __post_init__(self):
        for name in ("hidden", "heads", "ffn", "max_seq", "classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if self.max_seq > self.softmax_cap:
            raise ConfigError(f"sequence cap {self.max_seq} exceeds the softmax cap {self.softmax_cap}")
        if not 0 <= self.kappa <= 4:
            raise ConfigError(f"kappa must lie in 0..4, got {self.kappa}")
        if not self.input_scale > 0:
            raise ConfigError("input scale must be positive")
        for layer in self.layers:
            layer.folds()  # every folded scale must fit 15 bits
            for ln in (layer.ln1, layer.ln2):
                if ln.gamma.shape != (self.hidden,) or ln.beta.shape != (self.hidden,):
                    raise ConfigError("LayerNorm parameters need one entry per channel")
        if self.classifier is not None:
            self.classifier.fold

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def weight_shapes(self) -> dict[str, tuple[int, int]]:
        h, f = self.hidden, self.ffn
        shapes = {}
        for i in range(self.n_layers):
            shapes.update({f"{i}.wq": (h, h), f"{i}.wk": (h, h), f"{i}.wv": (h, h), f"{i}.wo": (h, h),
                           f"{i}.w1": (f, h), f"{i}.w2": (h, f)})
        shapes["classifier"] = (self.classes, h)
        return shapes


@dataclass
class Model:
    config: ModelConfig
    weights: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.config.weight_shapes()
        if set(shapes) != set(self.weights):
            raise ConfigError(f"weights {sorted(self.weights)} do not match the configuration")
        for name, w in self.weights.items():
            w = np.asarray(w, dtype=np.int8)
            if w.shape != shapes[name]:
                raise ConfigError(f"weight {name} has shape {w.shape}, expected {shapes[name]}")
            if not np.isin(w, (-1, 1)).all():
                raise ConfigError(f"weight {name} is not binary")
            self.weights[name] = w


def _linear(rng, s_x: float, s_y: float, fan_in: int, gain: float = 1.0) -> ScaleSet:
    """Pick a weight scale so the folded ratio is about 1/(1.5 sqrt(fan_in)) with mild jitter."""
    ratio = rng.uniform(0.8, 1.2) / (1.5 * math.sqrt(fan_in))
    return ScaleSet(s_x=s_x, s_w=ratio * s_y / (gain * s_x), s_y=s_y, gain=gain)


def _layernorm(rng, n: int, s_x: float, s_out: float, eps: float) -> LayerNormConfig:
    return LayerNormConfig(
        gamma=rng.uniform(0.5, 1.5, n),
        beta=rng.uniform(-0.5, 0.5, n),
        s_x=s_x,
        s_var=4.0 * s_x * s_x,
        s_out=s_out,
        eps=eps,
    )


def gen_toy_model(hidden: int = 64, layers: int = 2, heads: int = 4, ffn: int | None = None, max_seq: int = 16,
                  classes: int = 2, seed: int = 0, kappa: int = 2, eps: float = 1.0) -> Model:
    """Random binary-weight encoder with scales chosen to keep activations in range."""
    if hidden < 1 or layers < 0 or heads < 1:
        raise ConfigError("hidden and heads must be positive and layers non-negative")
    ffn = 4 * hidden if ffn is None else ffn
    rng = np.random.default_rng(seed)
    s_block, s_act, s_res, s_ln = 0.25, 0.5, 0.5, 0.25
    s_score = 0.375
    dh = hidden // heads if hidden % heads == 0 else 1
    cfg_layers = []
    s_in = s_block
    for _ in range(layers):
        cfg_layers.append(LayerConfig(
            q=_linear(rng, s_in, s_act, hidden),
            k=_linear(rng, s_in, s_act, hidden),
            v=_linear(rng, s_in, s_act, hidden),
            scores=ScaleSet(s_x=s_act, s_w=s_act, s_y=s_score, gain=1.0 / math.sqrt(dh)),
            context=ScaleSet(s_x=PROB_SCALE, s_w=s_act, s_y=s_act),
            out=_linear(rng, s_act, s_res, hidden),
            res1=s_in / s_res,
            ln1=_layernorm(rng, hidden, s_res, s_ln, eps),
            ff1=_linear(rng, s_ln, s_act, hidden),
            ff2=_linear(rng, s_act, s_res, ffn),
            res2=s_ln / s_res,
            ln2=_layernorm(rng, hidden, s_res, s_ln, eps),
        ))
        s_in = s_ln
    cfg = ModelConfig(hidden=hidden, heads=heads, ffn=ffn, max_seq=max_seq, classes=classes,
                      input_scale=s_block, layers=cfg_layers,
                      classifier=_linear(rng, s_in, s_act, hidden), kappa=kappa)
    weights = {name: np.where(rng.random(shape) < 0.5, -1, 1).astype(np.int8)
               for name, shape in cfg.weight_shapes().items()}
    return Model(cfg, weights)
