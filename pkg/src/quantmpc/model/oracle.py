"""Plaintext integer reference for every stage the secure engine computes.

The secure path never clips: requantization keeps the top nibble of a 16-bit
accumulator, so out-of-range values wrap.  ``clip=True`` instead saturates at
each requantization point, which is what a floating-point quantized model
would do; comparing the two modes measures how often wrapping matters.
"""

from __future__ import annotations

import math

import numpy as np

from ..layers.nonlinear import CENTERED_WIDTH, mean_multiplier
from .config import LayerNormConfig, Model, QuantTensor

ACC_MOD = 1 << 16


def to_signed(v, width: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64) & ((1 << width) - 1)
    return np.where(v >= 1 << (width - 1), v - (1 << width), v)


def top_nibble(total) -> np.ndarray:
    """Unsigned top 4 bits of a 16-bit accumulator."""
    return (np.asarray(total, dtype=np.int64) % ACC_MOD) >> 12


def requantize(total, clip: bool = False) -> np.ndarray:
    """Signed 4-bit output of a folded accumulator: wrapped top nibble, or saturated when ``clip``."""
    total = np.asarray(total, dtype=np.int64)
    if clip:
        return np.clip(np.floor_divide(total, 1 << 12), -8, 7)
    return to_signed(top_nibble(total), 4)


def quantize_embeddings(values, s_x: float) -> QuantTensor:
    """The data owner's local quantization: clip(floor(v / s_x), -8, 7)."""
    if not s_x > 0:
        raise ValueError("s_x must be positive")
    q = np.clip(np.floor(np.asarray(values, dtype=np.float64) / s_x), -8, 7).astype(np.int64)
    return QuantTensor(q, bits=4, signed=True, scale=s_x)


# -- linear -----------------------------------------------------------------------


def fc_total(x, weights, fold: int, residual=None) -> np.ndarray:
    """Exact integer accumulator sum_j fold*W[i,j]*x[j] (+ fold_r * r[i])."""
    x = np.asarray(x, dtype=np.int64)
    total = x @ (np.asarray(weights, dtype=np.int64) * int(fold)).T
    if residual is not None:
        r, fold_r = residual
        total = total + int(fold_r) * np.asarray(r, dtype=np.int64)
    return total


def fc_int(x, weights, fold: int, residual=None, clip: bool = False) -> np.ndarray:
    return requantize(fc_total(x, weights, fold, residual), clip)


def matmul_int(a, b, fold: int, clip: bool = False) -> np.ndarray:
    total = (np.asarray(a, dtype=np.int64) * int(fold)) @ np.asarray(b, dtype=np.int64)
    return requantize(total, clip)


def relu_int(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.int64), 0)


# -- softmax --------------------------------------------------------------------


def exp_values(s_x: float) -> np.ndarray:
    """Quantized exp of the ring difference d (d = 0 is the maximum itself)."""
    out = np.empty(16, dtype=np.int64)
    out[0] = 15
    for d in range(1, 16):
        out[d] = min(15, max(0, math.floor(16.0 * math.exp(s_x * (d - 16)))))
    return out


def divide_exact(u, total, kappa: int) -> np.ndarray:
    den = (np.asarray(total, dtype=np.int64) >> kappa) << kappa
    q = (16 * np.asarray(u, dtype=np.int64)) // np.where(den == 0, 1, den)
    return np.where(den == 0, 15, np.minimum(q, 15))


def divide_mid(u, mid, kappa: int) -> np.ndarray:
    den = np.asarray(mid, dtype=np.int64) << kappa
    q = (16 * np.asarray(u, dtype=np.int64)) // np.where(den == 0, 1, den)
    return np.where(den == 0, 15, np.minimum(q, 15))


def softmax_int(x, s_x: float, kappa: int = 2, denominator: str = "exact", mid_carry=0) -> np.ndarray:
    """Softmax over the last axis of signed 4-bit scores; unsigned outputs at scale 1/16.

    ``mid_carry`` (0 or 1 per row) models the share-local carry of the
    middle-nibble extraction in the ``"mid"`` mode.
    """
    x = np.asarray(x, dtype=np.int64)
    d = (x - x.max(axis=-1, keepdims=True)) & 15
    e = exp_values(s_x)[d]
    total = e.sum(axis=-1, keepdims=True) & 0xFF
    u = e & 15
    if denominator == "exact":
        return divide_exact(u, total, kappa)
    mid = ((total >> kappa) - np.asarray(mid_carry, dtype=np.int64)[..., None]) & 15
    return divide_mid(u, mid, kappa)


# -- LayerNorm ------------------------------------------------------------------


def layernorm_int(x, ln: LayerNormConfig, mean_carry=0, var_carry=0, clip: bool = False) -> np.ndarray:
    """LayerNorm over the last axis of signed 4-bit inputs.

    ``mean_carry`` / ``var_carry`` (0 or 1, broadcast per row) subtract the
    share-local truncation carry from the mean and variance nibbles.
    """
    x = np.asarray(x, dtype=np.int64)
    n = x.shape[-1]
    mean = to_signed(top_nibble(mean_multiplier(n) * x.sum(axis=-1)) - np.asarray(mean_carry), 4)
    c = x - mean[..., None]
    fold = ln.variance_fold()
    acc = (fold * c * c).sum(axis=-1)
    if clip:
        var = np.minimum(acc >> 12, 15)
    else:
        var = (top_nibble(acc) - np.asarray(var_carry, dtype=np.int64)) & 15
    c = to_signed(c, CENTERED_WIDTH)
    den = np.sqrt(var[..., None].astype(np.float64) * ln.s_var + ln.eps)
    val = (ln.gamma * (c.astype(np.float64) * ln.s_x) / den + ln.beta) / ln.s_out
    return np.clip(np.floor(val), -8, 7).astype(np.int64)


def layernorm_candidates(x, ln: LayerNormConfig) -> np.ndarray:
    """All four carry patterns, stacked on a leading axis (mean carry, variance carry)."""
    return np.stack([layernorm_int(x, ln, mc, vc) for mc in (0, 1) for vc in (0, 1)])


# -- full model -----------------------------------------------------------------


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    seq, h = x.shape
    return x.reshape(seq, heads, h // heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    heads, seq, dh = x.shape
    return x.transpose(1, 0, 2).reshape(seq, heads * dh)


def oracle_forward(model: Model, inputs: QuantTensor | np.ndarray, clip: bool = False,
                   teacher: dict | None = None) -> dict[str, np.ndarray]:
    """Run every stage on plaintext integers; returns stage name -> output.

    With ``teacher``, each stage consumes the teacher's value of its inputs
    when present (so each stage can be checked in isolation against a trace).
    """
    cfg, w = model.config, model.weights
    teacher = teacher or {}
    out: dict[str, np.ndarray] = {}

    def emit(name, value):
        out[name] = value
        return np.asarray(teacher.get(name, value), dtype=np.int64)

    x = np.asarray(inputs.data if isinstance(inputs, QuantTensor) else inputs, dtype=np.int64)
    for i, layer in enumerate(cfg.layers):
        folds = layer.folds()
        q = emit(f"{i}.q", fc_int(x, w[f"{i}.wq"], folds["q"], clip=clip))
        k = emit(f"{i}.k", fc_int(x, w[f"{i}.wk"], folds["k"], clip=clip))
        v = emit(f"{i}.v", fc_int(x, w[f"{i}.wv"], folds["v"], clip=clip))
        qh, kh, vh = (split_heads(t, cfg.heads) for t in (q, k, v))
        scores = emit(f"{i}.scores", matmul_int(qh, kh.transpose(0, 2, 1), folds["scores"], clip))
        probs = emit(f"{i}.probs", softmax_int(scores, layer.scores.s_y, cfg.kappa))
        context = emit(f"{i}.context", merge_heads(matmul_int(probs, vh, folds["context"], clip)))
        attn = emit(f"{i}.attn", fc_int(context, w[f"{i}.wo"], folds["out"], (x, folds["res1"]), clip))
        ln1 = emit(f"{i}.ln1", layernorm_int(attn, layer.ln1, clip=clip))
        ff1 = emit(f"{i}.ff1", fc_int(ln1, w[f"{i}.w1"], folds["ff1"], clip=clip))
        ff2 = emit(f"{i}.ff2", fc_int(relu_int(ff1), w[f"{i}.w2"], folds["ff2"], (ln1, folds["res2"]), clip))
        x = emit(f"{i}.ln2", layernorm_int(ff2, layer.ln2, clip=clip))
    emit("logits", fc_int(x[0], w["classifier"], cfg.classifier.fold, clip=clip))
    return out


# -- tolerance checks -----------------------------------------------------------

TRUNCATING = ("q", "k", "v", "scores", "context", "attn", "ff1", "ff2", "logits")


def ring_distance(a, b, width: int = 4) -> np.ndarray:
    d = (np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)) % (1 << width)
    return np.minimum(d, (1 << width) - d)


def check_stage(model: Model, name: str, secure: np.ndarray, reference: np.ndarray,
                ln_input: np.ndarray | None = None) -> tuple[bool, int]:
    """Compare one secure stage output with its teacher-forced reference.

    Truncating stages may sit one below the reference (mod 16); softmax must be
    within one; LayerNorm must equal one of its four carry patterns per row.
    Returns (ok, deviation): the max ring distance to the carry-free reference,
    or for LayerNorm to the closest carry pattern of each row.
    """
    secure = np.asarray(secure, dtype=np.int64)
    dev = int(ring_distance(secure, reference).max()) if secure.size else 0
    stage = name.split(".")[-1]
    if stage in TRUNCATING:
        diff = (np.asarray(reference) - secure) % 16
        return bool(np.isin(diff, (0, 1)).all()), dev
    if stage == "probs":
        return dev <= 1, dev
    if stage in ("ln1", "ln2"):
        layer = model.config.layers[int(name.split(".")[0])]
        cands = layernorm_candidates(ln_input, getattr(layer, stage))
        row_dev = ring_distance(cands, secure[None]).max(axis=-1).min(axis=0)
        return bool((row_dev == 0).all()), int(row_dev.max(initial=0))
    raise KeyError(name)


def ln_input_name(name: str) -> str:
    layer, stage = name.split(".")
    return f"{layer}.attn" if stage == "ln1" else f"{layer}.ff2"


def verify_trace(model: Model, inputs, revealed: dict[str, np.ndarray]) -> list[tuple[str, bool, int]]:
    """Teacher-forced per-stage comparison of a secure trace with the oracle."""
    reference = oracle_forward(model, inputs, teacher=revealed)
    report = []
    for name, ref in reference.items():
        if name not in revealed:
            continue
        ln_in = revealed.get(ln_input_name(name)) if name.endswith(("ln1", "ln2")) else None
        ok, dev = check_stage(model, name, revealed[name], ref, ln_in)
        report.append((name, ok, dev))
    return report


def clip_divergence(model: Model, inputs) -> dict[str, float]:
    """Fraction of elements per stage where the clip-on and clip-off pipelines disagree."""
    off = oracle_forward(model, inputs, clip=False)
    on = oracle_forward(model, inputs, clip=True)
    return {k: float(np.mean(off[k] != on[k])) for k in off}


__all__ = [
    "check_stage",
    "clip_divergence",
    "exp_values",
    "fc_int",
    "layernorm_candidates",
    "layernorm_int",
    "matmul_int",
    "oracle_forward",
    "quantize_embeddings",
    "relu_int",
    "requantize",
    "softmax_int",
    "to_signed",
    "verify_trace",
]
