"""Convenience drivers: synthetic embeddings, full local runs and agreement summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..transport.party import run_local
from ..transport.stats import CommStats
from .config import Model, QuantTensor
from .oracle import oracle_forward, quantize_embeddings, verify_trace
from .secure import OfflineBundle, PublicShape, offline_prepare, reveal_trace, secure_forward


def synthetic_values(hidden: int, seq: int, seed: int) -> np.ndarray:
    """Standard-normal real embeddings (stand in for a real embedder)."""
    return np.random.default_rng([seed, 0x5EED]).normal(0.0, 1.0, (seq, hidden))


def synthetic_embeddings(model: Model, seq: int, seed: int) -> QuantTensor:
    """Synthetic embeddings quantized at the model's input scale."""
    return quantize_embeddings(synthetic_values(model.config.hidden, seq, seed), model.config.input_scale)


def party_program(ctx, shape: PublicShape, seq: int, model: Model | None, inputs: QuantTensor | None,
                  reveal: bool = True, bundle: OfflineBundle | None = None, phase: str = "both"):
    """What one party runs: the offline phase, the online phase, or both.

    Returns the bundle after an offline-only run, otherwise the forward result.
    """
    if bundle is None:
        ctx.set_phase("offline")
        bundle = offline_prepare(ctx, shape, seq, model)
        if phase == "offline":
            return bundle
    ctx.set_phase("online")
    return secure_forward(ctx, bundle, inputs, reveal=reveal, shape=shape)


@dataclass
class LocalRun:
    logits: np.ndarray | None
    stats: CommStats
    trace: dict[str, np.ndarray]
    contexts: list


def run_secure_local(model: Model, inputs: QuantTensor, seed: int, reveal: bool = True,
                     denominator: str = "exact") -> LocalRun:
    """All three parties in-process: deal, then evaluate; returns revealed logits, stats and the stage trace."""
    shape = PublicShape.of(model.config, denominator)
    seq = inputs.shape[0]

    def program(ctx):
        return party_program(ctx, shape, seq, model if ctx.id == 0 else None, inputs if ctx.id == 1 else None,
                             reveal)

    results, stats, ctxs = run_local(program, seed)
    return LocalRun(results[1], stats, reveal_trace(ctxs), ctxs)


@dataclass
class Agreement:
    stages: list[tuple[str, bool, int]]

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.stages)

    @property
    def max_dev(self) -> int:
        return max((dev for _, _, dev in self.stages), default=0)

    def line(self) -> str:
        return f"oracle agreement: {'PASS' if self.passed else 'FAIL'} (max dev {self.max_dev})"


def agreement(model: Model, inputs: QuantTensor, trace: dict[str, np.ndarray]) -> Agreement:
    return Agreement(verify_trace(model, inputs, trace))


def oracle_logits(model: Model, inputs: QuantTensor, clip: bool = False) -> np.ndarray:
    return oracle_forward(model, inputs, clip=clip)["logits"]
