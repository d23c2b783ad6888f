"""Quantized encoder model: description, oracle, offline preparation and secure inference."""

from .config import LayerConfig, LayerNormConfig, Model, ModelConfig, QuantTensor, gen_toy_model
from .oracle import oracle_forward, quantize_embeddings, verify_trace
from .secure import OfflineBundle, PublicShape, offline_prepare, reveal_trace, secure_forward

__all__ = [
    "LayerConfig",
    "LayerNormConfig",
    "Model",
    "ModelConfig",
    "OfflineBundle",
    "PublicShape",
    "QuantTensor",
    "gen_toy_model",
    "offline_prepare",
    "oracle_forward",
    "quantize_embeddings",
    "reveal_trace",
    "secure_forward",
    "verify_trace",
]
