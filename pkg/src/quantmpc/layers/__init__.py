"""Secure layers: replicated linear algebra and table-based non-linearities."""

from .linear import (
    ACC_WIDTH,
    FoldedWeights,
    ScaleSet,
    fc_quantized,
    fold_scale,
    matmul_quantized,
    quantized_dot,
    reveal_to_p1,
    rss_inner_product,
    share_input,
    zero_share,
)
from .nonlinear import (
    LayerNormMaterial,
    LayerNormParams,
    SoftmaxMaterial,
    deal_layernorm,
    deal_max,
    deal_relu,
    deal_softmax,
    mid_extract,
    secure_layernorm,
    secure_max,
    secure_relu,
    secure_softmax,
    tournament_pairs,
)

__all__ = [
    "ACC_WIDTH",
    "FoldedWeights",
    "ScaleSet",
    "LayerNormMaterial",
    "LayerNormParams",
    "SoftmaxMaterial",
    "deal_layernorm",
    "deal_max",
    "deal_relu",
    "deal_softmax",
    "fc_quantized",
    "fold_scale",
    "matmul_quantized",
    "mid_extract",
    "quantized_dot",
    "reveal_to_p1",
    "rss_inner_product",
    "secure_layernorm",
    "secure_max",
    "secure_relu",
    "secure_softmax",
    "share_input",
    "tournament_pairs",
    "zero_share",
]
