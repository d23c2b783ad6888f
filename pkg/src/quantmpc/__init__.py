"""Three-party secure inference for quantized transformers.

Replicated secret sharing handles the linear algebra, offset-shifted lookup
tables handle everything nonlinear (activations, softmax, normalisation,
truncation and share conversion).
"""

from .ring import RingArray, decode_signed, encode_signed, ring_arith, trc
from .sharing import AdditiveShare, RssShare, SeedPair, reveal2, reveal3, share2, share3, share_linear

__version__ = "0.1.0"

__all__ = [
    "AdditiveShare",
    "RingArray",
    "RssShare",
    "SeedPair",
    "decode_signed",
    "encode_signed",
    "reveal2",
    "reveal3",
    "ring_arith",
    "share2",
    "share3",
    "share_linear",
    "trc",
]
