"""Three-party runtime: framing, byte/round accounting, in-memory and TCP networks."""

from .party import PartyContext, neighbors, open_between, run_local, transcript_digest
from .stats import CommStats
from .wire import element_bits, pack, packed_size, unpack

__all__ = [
    "CommStats",
    "PartyContext",
    "element_bits",
    "neighbors",
    "open_between",
    "pack",
    "packed_size",
    "run_local",
    "transcript_digest",
    "unpack",
]
