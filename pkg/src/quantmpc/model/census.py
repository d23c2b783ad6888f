"""Closed-form communication census of one secure forward pass.

Counts are payload bytes only (frame headers are tracked separately by the
transport).  Each transmitted array is packed on its own, so every term below
is ``packed(count, width)`` of one array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..transport.wire import packed_size as packed
from .secure import PublicShape

ACC = 16
ACT = 4


@dataclass
class Census:
    offline_bytes: int
    offline_rounds: int
    online_bytes: int
    online_rounds: int
    p0_online_messages: int
    tables: dict[str, int]

    def as_dict(self) -> dict[str, int]:
        out = {
            "offline_bytes": self.offline_bytes,
            "offline_rounds": self.offline_rounds,
            "online_bytes": self.online_bytes,
            "online_rounds": self.online_rounds,
            "p0_online_messages": self.p0_online_messages,
        }
        out.update({f"tables.{k}": v for k, v in sorted(self.tables.items())})
        return out


def tournament_levels(n: int) -> list[int]:
    levels = []
    while n > 1:
        levels.append(n // 2)
        n -= n // 2
    return levels


def _table(count: int, a: int, b: int, out: int, slot_counts) -> int:
    """Dealer bytes for a batch of tables: P2's entry shares plus its offset shares."""
    return packed(count << (a + b), out) + sum(packed(c, w) for c, w in slot_counts)


def _rss(count: int) -> int:
    return 2 * packed(count, ACC)  # component 0 goes to both P1 and P2


def _open(*segments) -> int:
    return 2 * sum(packed(c, w) for c, w in segments)  # P1 -> P2 and P2 -> P1


def census(shape: PublicShape, seq: int, reveal: bool = True) -> Census:
    h, f, heads, s, cls = shape.hidden, shape.ffn, shape.heads, seq, shape.classes
    rows = heads * s  # attention rows
    probs = rows * s
    exact = shape.denominator == "exact"
    levels = tournament_levels(s)

    # -- offline
    conv_sh = _table(s * h, ACT, 0, ACC, [(s * h, ACT)])
    ln = (_table(2 * s * h, ACT, 0, ACC, [(s * h, ACT)])
          + _table(2 * s, ACT, 0, ACC, [(s, ACT)])
          + _table(s * h, 5, ACT, ACT, [(s * h, 5), (s, ACT)]))
    div_b = 8 if exact else ACT
    softmax = (sum(_table(rows * p, ACT, ACT, ACT, [(rows * p, ACT), (rows * p, ACT)]) for p in levels)
               + _table(probs, ACT, 0, 8, [(probs, ACT)])
               + _table(probs, ACT, div_b, ACT, [(probs, ACT), (rows, div_b)]))
    per_layer = (4 * conv_sh  # q, k, v, context
                 + softmax
                 + _table(probs, ACT, 0, ACC, [(probs, ACT)])  # probabilities
                 + conv_sh  # LayerNorm-1 output
                 + _table(s * f, ACT, 0, ACC, [(s * f, ACT)])  # ReLU
                 + 2 * ln
                 + _rss(3 * h * h) + _rss(h * h) + _rss(f * h) + _rss(h * f) + 2 * _rss(1))
    offline = shape.layers * per_layer + max(shape.layers - 1, 0) * conv_sh + _rss(cls * h)
    if shape.layers:
        offline += _table(h, ACT, 0, ACC, [(h, ACT)])

    # -- online
    convert = _open((s * h, ACT)) + _open((s * h, ACC))
    ln_online = (_open((s * h, ACT))
                 + _open((2 * s * h, ACC), (s, ACT))
                 + _open((2 * s, ACC))
                 + packed(s, ACC)
                 + _open((s * h, 5), (s, ACT)))
    sm_online = (sum(_open((rows * p, ACT), (rows * p, ACT)) for p in levels)
                 + _open((probs, ACT))
                 + _open((probs, ACT), (rows, div_b)))
    layer_online = (packed(3 * s * h, ACC)  # q, k, v
                    + 3 * convert
                    + packed(probs, ACC)  # scores
                    + sm_online
                    + _open((probs, ACT)) + _open((probs, ACC))
                    + packed(s * h, ACC)  # context
                    + convert
                    + packed(s * h, ACC)  # output projection
                    + 2 * ln_online
                    + convert
                    + packed(s * f, ACC)
                    + _open((s * f, ACT)) + _open((s * f, ACC))
                    + packed(s * h, ACC))
    online = 2 * packed(s * h, ACC) + shape.layers * layer_online + max(shape.layers - 1, 0) * convert
    online += packed(cls, ACC)
    if shape.layers:
        online += _open((h, ACT)) + _open((h, ACC))
    if reveal:
        online += packed(cls, ACT)

    softmax_rounds = len(levels) + 2
    layer_rounds = 1 + 2 + 1 + softmax_rounds + 2 + 1 + 2 + 1 + 5 + 2 + 1 + 2 + 1 + 5
    rounds = (1 + shape.layers * layer_rounds + 2 * max(shape.layers - 1, 0)
              + (2 if shape.layers else 0) + 1 + (1 if reveal else 0))

    tables = {
        "max": shape.layers * rows * (s - 1),
        "exp": shape.layers * probs,
        "division": shape.layers * probs,
        "layernorm": shape.layers * 2 * s * h,
    }
    return Census(offline, 1, online, rounds, 8 * shape.layers + 1, tables)


def ceil_log2(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0
