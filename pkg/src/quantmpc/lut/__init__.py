"""Offset-shifted lookup tables, offset groups and share conversion."""

from .protocol import (
    Dealer,
    OpenBatch,
    ShiftedTable,
    convert_many,
    convert_to_rss,
    convert_up,
    eval_group,
    eval_single,
    eval_tables,
    eval_two,
    gen_table,
    gen_table_single,
    gen_table_two,
    lut_finish,
    lut_prepare,
    reshare,
    reshare_finish,
    reshare_prepare,
    rotate_entries,
)
from .tables import (
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

__all__ = [
    "Dealer",
    "OpenBatch",
    "PlainTable",
    "ShiftedTable",
    "TableLayout",
    "conversion_table",
    "convert_many",
    "convert_to_rss",
    "convert_up",
    "eval_group",
    "eval_single",
    "eval_tables",
    "eval_two",
    "exp_table",
    "gen_table",
    "gen_table_single",
    "gen_table_two",
    "layernorm_table",
    "lut_finish",
    "lut_prepare",
    "max_table",
    "relu_table",
    "reshare",
    "reshare_finish",
    "reshare_prepare",
    "rotate_entries",
    "softmax_division_table",
    "softmax_mid_division_table",
]
