"""Protocol-op tags carried in every frame header."""

CONTROL_HELLO = 0x0001  # session start: seed commitments
CONTROL_BYE = 0x0002  # session end: every peer finished without error

OFFLINE_TABLES = 0x0101  # P0 -> P2: non-seed components of shifted tables and offsets
OFFLINE_RSS = 0x0102  # P0 -> P1, P2: component 0 of dealer-shared replicated values

INPUT_SHARE = 0x0201  # P1 -> P0, P2: component 1 of the data owner's replicated input
OPEN = 0x0301  # P1 <-> P2: blinded values (table indices, reshare differences)
RSS_RESHARE = 0x0401  # P_i -> P_{i+1}: re-randomised inner-product component
FC_MASKED_Y0 = 0x0402  # P0 -> P1: masked partial sum of the quantized inner product
OUTPUT_REVEAL = 0x0501  # P2 -> P1: output share when results are revealed to the data owner

NAMES = {
    CONTROL_HELLO: "control_hello",
    CONTROL_BYE: "control_bye",
    OFFLINE_TABLES: "offline_tables",
    OFFLINE_RSS: "offline_rss",
    INPUT_SHARE: "input_share",
    OPEN: "open",
    RSS_RESHARE: "rss_reshare",
    FC_MASKED_Y0: "fc_masked_y0",
    OUTPUT_REVEAL: "output_reveal",
}

# Everything a party may legitimately put on the wire during the online phase.
ONLINE_ALLOWLIST = frozenset({INPUT_SHARE, OPEN, RSS_RESHARE, FC_MASKED_Y0, OUTPUT_REVEAL})
OFFLINE_ALLOWLIST = frozenset({OFFLINE_TABLES, OFFLINE_RSS})
CONTROL_TAGS = frozenset({CONTROL_HELLO, CONTROL_BYE})
