"""Feature catalog: the ordered names that define every vector layout.

Changing a name or its position is a format change and must bump
``CATALOG_VERSION``; stored signature databases and model files carry the
version and are rejected on mismatch.
"""

CATALOG_VERSION = 1

DIRECTIONS = ("a2b", "b2a")

DIRECTION_FEATURES = (
    "total_pkts",
    "ack_pkts",
    "pure_acks",
    "unique_bytes",
    "data_pkts",
    "data_bytes",
    "rexmt_data_pkts",
    "rexmt_data_bytes",
    "out_of_order_pkts",
    "pushed_data_pkts",
    "syn_pkts",
    "fin_pkts",
    "resets",
    "zero_window_probe_pkts",
    "zero_window_probe_bytes",
    "sack_permitted",
    "sack_blocks_sent",
    "max_sack_blocks_in_pkt",
    "dsack_blocks_sent",
    "window_scale_requested",
    "adv_window_scale",
    "timestamp_requested",
    "mss_requested",
    "max_segm_size",
    "min_segm_size",
    "avg_segm_size",
    "max_win_adv",
    "min_win_adv",
    "avg_win_adv",
    "zero_win_adv_count",
    "initial_window_bytes",
    "initial_window_pkts",
    "duplicate_acks_sent",
    "triple_dupacks",
    "max_idle_ms",
    "throughput_Bps",
    "data_xmit_ms",
    "rtt_samples",
    "rtt_min_ms",
    "rtt_avg_ms",
    "rtt_max_ms",
    "rtt_stdev_ms",
    "max_rexmt_of_segment",
    "missed_data_bytes",
)

CONNECTION_FEATURES = (
    "duration_s",
    "total_pkts_both",
    "handshake_complete",
    "clean_close",
)

TRACE_FEATURES = tuple(
    f"{d}_{name}" for d in DIRECTIONS for name in DIRECTION_FEATURES
) + CONNECTION_FEATURES

VANTAGE_PREFIXES = ("cl", "sv")

SIGNATURE_FEATURES = tuple(
    f"{v}_{name}" for v in VANTAGE_PREFIXES for name in TRACE_FEATURES
)

TRACE_DIM = len(TRACE_FEATURES)
SIGNATURE_DIM = len(SIGNATURE_FEATURES)

# features that are 0/1 by definition
BOOLEAN_FEATURES = frozenset(
    {"sack_permitted", "window_scale_requested", "timestamp_requested",
     "handshake_complete", "clean_close"}
)

# nonnegative integer counts
COUNT_FEATURES = frozenset(
    {"total_pkts", "ack_pkts", "pure_acks", "unique_bytes", "data_pkts",
     "data_bytes", "rexmt_data_pkts", "rexmt_data_bytes", "out_of_order_pkts",
     "pushed_data_pkts", "syn_pkts", "fin_pkts", "resets",
     "zero_window_probe_pkts", "zero_window_probe_bytes", "sack_blocks_sent",
     "max_sack_blocks_in_pkt", "dsack_blocks_sent", "zero_win_adv_count",
     "initial_window_bytes", "initial_window_pkts", "duplicate_acks_sent",
     "triple_dupacks", "rtt_samples", "max_rexmt_of_segment",
     "missed_data_bytes", "total_pkts_both"}
)


def base_name(name: str) -> str:
    """Strip vantage and direction prefixes: ``cl_a2b_total_pkts`` -> ``total_pkts``."""
    parts = name.split("_")
    if parts[0] in VANTAGE_PREFIXES:
        parts = parts[1:]
    if parts[0] in DIRECTIONS:
        parts = parts[1:]
    return "_".join(parts)
