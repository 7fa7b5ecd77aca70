"""Per-connection statistics from a packet trace.

Packets are grouped into connections (``assemble_flows``) and each
connection is reduced to the ordered feature vector defined in
``catalog.TRACE_FEATURES`` (``extract_trace_features``).  Two vectors, one
per capture vantage, are concatenated into a signature by
``build_signature``.

Everything here looks only at what a passive observer at the capture
point can see: retransmissions are detected by sequence-space overlap at
this vantage, RTT is measured from this vantage, and loss upstream of the
capture point shows up as ``missed_data_bytes``.
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .catalog import (
    CATALOG_VERSION,
    CONNECTION_FEATURES,
    DIRECTION_FEATURES,
    DIRECTIONS,
    TRACE_FEATURES,
)
from .intervals import IntervalSet
from .pcap import PacketRecord, TcpFlags
from .sigdb import CatalogMismatch, Signature

CLIENT_SIDE = "client_side"
SERVER_SIDE = "server_side"
VANTAGES = (CLIENT_SIDE, SERVER_SIDE)

_MOD = 1 << 32
_HALF = 1 << 31


class EmptyFlow(ValueError):
    pass


def seq_diff(a: int, b: int) -> int:
    """Signed 32-bit difference ``a - b`` in sequence space."""
    return ((a - b + _HALF) % _MOD) - _HALF


def _endpoints(pkt: PacketRecord):
    return (pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port)


def _is_pure_syn(pkt: PacketRecord) -> bool:
    return pkt.has(TcpFlags.SYN) and not pkt.has(TcpFlags.ACK)


@dataclass
class FlowTrace:
    flow_key: tuple[str, int, str, int]
    packets: list[PacketRecord]
    vantage: str = CLIENT_SIDE

    def direction(self, pkt: PacketRecord) -> str:
        a_ip, a_port, _, _ = self.flow_key
        return "a2b" if (pkt.src_ip, pkt.src_port) == (a_ip, a_port) else "b2a"

    @property
    def packets_a2b(self) -> list[PacketRecord]:
        return [p for p in self.packets if self.direction(p) == "a2b"]

    @property
    def packets_b2a(self) -> list[PacketRecord]:
        return [p for p in self.packets if self.direction(p) == "b2a"]


class _Episode:
    def __init__(self, key):
        self.key = key
        self.packets: list[PacketRecord] = []
        self.syn_seq: dict = {}
        self.seq_span: dict = {}

    def add(self, pkt: PacketRecord) -> None:
        src, _ = _endpoints(pkt)
        if pkt.has(TcpFlags.SYN):
            self.syn_seq.setdefault(src, pkt.seq)
        end = (pkt.seq + pkt.payload_len) % _MOD
        if src not in self.seq_span:
            self.seq_span[src] = [pkt.seq, end]
        else:
            lo, hi = self.seq_span[src]
            if seq_diff(pkt.seq, lo) < 0:
                self.seq_span[src][0] = pkt.seq
            if seq_diff(end, hi) > 0:
                self.seq_span[src][1] = end
        self.packets.append(pkt)

    def starts_new(self, pkt: PacketRecord) -> bool:
        """A fresh SYN whose sequence number lies outside this episode."""
        if not _is_pure_syn(pkt):
            return False
        src, _ = _endpoints(pkt)
        if src in self.syn_seq:
            return self.syn_seq[src] != pkt.seq
        if src in self.seq_span:
            lo, hi = self.seq_span[src]
            return not (seq_diff(pkt.seq, lo) >= -1 and seq_diff(hi, pkt.seq) >= 0)
        return False

    def finish(self, vantage: str) -> FlowTrace:
        initiator = None
        for p in self.packets:
            if _is_pure_syn(p):
                initiator = _endpoints(p)[0]
                break
        if initiator is None:
            for p in self.packets:
                if p.has(TcpFlags.SYN):  # SYN/ACK: its receiver initiated
                    initiator = _endpoints(p)[1]
                    break
        if initiator is None:
            initiator = _endpoints(self.packets[0])[0]
        a = initiator
        b = self.key[1] if self.key[0] == a else self.key[0]
        return FlowTrace((a[0], a[1], b[0], b[1]), self.packets, vantage)


def assemble_flows(packets: list[PacketRecord], vantage: str = CLIENT_SIDE) -> list[FlowTrace]:
    """Group packets by 4-tuple episode, in order of each episode's first packet."""
    open_eps: dict = {}
    done: list[_Episode] = []
    for pkt in packets:
        key = tuple(sorted(_endpoints(pkt)))
        ep = open_eps.get(key)
        if ep is not None and ep.starts_new(pkt):
            ep = None
        if ep is None:
            ep = _Episode(key)
            open_eps[key] = ep
            done.append(ep)
        ep.add(pkt)
    return [ep.finish(vantage) for ep in done]


@dataclass
class TraceFeatureVector:
    values: dict[str, float]
    catalog_version: int = CATALOG_VERSION

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def as_array(self) -> np.ndarray:
        return np.array([self.values[n] for n in TRACE_FEATURES], dtype=float)

    @classmethod
    def zeros(cls) -> "TraceFeatureVector":
        return cls({n: 0.0 for n in TRACE_FEATURES})


@dataclass
class _Dir:
    """Running statistics for one direction (the sender is this direction's source)."""

    base: int = 0
    syn_seen: bool = False
    syn_opts: object = None
    shift: int = 0
    counts: dict = field(default_factory=lambda: dict.fromkeys(DIRECTION_FEATURES, 0))
    covered: IntervalSet = field(default_factory=IntervalSet)
    max_end: int | None = None
    min_start: int | None = None
    seg_sizes: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    last_win: int | None = None
    last_ack_state: tuple | None = None
    dup_run: int = 0
    highest_ack: int | None = None  # peer's data acked by this direction
    data_acked: bool = False  # has the peer acked any of this direction's data
    first_data_ts: float | None = None
    last_data_ts: float | None = None
    last_ts: float | None = None
    max_idle: float = 0.0
    outstanding: list = field(default_factory=list)  # [start, end, ts, ambiguous]
    rtts: list = field(default_factory=list)
    xmit_count: dict = field(default_factory=dict)


def _scaled_window(pkt: PacketRecord, d: _Dir) -> int:
    if pkt.has(TcpFlags.SYN):
        return pkt.window
    return pkt.window << d.shift


def extract_trace_features(flow: FlowTrace) -> TraceFeatureVector:
    if not flow.packets:
        raise EmptyFlow("flow has no packets")
    dirs = {"a2b": _Dir(), "b2a": _Dir()}

    # sequence bases: ISN+1 when the SYN is captured, else the first seq seen
    for name, st in dirs.items():
        for p in flow.packets:
            if flow.direction(p) != name:
                continue
            if p.has(TcpFlags.SYN):
                st.base = (p.seq + 1) % _MOD
                st.syn_seen = True
                st.syn_opts = p.options
                break
        if not st.syn_seen:
            first = next((p for p in flow.packets if flow.direction(p) == name), None)
            if first is not None:
                st.base = first.seq
    a, b = dirs["a2b"], dirs["b2a"]
    if (a.syn_opts is not None and b.syn_opts is not None
            and a.syn_opts.window_scale is not None and b.syn_opts.window_scale is not None):
        a.shift = min(a.syn_opts.window_scale, 14)
        b.shift = min(b.syn_opts.window_scale, 14)

    t0 = flow.packets[0].ts_us
    for pkt in flow.packets:
        name = flow.direction(pkt)
        d = dirs[name]
        peer = dirs["b2a" if name == "a2b" else "a2b"]
        c = d.counts
        t = (pkt.ts_us - t0) / 1e6
        c["total_pkts"] += 1
        if d.last_ts is not None:
            d.max_idle = max(d.max_idle, t - d.last_ts)
        d.last_ts = t

        syn = pkt.has(TcpFlags.SYN)
        fin = pkt.has(TcpFlags.FIN)
        rst = pkt.has(TcpFlags.RST)
        has_ack = pkt.has(TcpFlags.ACK)
        c["syn_pkts"] += syn
        c["fin_pkts"] += fin
        c["resets"] += rst
        if has_ack:
            c["ack_pkts"] += 1

        blocks = pkt.options.sack_blocks
        if blocks:
            c["sack_blocks_sent"] += len(blocks)
            c["max_sack_blocks_in_pkt"] = max(c["max_sack_blocks_in_pkt"], len(blocks))
            if has_ack:
                c["dsack_blocks_sent"] += _count_dsack(pkt.ack, blocks)

        if not rst:
            win = _scaled_window(pkt, d)
            d.windows.append(win)
            if win == 0:
                c["zero_win_adv_count"] += 1

        # --- data sent by this direction
        if pkt.payload_len > 0:
            plen = pkt.payload_len
            s = seq_diff(pkt.seq, d.base)
            e = s + plen
            c["data_pkts"] += 1
            c["data_bytes"] += plen
            d.seg_sizes.append(plen)
            if pkt.has(TcpFlags.PSH):
                c["pushed_data_pkts"] += 1
            if d.first_data_ts is None:
                d.first_data_ts = t
            d.last_data_ts = t
            if plen <= 1 and peer.last_win == 0:
                c["zero_window_probe_pkts"] += 1
                c["zero_window_probe_bytes"] += plen
            if d.syn_seen and not d.data_acked:
                c["initial_window_pkts"] += 1
                c["initial_window_bytes"] += plen
            seen = d.covered.overlap(s, e)
            if seen:
                c["rexmt_data_pkts"] += 1
                c["rexmt_data_bytes"] += seen
                for seg in d.outstanding:
                    if seg[0] < e and s < seg[1]:
                        seg[3] = True
                d.outstanding.append([s, e, t, True])
            else:
                if d.max_end is not None and s < d.max_end:
                    c["out_of_order_pkts"] += 1
                d.outstanding.append([s, e, t, False])
            c["unique_bytes"] += plen - seen
            d.covered.add(s, e)
            d.xmit_count[s] = d.xmit_count.get(s, 0) + 1
            d.max_end = e if d.max_end is None else max(d.max_end, e)
            d.min_start = s if d.min_start is None else min(d.min_start, s)

        # --- acknowledgement of the peer's data
        if has_ack:
            rel_ack = seq_diff(pkt.ack, peer.base)
            if rel_ack > 0:
                peer.data_acked = True
            if d.highest_ack is None or rel_ack > d.highest_ack:
                d.highest_ack = rel_ack
                keep = []
                for seg in peer.outstanding:
                    if seg[1] <= rel_ack:
                        if not seg[3]:
                            peer.rtts.append((t - seg[2]) * 1000.0)
                    else:
                        keep.append(seg)
                peer.outstanding = keep

            pure = pkt.payload_len == 0 and not (syn or fin or rst)
            state = (pkt.ack, pkt.window, blocks)
            if pure:
                c["pure_acks"] += 1
                if d.last_ack_state is not None and state == d.last_ack_state:
                    c["duplicate_acks_sent"] += 1
                    d.dup_run += 1
                    if d.dup_run == 3:
                        c["triple_dupacks"] += 1
                else:
                    d.dup_run = 0
            else:
                d.dup_run = 0
            d.last_ack_state = state
        if not rst:
            d.last_win = _scaled_window(pkt, d)

    values: dict[str, float] = {}
    for name in DIRECTIONS:
        values.update(_finish_direction(name, dirs[name]))
    values["duration_s"] = (max(p.ts_us for p in flow.packets) - t0) / 1e6
    values["total_pkts_both"] = float(len(flow.packets))
    values["handshake_complete"] = float(_handshake_complete(flow))
    fins = {flow.direction(p) for p in flow.packets if p.has(TcpFlags.FIN)}
    any_rst = any(p.has(TcpFlags.RST) for p in flow.packets)
    values["clean_close"] = float(fins == {"a2b", "b2a"} and not any_rst)
    assert set(values) == set(TRACE_FEATURES)
    return TraceFeatureVector({n: float(values[n]) for n in TRACE_FEATURES})


def _count_dsack(ack: int, blocks) -> int:
    """D-SACK blocks in one segment: at/below the cumulative ACK, or a first
    block nested inside the second."""
    n = 0
    for i, (left, right) in enumerate(blocks):
        if seq_diff(right, ack) <= 0:
            n += 1
        elif i == 0 and len(blocks) > 1:
            l2, r2 = blocks[1]
            if seq_diff(left, l2) >= 0 and seq_diff(r2, right) >= 0:
                n += 1
    return n


def _handshake_complete(flow: FlowTrace) -> bool:
    syn = synack = None
    for p in flow.packets:
        d = flow.direction(p)
        if syn is None and d == "a2b" and _is_pure_syn(p):
            syn = p
        elif syn is not None and synack is None and d == "b2a" \
                and p.has(TcpFlags.SYN) and p.has(TcpFlags.ACK):
            synack = p
        elif synack is not None and d == "a2b" and p.has(TcpFlags.ACK) \
                and not p.has(TcpFlags.SYN) and p.ack == (synack.seq + 1) % _MOD:
            return True
    return False


def _finish_direction(name: str, d: _Dir) -> dict[str, float]:
    c = dict(d.counts)
    opts = d.syn_opts
    if opts is not None:
        c["sack_permitted"] = int(opts.sack_permitted)
        c["window_scale_requested"] = int(opts.window_scale is not None)
        c["adv_window_scale"] = opts.window_scale or 0
        c["timestamp_requested"] = int(opts.timestamps is not None)
        c["mss_requested"] = opts.mss or 0
    if d.seg_sizes:
        c["max_segm_size"] = max(d.seg_sizes)
        c["min_segm_size"] = min(d.seg_sizes)
        c["avg_segm_size"] = sum(d.seg_sizes) / len(d.seg_sizes)
    if d.windows:
        c["max_win_adv"] = max(d.windows)
        c["min_win_adv"] = min(d.windows)
        c["avg_win_adv"] = sum(d.windows) / len(d.windows)
    c["max_idle_ms"] = d.max_idle * 1000.0
    if d.first_data_ts is not None:
        span = d.last_data_ts - d.first_data_ts
        c["data_xmit_ms"] = span * 1000.0
        c["throughput_Bps"] = c["unique_bytes"] / span if span > 0 else 0.0
    if d.rtts:
        c["rtt_samples"] = len(d.rtts)
        c["rtt_min_ms"] = min(d.rtts)
        c["rtt_max_ms"] = max(d.rtts)
        c["rtt_avg_ms"] = min(max(statistics.fmean(d.rtts), c["rtt_min_ms"]), c["rtt_max_ms"])
        c["rtt_stdev_ms"] = statistics.stdev(d.rtts) if len(d.rtts) > 1 else 0.0
    if d.xmit_count:
        c["max_rexmt_of_segment"] = max(d.xmit_count.values()) - 1
    if d.max_end is not None:
        lo = 0 if d.syn_seen else d.min_start
        lo = min(lo, d.min_start)
        c["missed_data_bytes"] = max(0, (d.max_end - lo) - d.covered.total())
    return {f"{name}_{k}": float(v) for k, v in c.items()}


def build_signature(client: TraceFeatureVector, server: TraceFeatureVector,
                    id: str = "", labels=frozenset(), meta: dict | None = None) -> Signature:
    """Concatenate client-vantage then server-vantage vectors (``cl_``/``sv_``)."""
    if client.catalog_version != server.catalog_version:
        raise CatalogMismatch(
            f"client catalog v{client.catalog_version}, server v{server.catalog_version}")
    x = np.concatenate([client.as_array(), server.as_array()])
    return Signature(id=id, x=x, labels=frozenset(labels), meta=dict(meta or {}),
                     catalog_version=client.catalog_version)


class NoFlowFound(LookupError):
    pass


def match_flows(client_flows: list[FlowTrace], server_flows: list[FlowTrace]):
    """Pair flows seen at both vantages; returns (client_flow, server_flow) pairs.

    Flows are matched on port pair (addresses may be rewritten between
    vantages by NAT); the order follows the client trace.
    """
    def ports(f: FlowTrace):
        return (f.flow_key[1], f.flow_key[3])

    by_key = {}
    for f in server_flows:
        by_key.setdefault(ports(f), []).append(f)
    pairs = []
    for f in client_flows:
        cands = by_key.get(ports(f))
        if cands:
            pairs.append((f, cands.pop(0)))
    return pairs


def primary_flow_pair(client_packets, server_packets):
    """The matched connection carrying the most packets in the client trace."""
    pairs = match_flows(assemble_flows(client_packets, CLIENT_SIDE),
                        assemble_flows(server_packets, SERVER_SIDE))
    if not pairs:
        raise NoFlowFound("no TCP connection appears in both traces")
    return max(pairs, key=lambda pr: len(pr[0].packets) + len(pr[1].packets))


def signature_from_traces(client_packets, server_packets, **kwargs) -> Signature:
    cf, sf = primary_flow_pair(client_packets, server_packets)
    return build_signature(extract_trace_features(cf), extract_trace_features(sf), **kwargs)
