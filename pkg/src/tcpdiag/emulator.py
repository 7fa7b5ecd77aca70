"""Discrete-event emulation of a client/server TCP transfer with client faults.

One connection is simulated: the client opens it, uploads a request,
the server answers with a bulk download, and both sides close.  Every
packet is recorded at the sending host when it leaves and at the
receiving host when it arrives, giving a client-side and a server-side
capture.  Between the two hosts each direction has a fixed-rate drop-tail
bottleneck, a propagation delay, and independent Bernoulli loss.

Client faults:

* ``sack_disabled`` - the client SYN carries no SACK-permitted option.
* ``dsack_disabled`` - the client never reports duplicate segments.
* ``read_buffer_bytes`` - the client receive buffer is capped; the
  client application drains it periodically, so the advertised window
  shrinks and can close.
* ``write_buffer_bytes`` - the client send buffer is capped, bounding its
  unacknowledged upload data.

Congestion-control variants are growth laws only (Reno, a cubic window
curve, binary-increase), not stack-faithful implementations.
"""
from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field, replace

from .intervals import IntervalSet
from .pcap import (
    ETH_HEADER_LEN,
    IPV4_HEADER_LEN,
    TCP_HEADER_LEN,
    PacketRecord,
    TcpFlags,
    TcpOptionSet,
    make_packet,
    options_wire_len,
)

VARIANTS = ("reno", "cubic_like", "bic_like")

DEFAULT_MSS = 1460
DEFAULT_TRANSFER = 200_000
DEFAULT_BUFFER = 4 * 1024 * 1024
BUFFER_LEVELS_MSS = {"small": 2, "medium": 8, "large": 32}

MIN_RTO_NS = 200_000_000
INITIAL_RTO_NS = 1_000_000_000
MAX_RTO_NS = 60_000_000_000
DELACK_NS = 40_000_000
MAX_SIM_NS = 600_000_000_000
MAX_EVENTS = 5_000_000

CLIENT_IP = "10.0.0.1"
SERVER_IP = "10.0.1.1"
SERVER_PORT = 80
BASE_TIME_US = 1_300_000_000_000_000

_MOD = 1 << 32


class ConfigInvalid(ValueError):
    pass


class TransferStalled(RuntimeError):
    pass


def derive_seed(master: int, *path) -> int:
    """64-bit child seed: SHA-256 over the master seed and a label path."""
    h = hashlib.sha256(str(int(master)).encode())
    for part in path:
        h.update(b"/" + str(part).encode())
    return int.from_bytes(h.digest()[:8], "big")


def buffer_level(level: str, mss: int = DEFAULT_MSS) -> int:
    return BUFFER_LEVELS_MSS[level] * mss


@dataclass(frozen=True)
class LinkConfig:
    rate_Mbps: float = 80.0
    one_way_delay_ms: float = 10.0
    loss_pct: float = 0.0
    seed: int = 0
    queue_pkts: int = 100

    def validate(self) -> None:
        if not self.rate_Mbps > 0 or not self.one_way_delay_ms > 0:
            raise ConfigInvalid("link rate and delay must be positive")
        if not 0.0 <= self.loss_pct <= 100.0:
            raise ConfigInvalid(f"loss_pct {self.loss_pct} outside 0-100")
        if self.queue_pkts < 1:
            raise ConfigInvalid("queue must hold at least one packet")

    def to_dict(self) -> dict:
        return {"rate_Mbps": self.rate_Mbps, "delay_ms": self.one_way_delay_ms,
                "loss_pct": self.loss_pct}


@dataclass(frozen=True)
class FaultConfig:
    sack_disabled: bool = False
    dsack_disabled: bool = False
    read_buffer_bytes: int | None = None
    write_buffer_bytes: int | None = None

    def validate(self, mss: int) -> None:
        for name in ("read_buffer_bytes", "write_buffer_bytes"):
            cap = getattr(self, name)
            if cap is not None and cap < mss:
                raise ConfigInvalid(f"{name}={cap} is below one MSS ({mss})")

    def labels(self) -> frozenset[str]:
        out = set()
        if self.sack_disabled:
            out.add("cf_1")
        if self.dsack_disabled:
            out.add("cf_2")
        if self.read_buffer_bytes is not None:
            out.add("cf_3")
        if self.write_buffer_bytes is not None:
            out.add("cf_4")
        return frozenset(out) or frozenset(["cf_0"])


@dataclass(frozen=True)
class TransferConfig:
    bytes_to_send: int = DEFAULT_TRANSFER
    mss: int = DEFAULT_MSS
    tcp_variant: str = "reno"
    initial_cwnd: int = 10
    request_bytes: int = DEFAULT_TRANSFER
    app_read_interval_ms: float = 1.0

    def validate(self) -> None:
        if self.bytes_to_send < 1 or self.request_bytes < 1:
            raise ConfigInvalid("transfer sizes must be >= 1 byte")
        if self.tcp_variant not in VARIANTS:
            raise ConfigInvalid(f"unknown tcp_variant {self.tcp_variant!r}")
        if not 536 <= self.mss <= 9000:
            raise ConfigInvalid(f"mss {self.mss} out of range")
        if self.initial_cwnd < 1:
            raise ConfigInvalid("initial_cwnd must be >= 1")
        if self.app_read_interval_ms < 0:
            raise ConfigInvalid("app_read_interval_ms must be >= 0")


@dataclass
class SimResult:
    client: list[PacketRecord]
    server: list[PacketRecord]
    stalled: bool = False
    duration_s: float = 0.0
    events: int = 0
    emitted: dict = field(default_factory=dict)  # packets sent per host
    client_duplicate_arrivals: int = 0
    drops: dict = field(default_factory=dict)

    @property
    def client_count(self) -> int:
        return len(self.client)

    @property
    def server_count(self) -> int:
        return len(self.server)


# ---------------------------------------------------------------- congestion control

class Reno:
    def __init__(self, initial_cwnd: int):
        self.cwnd = float(initial_cwnd)
        self.ssthresh = math.inf

    def on_ack(self, acked: float, now: float, rtt: float) -> None:
        if self.cwnd < self.ssthresh:
            self.cwnd += acked
        else:
            self.grow(acked, now, rtt)

    def grow(self, acked, now, rtt):
        self.cwnd += acked / self.cwnd

    def on_loss(self, flight: float, now: float) -> None:
        self.ssthresh = max(flight / 2.0, 2.0)
        self.cwnd = self.ssthresh

    def on_timeout(self, flight: float, now: float) -> None:
        self.ssthresh = max(flight / 2.0, 2.0)
        self.cwnd = 1.0


class CubicLike(Reno):
    C = 0.4
    BETA = 0.7

    def __init__(self, initial_cwnd):
        super().__init__(initial_cwnd)
        self.w_max = None
        self.epoch = None

    def grow(self, acked, now, rtt):
        if self.epoch is None:
            self.epoch = now
            self.w_max = self.w_max or self.cwnd
        k = ((self.w_max * (1 - self.BETA)) / self.C) ** (1 / 3)
        t = now - self.epoch + rtt
        target = self.C * (t - k) ** 3 + self.w_max
        if target > self.cwnd:
            self.cwnd += (target - self.cwnd) / self.cwnd * acked
        else:
            self.cwnd += 0.01 * acked / self.cwnd

    def on_loss(self, flight, now):
        self.w_max = self.cwnd
        self.epoch = now
        self.ssthresh = max(self.cwnd * self.BETA, 2.0)
        self.cwnd = self.ssthresh

    def on_timeout(self, flight, now):
        self.w_max = self.cwnd
        self.epoch = None
        super().on_timeout(flight, now)


class BicLike(Reno):
    BETA = 0.8
    S_MAX = 32.0
    S_MIN = 1.0

    def __init__(self, initial_cwnd):
        super().__init__(initial_cwnd)
        self.w_max = None

    def grow(self, acked, now, rtt):
        if self.w_max is None:
            inc = self.S_MIN
        elif self.cwnd < self.w_max:
            inc = (self.w_max - self.cwnd) / 2.0  # binary search toward w_max
        else:
            inc = self.cwnd - self.w_max  # max probing
        inc = min(max(inc, self.S_MIN), self.S_MAX)
        self.cwnd += inc * acked / self.cwnd

    def on_loss(self, flight, now):
        self.w_max = self.cwnd
        self.ssthresh = max(self.cwnd * self.BETA, 2.0)
        self.cwnd = self.ssthresh

    def on_timeout(self, flight, now):
        self.w_max = self.cwnd
        super().on_timeout(flight, now)


_CC = {"reno": Reno, "cubic_like": CubicLike, "bic_like": BicLike}


def window_shift(buffer_bytes: int) -> int:
    """Smallest scale shift that lets the 16-bit window field cover the buffer."""
    shift = 0
    while (buffer_bytes >> shift) > 0xFFFF and shift < 14:
        shift += 1
    return shift


# ---------------------------------------------------------------- network

class Sim:
    def __init__(self):
        self.now = 0
        self._queue: list = []
        self._n = 0
        self.events = 0

    def at(self, t: int, fn, *args) -> None:
        self._n += 1
        heapq.heappush(self._queue, (t, self._n, fn, args))

    def run(self) -> bool:
        """Run to quiescence; False when the time or event cap is hit."""
        while self._queue:
            t, _, fn, args = heapq.heappop(self._queue)
            if t > MAX_SIM_NS or self.events >= MAX_EVENTS:
                return False
            self.now = t
            self.events += 1
            fn(*args)
        return True


class Link:
    """One direction: drop-tail FIFO into a fixed-rate pipe, then delay and loss."""

    def __init__(self, sim: Sim, cfg: LinkConfig, seed: int):
        self.sim = sim
        self.ns_per_byte = 8_000.0 / cfg.rate_Mbps
        self.delay = int(round(cfg.one_way_delay_ms * 1e6))
        self.loss = cfg.loss_pct / 100.0
        self.depth = cfg.queue_pkts
        self.rng = random.Random(seed)
        self.busy_until = 0
        self.departures: list[int] = []
        self.lost = 0
        self.dropped = 0
        self.sink = None

    def send(self, pkt: PacketRecord) -> None:
        now = self.sim.now
        lost = self.rng.random() < self.loss
        while self.departures and self.departures[0] <= now:
            self.departures.pop(0)
        if len(self.departures) >= self.depth:
            self.dropped += 1
            return
        start = max(now, self.busy_until)
        done = start + int(round(pkt.original_len * self.ns_per_byte))
        self.busy_until = done
        self.departures.append(done)
        if lost:
            self.lost += 1
            return
        self.sim.at(done + self.delay, self.sink, pkt)


# ---------------------------------------------------------------- endpoint

class Host:
    def __init__(self, sim: Sim, name: str, ip: str, port: int, isn: int,
                 transfer: TransferConfig, send_total: int, recv_total: int,
                 rcv_buf: int, snd_buf: int | None, sack_ok: bool, dsack: bool,
                 read_interval_ns: int, clock_offset_ms: int):
        self.sim = sim
        self.name = name
        self.ip, self.port = ip, port
        self.isn = isn
        self.mss = transfer.mss
        self.capture: list[PacketRecord] = []
        self.link: Link | None = None
        self.peer: Host | None = None
        self.cc = _CC[transfer.tcp_variant](transfer.initial_cwnd)
        self.offer_sack = sack_ok
        self.dsack = dsack
        self.clock_offset_ms = clock_offset_ms

        # connection state
        self.established = False
        self.syn_sent = False
        self.sack = False
        self.ts_recent = 0
        self.peer_isn = None
        self.peer_shift = 0
        self.peer_mss = transfer.mss

        # sender
        self.send_total = send_total
        self.may_send = False
        self.may_close = False
        self.snd_una = 0
        self.snd_nxt = 0
        self.snd_max = 0
        self.fin_sent = False
        self.snd_buf = snd_buf
        # bytes the application has handed to the socket; each write ends with PSH
        self.app_written = 0
        self.push_points: set[int] = set()
        self.peer_rwnd = 65535
        self.sacked = IntervalSet()
        self.rexmitted = IntervalSet()
        self.in_recovery = False
        self.recovery_point = 0
        self.dupacks = 0
        self.srtt = None
        self.rttvar = 0.0
        self.rto = INITIAL_RTO_NS
        self.timer_gen = 0
        self.timer_armed = False
        self.done_sending = False

        # receiver
        self.recv_total = recv_total
        self.rcv_buf = rcv_buf
        self.rcv_shift = window_shift(rcv_buf)
        self.rcv_nxt = 0
        self.ooo = IntervalSet()
        self.unread = 0
        self.fin_received = False
        self.last_adv = None
        self.right_edge = None
        self.pending_acks = 0
        self.delack_gen = 0
        self.delack_armed = False
        self.read_interval = read_interval_ns
        self.read_armed = False
        self.recent_blocks: list[tuple[int, int]] = []
        self.duplicate_arrivals = 0
        self.emitted = 0

    # -- helpers
    def clock_ms(self) -> int:
        return (self.sim.now // 1_000_000 + self.clock_offset_ms) & 0xFFFFFFFF

    def _emit(self, flags: TcpFlags, seq_rel: int, payload: int,
              options: TcpOptionSet, syn: bool = False) -> None:
        seq = (self.isn if syn else self.isn + 1 + seq_rel) % _MOD
        ack = 0
        if flags & TcpFlags.ACK:
            ack = (self.peer_isn + 1 + self.rcv_nxt) % _MOD
        window = self.rcv_buf if syn else self._window_field()
        pkt = make_packet(BASE_TIME_US + self.sim.now // 1000, self.ip, self.peer.ip,
                          self.port, self.peer.port, seq, ack, flags,
                          min(window, 0xFFFF), payload, options)
        self.capture.append(pkt)
        self.emitted += 1
        self.link.send(pkt)

    def _ts_opt(self) -> tuple[int, int]:
        return (self.clock_ms(), self.ts_recent)

    # -- receive window
    def _free(self) -> int:
        return max(0, self.rcv_buf - self.unread - self.ooo.total())

    def _adv_bytes(self) -> int:
        free = self._free()
        if free < min(self.mss, self.rcv_buf // 2):
            free = 0  # receiver-side silly window avoidance
        return free

    def _window_field(self) -> int:
        adv = self._adv_bytes()
        if self.right_edge is not None:
            adv = max(adv, self.right_edge - self.rcv_nxt)  # never shrink the window
        field = min(adv >> self.rcv_shift, 0xFFFF)
        self.last_adv = field << self.rcv_shift
        self.right_edge = self.rcv_nxt + self.last_adv
        return field

    # -- handshake
    def connect(self) -> None:
        self.syn_sent = True
        opts = TcpOptionSet(mss=self.mss, window_scale=self.rcv_shift,
                            sack_permitted=self.offer_sack, timestamps=self._ts_opt())
        self._emit(TcpFlags.SYN, 0, 0, opts, syn=True)
        self._arm_timer(self.rto)

    def _send_synack(self) -> None:
        opts = TcpOptionSet(mss=self.mss, window_scale=self.rcv_shift,
                            sack_permitted=self.sack, timestamps=self._ts_opt())
        self._emit(TcpFlags.SYN | TcpFlags.ACK, 0, 0, opts, syn=True)
        self._arm_timer(self.rto)

    # -- timers
    def _arm_timer(self, delay: int) -> None:
        self.timer_gen += 1
        self.timer_armed = True
        self.sim.at(self.sim.now + delay, self._on_timer, self.timer_gen)

    def _cancel_timer(self) -> None:
        self.timer_gen += 1
        self.timer_armed = False

    def _outstanding(self) -> bool:
        return self.snd_una < self.snd_max

    def _on_timer(self, gen: int) -> None:
        if gen != self.timer_gen:
            return
        self.timer_armed = False
        if not self.established:
            self.rto = min(self.rto * 2, MAX_RTO_NS)
            if self.peer_isn is None:
                self.connect()
            else:
                self._send_synack()
            return
        if self._outstanding():
            self.rto = min(self.rto * 2, MAX_RTO_NS)
            flight = (self.snd_max - self.snd_una) / self.mss
            self.cc.on_timeout(flight, self.sim.now / 1e9)
            self.in_recovery = False
            self.dupacks = 0
            # SACK information is not trusted after a timeout
            self.sacked.clear()
            self.rexmitted.clear()
            self.snd_nxt = self.snd_una
            if self.fin_sent and self.snd_una <= self.send_total:
                self.fin_sent = False
            self._try_send()
            if not self.timer_armed:
                self._arm_timer(self.rto)
        elif self._blocked_by_rwnd():
            self._send_probe()
            self._arm_timer(self.rto)

    def _blocked_by_rwnd(self) -> bool:
        return self.may_send and self.snd_nxt < self.app_written and self.peer_rwnd < min(
            self.mss, self.app_written - self.snd_nxt)

    def _send_probe(self) -> None:
        self._send_segment(self.snd_nxt, 1)

    # -- sending
    def _seg_flags(self, end: int) -> TcpFlags:
        flags = TcpFlags.ACK
        if end in self.push_points:
            flags |= TcpFlags.PSH
        return flags

    def _send_segment(self, start: int, length: int) -> None:
        end = start + length
        retrans = start < self.snd_max
        self._emit(self._seg_flags(end), start, length,
                   TcpOptionSet(timestamps=self._ts_opt(), sack_blocks=self._sack_blocks()))
        self._ack_sent()
        if end > self.snd_nxt:
            self.snd_nxt = end
        self.snd_max = max(self.snd_max, end)
        if retrans:
            self.rexmitted.add(start, end)
        if not self.timer_armed:
            self._arm_timer(self.rto)

    def _pipe(self) -> int:
        """Bytes believed in flight: sent, not SACKed, not presumed lost."""
        lo, hi = self.snd_una, self.snd_nxt
        if hi <= lo:
            return 0
        pipe = (hi - lo) - self.sacked.overlap(lo, hi)
        if self.in_recovery and self.sack and self.sacked:
            high = min(self.sacked.max_end(), hi)
            holes = (high - lo) - self.sacked.overlap(lo, high)
            resent = self.rexmitted.overlap(lo, high) - _overlap_both(
                self.rexmitted, self.sacked, lo, high)
            pipe -= max(holes - resent, 0)
        return max(pipe, 0)

    def _next_hole(self):
        """Lowest un-SACKed, not-yet-retransmitted byte range below the highest SACK."""
        if not self.sacked:
            return None
        high = self.sacked.max_end()
        x = self.snd_una
        while x < high:
            blk = self.sacked.find(x) or self.rexmitted.find(x)
            if blk is not None:
                x = blk[1]
                continue
            end = min(x + self.mss, high)
            nxt = [s for s, _ in self.sacked if s > x] + [s for s, _ in self.rexmitted if s > x]
            if nxt:
                end = min(end, min(nxt))
            return x, end
        return None

    def _app_write(self) -> None:
        """Let the application queue more data into the send buffer.

        An uncapped socket takes the whole transfer in one write.  A capped one
        wakes the writer once a third of the buffer is free, as Linux does.
        """
        left = self.send_total - self.app_written
        if not self.may_send or left <= 0:
            return
        if self.snd_buf is None:
            chunk = left
        else:
            free = self.snd_una + self.snd_buf - self.app_written
            if free <= 0 or (free < left and 3 * free < self.snd_buf):
                return
            chunk = min(free, left)
        self.app_written += chunk
        self.push_points.add(self.app_written)

    def _try_send(self) -> None:
        if not self.established:
            return
        self._app_write()
        cwnd_bytes = int(self.cc.cwnd * self.mss)
        while True:
            if self.in_recovery and self.sack:
                hole = self._next_hole()
                if hole is not None and self._pipe() + (hole[1] - hole[0]) <= max(cwnd_bytes, self.mss):
                    self._send_segment(hole[0], hole[1] - hole[0])
                    continue
            if not self.may_send or self.snd_nxt >= self.send_total:
                break
            if self.snd_nxt >= self.app_written:
                break
            length = min(self.mss, self.app_written - self.snd_nxt)
            if self.snd_nxt < self.snd_max:
                # go-back-N after a timeout: resend what the cumulative ACK lacks
                length = min(length, self.snd_max - self.snd_nxt)
            end = self.snd_nxt + length
            if self._pipe() + length > cwnd_bytes:
                break
            if end - self.snd_una > self.peer_rwnd:
                break
            if self.snd_buf is not None and end - self.snd_una > self.snd_buf:
                break
            self._send_segment(self.snd_nxt, length)
        if (self.may_close and not self.fin_sent and self.snd_nxt >= self.send_total
                and self.snd_una >= self.send_total):
            self._send_fin()
        if (not self._outstanding() and not self.timer_armed and self._blocked_by_rwnd()):
            self._arm_timer(self.rto)  # persist timer

    def _send_fin(self) -> None:
        self.fin_sent = True
        self._emit(TcpFlags.FIN | TcpFlags.ACK, self.send_total, 0,
                   TcpOptionSet(timestamps=self._ts_opt()))
        self._ack_sent()
        self.snd_nxt = self.send_total + 1
        self.snd_max = max(self.snd_max, self.snd_nxt)
        if not self.timer_armed:
            self._arm_timer(self.rto)

    # -- ACK processing (this host as sender)
    def _on_ack(self, pkt: PacketRecord, rel_ack: int) -> None:
        self.peer_rwnd = pkt.window << self.peer_shift
        for left, right in pkt.options.sack_blocks:
            ls = (left - self.isn - 1) % _MOD
            rs = (right - self.isn - 1) % _MOD
            if rs <= rel_ack or rs > self.snd_max:
                continue  # D-SACK or bogus
            self.sacked.add(max(ls, rel_ack), rs)
        if rel_ack > self.snd_una:
            acked = rel_ack - self.snd_una
            self.snd_una = rel_ack
            if self.snd_nxt < self.snd_una:
                self.snd_nxt = self.snd_una
            self.sacked.discard_below(rel_ack)
            self.rexmitted.discard_below(rel_ack)
            self.dupacks = 0
            tsecr = pkt.options.timestamps[1] if pkt.options.timestamps else 0
            rtt_s = None
            if tsecr:
                rtt_ms = (self.clock_ms() - tsecr) % _MOD
                rtt_s = max(rtt_ms, 1) / 1000.0
                self._rtt_sample(rtt_s)
            rtt_for_cc = rtt_s if rtt_s is not None else (self.srtt or 0.1)
            if self.in_recovery:
                if rel_ack >= self.recovery_point:
                    self.in_recovery = False
                    self.cc.cwnd = max(self.cc.ssthresh, 1.0)
                    self.rexmitted.clear()
                elif not self.sack:
                    # NewReno partial ACK: retransmit the next missing segment
                    self._send_segment(self.snd_una, min(self.mss, self.send_total - self.snd_una))
                    self.cc.cwnd = max(self.cc.cwnd - acked / self.mss + 1, 1.0)
            else:
                self.cc.on_ack(acked / self.mss, self.sim.now / 1e9, rtt_for_cc)
            if self._outstanding():
                self._arm_timer(self.rto)
            else:
                self._cancel_timer()
        elif (rel_ack == self.snd_una and self._outstanding() and pkt.payload_len == 0
              and not pkt.flags & (TcpFlags.SYN | TcpFlags.FIN)):
            self.dupacks += 1
            if self.in_recovery:
                if not self.sack:
                    self.cc.cwnd += 1.0
            elif self.dupacks == 3 or (self.sack and self.sacked.total() > 3 * self.mss):
                self._enter_recovery()
        self._try_send()

    def _enter_recovery(self) -> None:
        flight = (self.snd_max - self.snd_una) / self.mss
        self.cc.on_loss(flight, self.sim.now / 1e9)
        self.in_recovery = True
        self.recovery_point = self.snd_max
        self.rexmitted.clear()
        length = min(self.mss, self.send_total - self.snd_una)
        if length > 0:
            self._send_segment(self.snd_una, length)
        if not self.sack:
            self.cc.cwnd += 3.0

    def _rtt_sample(self, r: float) -> None:
        if self.srtt is None:
            self.srtt = r
            self.rttvar = r / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - r)
            self.srtt = 0.875 * self.srtt + 0.125 * r
        rto = self.srtt + max(0.001, 4 * self.rttvar)
        self.rto = min(max(int(rto * 1e9), MIN_RTO_NS), MAX_RTO_NS)

    # -- data reception (this host as receiver)
    def _sack_blocks(self, dsack: tuple[int, int] | None = None):
        if not self.sack:
            return ()
        blocks = []
        if dsack is not None and self.dsack:
            blocks.append(dsack)
        for blk in self.recent_blocks:
            if blk not in blocks:
                blocks.append(blk)
        base = self.peer_isn + 1
        return tuple(((base + s) % _MOD, (base + e) % _MOD) for s, e in blocks[:3])

    def _refresh_recent_blocks(self, s: int, e: int) -> None:
        blocks = list(self.ooo)
        first = next((b for b in blocks if b[0] <= s and e <= b[1]), None)
        ordered = ([first] if first else []) + [b for b in self.recent_blocks if b in blocks and b != first]
        ordered += [b for b in blocks if b not in ordered]
        self.recent_blocks = ordered

    def _send_ack(self, dsack: tuple[int, int] | None = None) -> None:
        self._emit(TcpFlags.ACK, self.snd_nxt, 0,
                   TcpOptionSet(timestamps=self._ts_opt(), sack_blocks=self._sack_blocks(dsack)))
        self._ack_sent()

    def _ack_sent(self) -> None:
        self.pending_acks = 0
        if self.delack_armed:
            self.delack_gen += 1
            self.delack_armed = False

    def _on_delack(self, gen: int) -> None:
        if gen == self.delack_gen and self.delack_armed:
            self.delack_armed = False
            self._send_ack()

    def _on_data(self, pkt: PacketRecord, s: int, e: int) -> None:
        if e <= self.rcv_nxt or self.ooo.contains(s, e):
            self.duplicate_arrivals += 1
            self._send_ack(dsack=(s, e))
            return
        if e - self.rcv_nxt > self.rcv_buf - self.unread:
            self._send_ack()  # beyond the window
            return
        if s <= self.rcv_nxt:
            had_ooo = bool(self.ooo)
            self.ooo.add(max(s, self.rcv_nxt), e)
            blk = self.ooo.find(self.rcv_nxt)
            new_nxt = blk[1]
            self.ooo.discard_below(new_nxt)
            self.unread += new_nxt - self.rcv_nxt
            self.rcv_nxt = new_nxt
            self.recent_blocks = [b for b in self.recent_blocks if b[0] >= self.rcv_nxt]
            self._app_read()
            if had_ooo:
                self._send_ack()
            else:
                self.pending_acks += 1
                if self.pending_acks >= 2 or self.rcv_nxt >= self.recv_total:
                    self._send_ack()
                elif not self.delack_armed:
                    self.delack_armed = True
                    self.delack_gen += 1
                    self.sim.at(self.sim.now + DELACK_NS, self._on_delack, self.delack_gen)
        else:
            self.ooo.add(s, e)
            self._refresh_recent_blocks(s, e)
            self._send_ack()
        self._after_receive()

    def _app_read(self) -> None:
        if self.read_interval == 0:
            self.unread = 0
        elif not self.read_armed and self.unread > 0:
            self.read_armed = True
            self.sim.at(self.sim.now + self.read_interval, self._on_read)

    def _on_read(self) -> None:
        self.read_armed = False
        before = self.last_adv
        self.unread = 0
        if before is not None and before < 2 * self.mss and self._adv_bytes() >= before + self.mss:
            self._send_ack()  # window update

    def _after_receive(self) -> None:
        if self.rcv_nxt >= self.recv_total:
            self._on_app_data_complete()

    def _on_app_data_complete(self) -> None:
        pass

    # -- segment arrival
    def receive(self, pkt: PacketRecord) -> None:
        self.capture.append(replace(pkt, ts_sec=(BASE_TIME_US + self.sim.now // 1000) // 1_000_000,
                                    ts_usec=(BASE_TIME_US + self.sim.now // 1000) % 1_000_000))
        flags = pkt.flags
        if pkt.options.timestamps:
            self.ts_recent = pkt.options.timestamps[0]
        if flags & TcpFlags.SYN:
            self._on_syn(pkt)
            return
        if not self.established:
            if flags & TcpFlags.ACK and self.peer_isn is not None:
                self.established = True
                self._cancel_timer()
                self.rto = INITIAL_RTO_NS if self.srtt is None else self.rto
                self._on_established()
            else:
                return
        rel_seq = (pkt.seq - self.peer_isn - 1) % _MOD
        if pkt.payload_len:
            self._on_data(pkt, rel_seq, rel_seq + pkt.payload_len)
        if flags & TcpFlags.FIN:
            fin_seq = rel_seq + pkt.payload_len
            if fin_seq == self.rcv_nxt and not self.fin_received:
                self.fin_received = True
                self.rcv_nxt += 1
                self._send_ack()
                self._on_peer_fin()
            elif fin_seq < self.rcv_nxt:
                self._send_ack()
        if flags & TcpFlags.ACK:
            rel_ack = (pkt.ack - self.isn - 1) % _MOD
            if rel_ack <= self.snd_max:
                self._on_ack(pkt, rel_ack)

    def _on_syn(self, pkt: PacketRecord) -> None:
        opts = pkt.options
        if self.peer_isn is None:
            self.peer_isn = pkt.seq
            if opts.window_scale is not None:
                self.peer_shift = opts.window_scale
            if opts.mss:
                self.peer_mss = opts.mss
        if pkt.flags & TcpFlags.ACK:
            # SYN/ACK at the client
            self.sack = self.offer_sack and opts.sack_permitted
            self.peer_rwnd = pkt.window
            if not self.established:
                self.established = True
                self._cancel_timer()
                if opts.timestamps and opts.timestamps[1]:
                    self._rtt_sample(max((self.clock_ms() - opts.timestamps[1]) % _MOD, 1) / 1000.0)
                self._send_ack()
                self._on_established()
            else:
                self._send_ack()
        else:
            self.sack = self.offer_sack and opts.sack_permitted
            self.peer_rwnd = pkt.window
            self._send_synack()

    def _on_established(self) -> None:
        self._try_send()

    def _on_peer_fin(self) -> None:
        pass


class ClientHost(Host):
    def _on_established(self) -> None:
        self.may_send = True
        self._try_send()

    def _on_app_data_complete(self) -> None:
        if not self.may_close:
            self.may_close = True
            self._try_send()

    def _on_peer_fin(self) -> None:
        self.may_close = True
        self._try_send()


class ServerHost(Host):
    def _on_app_data_complete(self) -> None:
        if not self.may_send:
            self.may_send = True
            self.may_close = True
            self._try_send()


def _overlap_both(a: IntervalSet, b: IntervalSet, lo: int, hi: int) -> int:
    """Bytes in [lo, hi) covered by both ``a`` and ``b``."""
    total = 0
    for s, e in a:
        s, e = max(s, lo), min(e, hi)
        if s < e:
            total += b.overlap(s, e)
    return total


# ---------------------------------------------------------------- entry point

def simulate_transfer(link: LinkConfig, fault: FaultConfig = FaultConfig(),
                      transfer: TransferConfig = TransferConfig()) -> SimResult:
    """Run one connection and return both captures.

    A run that hits the simulated-time or event cap comes back with
    ``stalled=True`` and whatever was captured so far.
    """
    link.validate()
    transfer.validate()
    fault.validate(transfer.mss)

    rng = random.Random(derive_seed(link.seed, "endpoints"))
    client_isn = rng.getrandbits(32)
    server_isn = rng.getrandbits(32)
    client_port = rng.randrange(32768, 61000)
    offsets = rng.randrange(1 << 20), rng.randrange(1 << 20)

    sim = Sim()
    client = ClientHost(
        sim, "client", CLIENT_IP, client_port, client_isn, transfer,
        send_total=transfer.request_bytes, recv_total=transfer.bytes_to_send,
        rcv_buf=fault.read_buffer_bytes or DEFAULT_BUFFER,
        snd_buf=fault.write_buffer_bytes,
        sack_ok=not fault.sack_disabled, dsack=not fault.dsack_disabled,
        read_interval_ns=int(round(transfer.app_read_interval_ms * 1e6)),
        clock_offset_ms=offsets[0])
    server = ServerHost(
        sim, "server", SERVER_IP, SERVER_PORT, server_isn, transfer,
        send_total=transfer.bytes_to_send, recv_total=transfer.request_bytes,
        rcv_buf=DEFAULT_BUFFER, snd_buf=None, sack_ok=True, dsack=True,
        read_interval_ns=0, clock_offset_ms=offsets[1])
    up = Link(sim, link, derive_seed(link.seed, "loss", "upstream"))
    down = Link(sim, link, derive_seed(link.seed, "loss", "downstream"))
    client.link, client.peer = up, server
    server.link, server.peer = down, client
    up.sink = server.receive
    down.sink = client.receive

    sim.at(0, client.connect)
    finished = sim.run()
    complete = (client.rcv_nxt >= transfer.bytes_to_send and
                server.rcv_nxt >= transfer.request_bytes)
    return SimResult(
        client=client.capture, server=server.capture,
        stalled=not (finished and complete),
        duration_s=sim.now / 1e9, events=sim.events,
        emitted={"client": client.emitted, "server": server.emitted},
        client_duplicate_arrivals=client.duplicate_arrivals,
        drops={"upstream_lost": up.lost, "upstream_dropped": up.dropped,
               "downstream_lost": down.lost, "downstream_dropped": down.dropped},
    )


def frame_overhead(options: TcpOptionSet) -> int:
    return ETH_HEADER_LEN + IPV4_HEADER_LEN + TCP_HEADER_LEN + options_wire_len(options)
