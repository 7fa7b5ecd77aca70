"""Classic pcap reading/writing and Ethernet/IPv4/TCP header decoding.

Only the libpcap microsecond format is handled (magic 0xa1b2c3d4 in either
byte order).  Frames that are not IPv4/TCP, or are IP fragments, are skipped
and counted rather than rejected.
"""
from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass, field

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
SNAPLEN = 65535

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
ETH_HEADER_LEN = 14
IPV4_HEADER_LEN = 20
TCP_HEADER_LEN = 20
MAX_OPTION_LEN = 40

# fixed MACs for written frames; readers ignore them
_SRC_MAC = bytes.fromhex("020000000001")
_DST_MAC = bytes.fromhex("020000000002")


class PcapError(Exception):
    pass


class BadMagic(PcapError):
    pass


class Truncated(PcapError):
    pass


class UnsupportedLinkType(PcapError):
    pass


class MalformedOption(PcapError):
    pass


class TcpFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20


ALL_FLAGS = TcpFlags(0x3F)


@dataclass(frozen=True)
class TcpOptionSet:
    mss: int | None = None
    window_scale: int | None = None
    sack_permitted: bool = False
    sack_blocks: tuple[tuple[int, int], ...] = ()
    timestamps: tuple[int, int] | None = None

    def encoded_len(self) -> int:
        n = 0
        if self.mss is not None:
            n += 4
        if self.sack_permitted:
            n += 2
        if self.timestamps is not None:
            n += 10
        if self.window_scale is not None:
            n += 3
        if self.sack_blocks:
            n += 2 + 8 * len(self.sack_blocks)
        return n


@dataclass(frozen=True)
class PacketRecord:
    ts_sec: int
    ts_usec: int
    captured_len: int
    original_len: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    seq: int
    ack: int
    flags: TcpFlags
    window: int
    payload_len: int
    options: TcpOptionSet = field(default_factory=TcpOptionSet)

    @property
    def ts(self) -> float:
        return self.ts_sec + self.ts_usec * 1e-6

    @property
    def ts_us(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec

    def has(self, flag: TcpFlags) -> bool:
        return bool(self.flags & flag)


@dataclass
class PcapParse:
    packets: list[PacketRecord]
    skipped: int
    records: int
    linktype: int


def options_wire_len(options: TcpOptionSet) -> int:
    """Option region length after padding to a 4-byte boundary."""
    n = options.encoded_len()
    return (n + 3) & ~3


def make_packet(
    ts_us: int,
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    seq: int,
    ack: int,
    flags: TcpFlags,
    window: int,
    payload_len: int = 0,
    options: TcpOptionSet | None = None,
    snaplen: int = SNAPLEN,
) -> PacketRecord:
    """Build a PacketRecord whose length fields match an Ethernet frame."""
    options = options or TcpOptionSet()
    frame_len = (ETH_HEADER_LEN + IPV4_HEADER_LEN + TCP_HEADER_LEN
                 + options_wire_len(options) + payload_len)
    sec, usec = divmod(ts_us, 1_000_000)
    return PacketRecord(
        ts_sec=sec, ts_usec=usec,
        captured_len=min(frame_len, snaplen), original_len=frame_len,
        src_ip=src_ip, dst_ip=dst_ip, src_port=src_port, dst_port=dst_port,
        seq=seq & 0xFFFFFFFF, ack=ack & 0xFFFFFFFF, flags=TcpFlags(flags),
        window=window, payload_len=payload_len, options=options,
    )


# ---------------------------------------------------------------- options

def decode_options(region: bytes) -> TcpOptionSet:
    """Decode a TCP option region (the bytes after the fixed 20-byte header)."""
    mss = wscale = ts = None
    sack_ok = False
    blocks: list[tuple[int, int]] = []
    i, end = 0, len(region)
    while i < end:
        kind = region[i]
        if kind == 0:  # EOL
            break
        if kind == 1:  # NOP
            i += 1
            continue
        if i + 1 >= end:
            raise MalformedOption(f"option kind {kind} missing length at offset {i}")
        length = region[i + 1]
        if length < 2:
            raise MalformedOption(f"option kind {kind} has length {length}")
        if i + length > end:
            raise MalformedOption(f"option kind {kind} runs past region end")
        body = region[i + 2:i + length]
        if kind == 2 and length == 4:
            mss = struct.unpack("!H", body)[0]
        elif kind == 3 and length == 3:
            wscale = body[0]
        elif kind == 4 and length == 2:
            sack_ok = True
        elif kind == 5:
            if (length - 2) % 8:
                raise MalformedOption(f"SACK option length {length} not 2+8n")
            for j in range(0, length - 2, 8):
                blocks.append(struct.unpack("!II", body[j:j + 8]))
        elif kind == 8 and length == 10:
            ts = struct.unpack("!II", body)
        elif kind in (2, 3, 4, 8):
            raise MalformedOption(f"option kind {kind} has wrong length {length}")
        i += length
    return TcpOptionSet(mss=mss, window_scale=wscale, sack_permitted=sack_ok,
                        sack_blocks=tuple(blocks), timestamps=ts)


def encode_options(options: TcpOptionSet) -> bytes:
    """Encode options in a fixed order, NOP/EOL padded to 4 bytes."""
    out = bytearray()
    if options.mss is not None:
        out += struct.pack("!BBH", 2, 4, options.mss)
    if options.sack_permitted:
        out += b"\x04\x02"
    if options.timestamps is not None:
        out += struct.pack("!BBII", 8, 10, *options.timestamps)
    if options.window_scale is not None:
        out += struct.pack("!BBB", 3, 3, options.window_scale)
    if options.sack_blocks:
        out += struct.pack("!BB", 5, 2 + 8 * len(options.sack_blocks))
        for left, right in options.sack_blocks:
            out += struct.pack("!II", left, right)
    if len(out) > MAX_OPTION_LEN:
        raise ValueError(f"options need {len(out)} bytes, TCP allows {MAX_OPTION_LEN}")
    while len(out) % 4:
        out += b"\x00"
    return bytes(out)


# ---------------------------------------------------------------- checksums

def _ones_complement_sum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def _checksum(data: bytes) -> int:
    return ~_ones_complement_sum(data) & 0xFFFF


# ---------------------------------------------------------------- frames

def encode_frame(pkt: PacketRecord) -> bytes:
    """Ethernet frame for ``pkt`` with a zero-filled payload, cut to captured_len."""
    opts = encode_options(pkt.options)
    tcp_len = TCP_HEADER_LEN + len(opts)
    total_len = IPV4_HEADER_LEN + tcp_len + pkt.payload_len
    src = socket.inet_aton(pkt.src_ip)
    dst = socket.inet_aton(pkt.dst_ip)
    ip = bytearray(struct.pack("!BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0x4000,
                               64, socket.IPPROTO_TCP, 0, src, dst))
    struct.pack_into("!H", ip, 10, _checksum(bytes(ip)))
    tcp = bytearray(struct.pack("!HHIIBBHHH", pkt.src_port, pkt.dst_port,
                                pkt.seq, pkt.ack, (tcp_len // 4) << 4,
                                int(pkt.flags), pkt.window, 0, 0))
    tcp += opts
    # zero payload contributes nothing to the checksum sum
    pseudo = struct.pack("!4s4sBBH", src, dst, 0, socket.IPPROTO_TCP,
                         tcp_len + pkt.payload_len)
    struct.pack_into("!H", tcp, 16, _checksum(pseudo + bytes(tcp)))
    eth = _DST_MAC + _SRC_MAC + struct.pack("!H", ETHERTYPE_IPV4)
    frame = eth + bytes(ip) + bytes(tcp) + bytes(pkt.payload_len)
    return frame[:pkt.captured_len]


def _decode_ip(buf: bytes, ts_sec: int, ts_usec: int, orig_len: int,
               cap_len: int) -> PacketRecord | None:
    if len(buf) < IPV4_HEADER_LEN or buf[0] >> 4 != 4:
        return None
    ihl = (buf[0] & 0x0F) * 4
    total_len, frag = struct.unpack("!H2xH", buf[2:8])
    if buf[9] != socket.IPPROTO_TCP or ihl < IPV4_HEADER_LEN:
        return None
    if frag & 0x2000 or frag & 0x1FFF:  # MF set or nonzero offset
        return None
    tcp = buf[ihl:]
    if len(tcp) < TCP_HEADER_LEN:
        return None
    sport, dport, seq, ack, off, flags, win = struct.unpack("!HHIIBBH", tcp[:16])
    doff = (off >> 4) * 4
    if doff < TCP_HEADER_LEN or len(tcp) < doff:
        return None
    options = decode_options(bytes(tcp[TCP_HEADER_LEN:doff]))
    return PacketRecord(
        ts_sec=ts_sec, ts_usec=ts_usec, captured_len=cap_len, original_len=orig_len,
        src_ip=socket.inet_ntoa(buf[12:16]), dst_ip=socket.inet_ntoa(buf[16:20]),
        src_port=sport, dst_port=dport, seq=seq, ack=ack,
        flags=TcpFlags(flags) & ALL_FLAGS, window=win,
        payload_len=total_len - ihl - doff, options=options,
    )


def _decode_frame(frame: bytes, linktype: int, ts_sec: int, ts_usec: int,
                  orig_len: int) -> PacketRecord | None:
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < ETH_HEADER_LEN:
            return None
        ethertype = struct.unpack("!H", frame[12:14])[0]
        offset = ETH_HEADER_LEN
        if ethertype == ETHERTYPE_VLAN and len(frame) >= offset + 4:
            ethertype = struct.unpack("!H", frame[16:18])[0]
            offset += 4
        if ethertype != ETHERTYPE_IPV4:
            return None
        return _decode_ip(frame[offset:], ts_sec, ts_usec, orig_len, len(frame))
    return _decode_ip(frame, ts_sec, ts_usec, orig_len, len(frame))


# ---------------------------------------------------------------- files

def parse_pcap(data: bytes) -> PcapParse:
    if len(data) < GLOBAL_HEADER_LEN:
        raise Truncated(f"global header needs {GLOBAL_HEADER_LEN} bytes, got {len(data)}")
    magic = struct.unpack("<I", data[:4])[0]
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise BadMagic(f"unrecognized magic 0x{magic:08x}")
    linktype = struct.unpack(endian + "I", data[20:24])[0]
    if linktype not in (LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_IPV4):
        raise UnsupportedLinkType(f"link type {linktype}")

    rec_fmt = endian + "IIII"
    packets: list[PacketRecord] = []
    skipped = records = 0
    pos = GLOBAL_HEADER_LEN
    while pos < len(data):
        if pos + RECORD_HEADER_LEN > len(data):
            raise Truncated(f"record header at offset {pos} is cut short")
        ts_sec, ts_usec, incl, orig = struct.unpack_from(rec_fmt, data, pos)
        pos += RECORD_HEADER_LEN
        if pos + incl > len(data):
            raise Truncated(f"record at offset {pos} claims {incl} bytes, "
                            f"{len(data) - pos} remain")
        frame = data[pos:pos + incl]
        pos += incl
        records += 1
        pkt = _decode_frame(frame, linktype, ts_sec, ts_usec, orig)
        if pkt is None:
            skipped += 1
        else:
            packets.append(pkt)
    return PcapParse(packets, skipped, records, linktype)


def read_pcap(data: bytes) -> list[PacketRecord]:
    return parse_pcap(data).packets


def write_pcap(packets: list[PacketRecord]) -> bytes:
    out = bytearray(struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, SNAPLEN,
                                LINKTYPE_ETHERNET))
    for pkt in packets:
        frame = encode_frame(pkt)
        out += struct.pack("<IIII", pkt.ts_sec, pkt.ts_usec, len(frame), pkt.original_len)
        out += frame
    return bytes(out)


def load_pcap(path) -> list[PacketRecord]:
    with open(path, "rb") as fh:
        return read_pcap(fh.read())


def save_pcap(path, packets: list[PacketRecord]) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pcap(packets))
