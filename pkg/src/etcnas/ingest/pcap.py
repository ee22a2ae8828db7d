"""Classic pcap reader (and a small writer for fixtures) down to TCP/UDP payloads."""

from __future__ import annotations

import ipaddress
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from ..errors import BadMagic, TruncatedPacket, UnsupportedLinkType

MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
LINKTYPE_NAMES = {
    0: "NULL", 1: "ETHERNET", 101: "RAW", 105: "IEEE802_11", 113: "LINUX_SLL",
    127: "IEEE802_11_RADIOTAP", 228: "IPV4", 229: "IPV6", 276: "LINUX_SLL2",
}
SUPPORTED_LINKTYPES = {LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_LINUX_SLL, LINKTYPE_IPV4, LINKTYPE_IPV6}

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = (0x8100, 0x88A8, 0x9100)

PROTO_TCP = 6
PROTO_UDP = 17
PROTOCOL_NAMES = {PROTO_TCP: "TCP", PROTO_UDP: "UDP"}
_IPV6_EXT = {0, 43, 60, 51}
_IPV6_FRAGMENT = 44


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str  # "TCP" | "UDP"
    payload: bytes
    ip_header: bytes = b""
    transport_header: bytes = b""
    index: int = 0  # position in the capture

    def __post_init__(self):
        if not (0 <= self.src_port < 65536 and 0 <= self.dst_port < 65536):
            raise ValueError("ports must be < 65536")


class _Skip(Exception):
    """Frame carries nothing we parse (non-IP, non-TCP/UDP, later fragment)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _need(buf: bytes, n: int, what: str) -> None:
    if len(buf) < n:
        raise TruncatedPacket(f"{what}: need {n} bytes, have {len(buf)}")


def _link_to_ip(linktype: int, frame: bytes) -> tuple[int, bytes]:
    """Strip the link layer; returns (ip version, ip packet bytes)."""
    if linktype == LINKTYPE_ETHERNET:
        _need(frame, 14, "ethernet header")
        ethertype = struct.unpack_from("!H", frame, 12)[0]
        pos = 14
        while ethertype in ETH_VLAN:
            _need(frame, pos + 4, "vlan tag")
            ethertype = struct.unpack_from("!H", frame, pos + 2)[0]
            pos += 4
        body = frame[pos:]
    elif linktype == LINKTYPE_LINUX_SLL:
        _need(frame, 16, "linux cooked header")
        ethertype = struct.unpack_from("!H", frame, 14)[0]
        body = frame[16:]
    else:
        _need(frame, 1, "ip header")
        version = frame[0] >> 4
        if linktype == LINKTYPE_IPV4 and version != 4 or linktype == LINKTYPE_IPV6 and version != 6:
            raise _Skip("non_ip")
        ethertype = {4: ETH_IPV4, 6: ETH_IPV6}.get(version)
        body = frame
    if ethertype == ETH_IPV4:
        return 4, body
    if ethertype == ETH_IPV6:
        return 6, body
    raise _Skip("non_ip")


def _parse_ip(version: int, pkt: bytes):
    """Returns (src, dst, protocol number, ip header bytes, transport bytes)."""
    if version == 4:
        _need(pkt, 20, "ipv4 header")
        ihl = (pkt[0] & 0x0F) * 4
        if pkt[0] >> 4 != 4 or ihl < 20:
            raise TruncatedPacket("malformed ipv4 header")
        _need(pkt, ihl, "ipv4 options")
        total = struct.unpack_from("!H", pkt, 2)[0]
        frag = struct.unpack_from("!H", pkt, 6)[0]
        if frag & 0x1FFF:
            raise _Skip("fragment")
        proto = pkt[9]
        src = str(ipaddress.IPv4Address(pkt[12:16]))
        dst = str(ipaddress.IPv4Address(pkt[16:20]))
        end = min(len(pkt), total) if total >= ihl else len(pkt)
        return src, dst, proto, pkt[:ihl], pkt[ihl:end]
    _need(pkt, 40, "ipv6 header")
    payload_len = struct.unpack_from("!H", pkt, 4)[0]
    proto = pkt[6]
    src = str(ipaddress.IPv6Address(pkt[8:24]))
    dst = str(ipaddress.IPv6Address(pkt[24:40]))
    pos = 40
    while proto in _IPV6_EXT or proto == _IPV6_FRAGMENT:
        _need(pkt, pos + 8, "ipv6 extension header")
        nxt = pkt[pos]
        if proto == _IPV6_FRAGMENT:
            if struct.unpack_from("!H", pkt, pos + 2)[0] & 0xFFF8:
                raise _Skip("fragment")
            size = 8
        elif proto == 51:
            size = (pkt[pos + 1] + 2) * 4
        else:
            size = (pkt[pos + 1] + 1) * 8
        proto = nxt
        pos += size
    _need(pkt, pos, "ipv6 extension header")
    end = min(len(pkt), 40 + payload_len)
    return src, dst, proto, pkt[:pos], pkt[pos:end]


def _parse_transport(proto: int, seg: bytes):
    if proto == PROTO_TCP:
        _need(seg, 20, "tcp header")
        sport, dport = struct.unpack_from("!HH", seg, 0)
        offset = (seg[12] >> 4) * 4
        if offset < 20:
            raise TruncatedPacket("malformed tcp header")
        _need(seg, offset, "tcp options")
        return sport, dport, seg[:offset], seg[offset:]
    if proto == PROTO_UDP:
        _need(seg, 8, "udp header")
        sport, dport, length = struct.unpack_from("!HHH", seg, 0)
        end = min(len(seg), length) if length >= 8 else len(seg)
        return sport, dport, seg[:8], seg[8:end]
    raise _Skip("non_tcp_udp")


def parse_frame(linktype: int, frame: bytes, timestamp: float = 0.0, index: int = 0) -> PacketRecord:
    version, ip = _link_to_ip(linktype, frame)
    src, dst, proto, ip_header, seg = _parse_ip(version, ip)
    sport, dport, l4_header, payload = _parse_transport(proto, seg)
    return PacketRecord(timestamp, src, dst, sport, dport, PROTOCOL_NAMES[proto], bytes(payload),
                        bytes(ip_header), bytes(l4_header), index)


class PcapReader:
    """Iterates PacketRecords; skipped frames are tallied in ``counters``."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.data = self.path.read_bytes()
        if len(self.data) < 24:
            raise BadMagic(f"{self.path}: file too short for a pcap header")
        magic_le = struct.unpack_from("<I", self.data)[0]
        magic_be = struct.unpack_from(">I", self.data)[0]
        if magic_le in (MAGIC_US, MAGIC_NS):
            self.endian, magic = "<", magic_le
        elif magic_be in (MAGIC_US, MAGIC_NS):
            self.endian, magic = ">", magic_be
        else:
            raise BadMagic(f"{self.path}: unrecognised pcap magic 0x{magic_le:08x}")
        self.nanosecond = magic == MAGIC_NS
        _, _, _, _, self.snaplen, network = struct.unpack_from(self.endian + "HHiIII", self.data, 4)
        self.linktype = network & 0x0FFFFFFF
        if self.linktype not in SUPPORTED_LINKTYPES:
            name = LINKTYPE_NAMES.get(self.linktype, "unknown")
            raise UnsupportedLinkType(f"{self.path}: unsupported link type {self.linktype} ({name})")
        self.counters: Counter = Counter()

    def __iter__(self) -> Iterator[PacketRecord]:
        rec = struct.Struct(self.endian + "IIII")
        scale = 1e-9 if self.nanosecond else 1e-6
        pos = 24
        index = 0
        data = self.data
        while pos < len(data):
            if pos + rec.size > len(data):
                self.counters["truncated"] += 1
                break
            sec, frac, incl, _ = rec.unpack_from(data, pos)
            pos += rec.size
            frame = data[pos:pos + incl]
            pos += incl
            self.counters["frames"] += 1
            if len(frame) < incl:
                self.counters["truncated"] += 1
                break
            try:
                yield parse_frame(self.linktype, frame, sec + frac * scale, index)
                self.counters["packets"] += 1
            except TruncatedPacket:
                self.counters["truncated"] += 1
            except _Skip as skip:
                self.counters[skip.reason] += 1
            index += 1


def read_pcap(path: str | Path) -> PcapReader:
    return PcapReader(path)


# fixture writers


def write_pcap(path: str | Path, frames, linktype: int = LINKTYPE_ETHERNET,
               nanosecond: bool = False, big_endian: bool = False, snaplen: int = 65535) -> None:
    """``frames`` is an iterable of (timestamp seconds, frame bytes)."""
    e = ">" if big_endian else "<"
    scale = 10**9 if nanosecond else 10**6
    with open(path, "wb") as fh:
        fh.write(struct.pack(e + "IHHiIII", MAGIC_NS if nanosecond else MAGIC_US, 2, 4, 0, 0, snaplen, linktype))
        for ts, frame in frames:
            sec = int(ts)
            frac = int(round((ts - sec) * scale))
            fh.write(struct.pack(e + "IIII", sec, frac, len(frame), len(frame)))
            fh.write(frame)


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\0"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def ethernet_frame(payload: bytes, ethertype: int = ETH_IPV4, src_mac: bytes = b"\x02\0\0\0\0\x01",
                   dst_mac: bytes = b"\x02\0\0\0\0\x02", vlan: int | None = None) -> bytes:
    tag = struct.pack("!HH", 0x8100, vlan) if vlan is not None else b""
    return dst_mac + src_mac + tag + struct.pack("!H", ethertype) + payload


def ipv4_packet(src: str, dst: str, proto: int, payload: bytes, ident: int = 0, ttl: int = 64) -> bytes:
    header = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), ident, 0x4000, ttl, proto, 0,
                         ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed)
    header = header[:10] + struct.pack("!H", _checksum(header)) + header[12:]
    return header + payload


def ipv6_packet(src: str, dst: str, proto: int, payload: bytes, hop_limit: int = 64) -> bytes:
    return struct.pack("!IHBB16s16s", 6 << 28, len(payload), proto, hop_limit,
                       ipaddress.IPv6Address(src).packed, ipaddress.IPv6Address(dst).packed) + payload


def tcp_segment(sport: int, dport: int, payload: bytes = b"", seq: int = 0, ack: int = 0,
                flags: int = 0x18, window: int = 65535) -> bytes:
    return struct.pack("!HHIIBBHHH", sport, dport, seq, ack, 5 << 4, flags, window, 0, 0) + payload


def udp_datagram(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload
