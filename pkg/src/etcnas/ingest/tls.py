"""TLS handshake features: the first three handshake-bearing packets, 600 bytes each."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..errors import NoHandshakeFound
from .flows import Flow
from .pcap import PacketRecord

CUTOFF = 600
HANDSHAKE_PACKETS = 3
CONTENT_HANDSHAKE = 22
CONTENT_APPLICATION_DATA = 23
_CONTENT_TYPES = {20, 21, 22, 23, 24}
HS_CLIENT_HELLO = 1
HS_SERVER_HELLO = 2
EXT_SERVER_NAME = 0
ANCHORS = ("tls", "transport", "ip")


@dataclass
class HandshakeInfo:
    """Fields pulled from one packet; regions are (start, end) offsets into ``payload``."""

    sni: str | None = None
    session_id: bytes | None = None
    sni_regions: list[tuple[int, int]] = field(default_factory=list)
    cipher_regions: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class TlsFeatures:
    features: bytes
    sni: str | None
    session_id: bytes | None
    sni_regions: list[tuple[int, int]]  # offsets into ``features``
    cipher_regions: list[tuple[int, int]]
    packet_indices: list[int]


def _records(payload: bytes):
    """(offset, content type, body start, body end) for consecutive well-formed records."""
    pos = 0
    while pos + 5 <= len(payload):
        ctype, major, minor, length = struct.unpack_from("!BBBH", payload, pos)
        if ctype not in _CONTENT_TYPES or major != 3 or minor > 4:
            return
        yield pos, ctype, pos + 5, min(pos + 5 + length, len(payload))
        pos += 5 + length


def first_handshake_offset(payload: bytes) -> int | None:
    for off, ctype, _, _ in _records(payload):
        if ctype == CONTENT_HANDSHAKE:
            return off
    return None


def _parse_hello(buf: bytes, start: int, end: int, hs_type: int, info: HandshakeInfo) -> None:
    p = start + 2 + 32  # legacy version, random
    sid_len = buf[p]
    sid = buf[p + 1:p + 1 + sid_len]
    if len(sid) == sid_len and sid_len and info.session_id is None:
        info.session_id = bytes(sid)
    p += 1 + sid_len
    if hs_type == HS_CLIENT_HELLO:
        (cs_len,) = struct.unpack_from("!H", buf, p)
        info.cipher_regions.append((p + 2, min(p + 2 + cs_len, end)))
        p += 2 + cs_len
        p += 1 + buf[p]  # compression methods
    else:
        info.cipher_regions.append((p, min(p + 2, end)))
        p += 3  # chosen suite, compression method
    if p + 2 > end:
        return
    (ext_total,) = struct.unpack_from("!H", buf, p)
    p += 2
    stop = min(p + ext_total, end)
    while p + 4 <= stop:
        ext_type, ext_len = struct.unpack_from("!HH", buf, p)
        body = p + 4
        if ext_type == EXT_SERVER_NAME and ext_len:
            info.sni_regions.append((body, min(body + ext_len, end)))
            q = body + 2
            while q + 3 <= min(body + ext_len, end):
                name_type, name_len = struct.unpack_from("!BH", buf, q)
                if name_type == 0 and info.sni is None:
                    name = buf[q + 3:q + 3 + name_len]
                    if len(name) == name_len:
                        info.sni = name.decode("ascii", errors="replace")
                q += 3 + name_len
        p = body + ext_len


def parse_handshake(payload: bytes) -> HandshakeInfo:
    """Collect SNI, session id and cipher fields from the handshake records of one packet."""
    info = HandshakeInfo()
    for _, ctype, start, end in _records(payload):
        if ctype != CONTENT_HANDSHAKE:
            continue
        pos = start
        while pos + 4 <= end:
            hs_type = payload[pos]
            length = int.from_bytes(payload[pos + 1:pos + 4], "big")
            if hs_type in (HS_CLIENT_HELLO, HS_SERVER_HELLO):
                try:
                    _parse_hello(payload, pos + 4, min(pos + 4 + length, end), hs_type, info)
                except (IndexError, struct.error):
                    pass  # message cut by the segment boundary
            pos += 4 + length
    return info


def _anchored(pkt: PacketRecord, offset: int, anchor: str) -> tuple[bytes, int]:
    """Bytes the segment is cut from, and where ``payload[0]`` sits inside them."""
    if anchor == "tls":
        return pkt.payload[offset:], -offset
    if anchor == "transport":
        return pkt.transport_header + pkt.payload, len(pkt.transport_header)
    if anchor == "ip":
        head = pkt.ip_header + pkt.transport_header
        return head + pkt.payload, len(head)
    raise ValueError(f"anchor must be one of {ANCHORS}, got {anchor!r}")


def _shift(regions, delta: int, lo: int, hi: int) -> list[tuple[int, int]]:
    out = []
    for a, b in regions:
        a, b = max(a + delta, lo), min(b + delta, hi)
        if a < b:
            out.append((a, b))
    return out


def extract_tls_features(flow: Flow, cutoff: int = CUTOFF, packets: int = HANDSHAKE_PACKETS,
                         anchor: str = "tls") -> TlsFeatures:
    if flow.key.protocol != "TCP":
        raise NoHandshakeFound(f"{flow.key.text()}: not a TCP flow")
    segments: list[bytes] = []
    sni_regions: list[tuple[int, int]] = []
    cipher_regions: list[tuple[int, int]] = []
    sni = session_id = None
    indices = []
    for pkt in flow.packets:
        if len(segments) == packets:
            break
        offset = first_handshake_offset(pkt.payload)
        if offset is None:
            continue
        info = parse_handshake(pkt.payload)
        sni = sni or info.sni
        session_id = session_id or info.session_id
        data, payload_at = _anchored(pkt, offset, anchor)
        base = len(segments) * cutoff
        seg = data[:cutoff]
        segments.append(seg + bytes(cutoff - len(seg)))
        sni_regions += _shift(info.sni_regions, base + payload_at, base, base + cutoff)
        cipher_regions += _shift(info.cipher_regions, base + payload_at, base, base + cutoff)
        indices.append(pkt.index)
    if not segments:
        raise NoHandshakeFound(f"{flow.key.text()}: no TLS handshake records")
    features = b"".join(segments) + bytes(cutoff * (packets - len(segments)))
    return TlsFeatures(features, sni, session_id, sni_regions, cipher_regions, indices)


# record builders for fixtures and synthetic captures


def _ext(ext_type: int, body: bytes) -> bytes:
    return struct.pack("!HH", ext_type, len(body)) + body


def sni_extension(host: str) -> bytes:
    name = host.encode("ascii")
    entry = struct.pack("!BH", 0, len(name)) + name
    return _ext(EXT_SERVER_NAME, struct.pack("!H", len(entry)) + entry)


def _handshake_record(hs_type: int, body: bytes, version: bytes = b"\x03\x01") -> bytes:
    msg = bytes([hs_type]) + len(body).to_bytes(3, "big") + body
    return bytes([CONTENT_HANDSHAKE]) + version + struct.pack("!H", len(msg)) + msg


def client_hello(sni: str | None = None, session_id: bytes = b"", ciphers=(0x1301, 0x1302, 0xC02F),
                 random: bytes = bytes(range(32)), extra_extensions: bytes = b"") -> bytes:
    """A TLS 1.2-layout ClientHello record."""
    body = b"\x03\x03" + random + bytes([len(session_id)]) + session_id
    body += struct.pack("!H", 2 * len(ciphers)) + b"".join(struct.pack("!H", c) for c in ciphers)
    body += b"\x01\x00"
    exts = (sni_extension(sni) if sni else b"") + extra_extensions
    body += struct.pack("!H", len(exts)) + exts
    return _handshake_record(HS_CLIENT_HELLO, body)


def server_hello(session_id: bytes = b"", cipher: int = 0x1301, random: bytes = bytes(32)) -> bytes:
    body = b"\x03\x03" + random + bytes([len(session_id)]) + session_id + struct.pack("!HB", cipher, 0)
    body += struct.pack("!H", 0)
    return _handshake_record(HS_SERVER_HELLO, body, b"\x03\x03")


def application_data(payload: bytes) -> bytes:
    return bytes([CONTENT_APPLICATION_DATA]) + b"\x03\x03" + struct.pack("!H", len(payload)) + payload
