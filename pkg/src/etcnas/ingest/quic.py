"""QUIC features: the first long-header Initial packet's UDP payload (not decrypted)."""

from __future__ import annotations

import struct

from ..errors import NotQuic
from .flows import Flow

CUTOFF = 600
QUIC_PORT = 443
QUIC_V1 = 0x00000001
QUIC_V2 = 0x6B3343CF


def is_initial(payload: bytes) -> bool:
    """Long header with the Initial packet type (v1 type 0, v2 type 1)."""
    if len(payload) < 6 or not payload[0] & 0x80:
        return False
    (version,) = struct.unpack_from("!I", payload, 1)
    if version == 0:
        return False  # version negotiation
    ptype = (payload[0] & 0x30) >> 4
    return ptype == (1 if version == QUIC_V2 else 0)


def extract_quic_features(flow: Flow, cutoff: int = CUTOFF) -> bytes:
    if flow.key.protocol != "UDP":
        raise NotQuic(f"{flow.key.text()}: not a UDP flow")
    for pkt in flow.packets:
        if is_initial(pkt.payload):
            seg = pkt.payload[:cutoff]
            return seg + bytes(cutoff - len(seg))
    raise NotQuic(f"{flow.key.text()}: no long-header Initial packet")


def initial_packet(dcid: bytes = bytes(8), scid: bytes = b"", payload: bytes = b"",
                   version: int = QUIC_V1, size: int = 1200) -> bytes:
    """Fixture Initial: header fields in the clear, body padded to ``size`` bytes."""
    ptype = 1 if version == QUIC_V2 else 0
    first = 0xC0 | (ptype << 4) | 0x03  # 4-byte packet number
    head = bytes([first]) + struct.pack("!I", version)
    head += bytes([len(dcid)]) + dcid + bytes([len(scid)]) + scid + b"\x00"  # empty token
    body = payload + bytes(max(0, size - len(head) - 2 - 4 - len(payload)))
    length = 4 + len(body)
    return head + struct.pack("!H", 0x4000 | length) + b"\x00\x00\x00\x01" + body


def short_header_packet(dcid: bytes = bytes(8), payload: bytes = bytes(40)) -> bytes:
    return b"\x40" + dcid + payload
