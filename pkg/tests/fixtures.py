"""Capture fixtures shared by the ingest and acceptance tests."""

import struct

from etcnas.ingest.pcap import PROTO_TCP, ethernet_frame, ipv4_packet, tcp_segment, write_pcap
from etcnas.ingest.tls import application_data, client_hello, server_hello

CLIENT = "10.0.0.1"
SERVER = "93.184.216.34"
OTHER = "10.0.0.2"
SESSION = bytes(range(1, 33))


def two_packet_bytes() -> bytes:
    """Classic little-endian microsecond pcap, written out field by field.

    Packet 1: 10.0.0.1:40000 -> 10.0.0.2:443 TCP, payload b"hi", ts 1.000002
    Packet 2: 10.0.0.2:443 -> 10.0.0.1:40000 TCP, payload b"yo!", ts 2.5
    """
    out = bytearray()
    out += bytes.fromhex("d4c3b2a1")      # magic, little endian
    out += bytes.fromhex("0200 0400")     # version 2.4
    out += bytes(4) + bytes(4)            # thiszone, sigfigs
    out += bytes.fromhex("ffff0000")      # snaplen 65535
    out += bytes.fromhex("01000000")      # linktype Ethernet

    def frame(src, dst, sport, dport, payload):
        tcp = struct.pack(">HHIIBBHHH", sport, dport, 0, 0, 0x50, 0x18, 1024, 0, 0) + payload
        ip = bytes([0x45, 0]) + struct.pack(">H", 20 + len(tcp)) + bytes(4) + bytes([64, 6]) + bytes(2)
        ip += bytes(int(o) for o in src.split(".")) + bytes(int(o) for o in dst.split("."))
        eth = bytes.fromhex("020000000002" "020000000001" "0800")
        return eth + ip + tcp

    for sec, usec, f in (
        (1, 2, frame("10.0.0.1", "10.0.0.2", 40000, 443, b"hi")),
        (2, 500000, frame("10.0.0.2", "10.0.0.1", 443, 40000, b"yo!")),
    ):
        out += struct.pack("<IIII", sec, usec, len(f), len(f)) + f
    return bytes(out)


def tcp_frame(src, dst, sport, dport, payload=b"", flags=0x18):
    return ethernet_frame(ipv4_packet(src, dst, PROTO_TCP, tcp_segment(sport, dport, payload, flags=flags)))


def tls_two_flow_frames(sni="example.com"):
    """Flow A: TLS handshake with SNI; flow B: plain TCP exchange on another port."""
    return [
        (10.0, tcp_frame(CLIENT, SERVER, 51000, 443, flags=0x02)),
        (10.1, tcp_frame(SERVER, CLIENT, 443, 51000, flags=0x12)),
        (10.2, tcp_frame(CLIENT, SERVER, 51000, 443, client_hello(sni, session_id=SESSION))),
        (10.25, tcp_frame(OTHER, SERVER, 52000, 80, b"GET / HTTP/1.1\r\n\r\n")),
        (10.3, tcp_frame(SERVER, CLIENT, 443, 51000, server_hello(SESSION, cipher=0xC02F))),
        (10.35, tcp_frame(SERVER, OTHER, 80, 52000, b"HTTP/1.1 200 OK\r\n\r\n")),
        (10.4, tcp_frame(CLIENT, SERVER, 51000, 443, application_data(bytes(64)))),
    ]


def write_tls_fixture(path, sni="example.com"):
    write_pcap(path, tls_two_flow_frames(sni))
    return path
