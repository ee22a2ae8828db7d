"""Bidirectional flow assembly keyed by a canonical 5-tuple, split on idle gaps."""

from __future__ import annotations

import hashlib
import ipaddress
from dataclasses import dataclass, field

from .pcap import PacketRecord

IDLE_TIMEOUT = 60.0


def _endpoint_order(ip: str, port: int):
    addr = ipaddress.ip_address(ip)
    return (addr.version, addr.packed, port)


@dataclass(frozen=True, order=True)
class FlowKey:
    a_ip: str
    a_port: int
    b_ip: str
    b_port: int
    protocol: str

    @classmethod
    def of(cls, pkt: PacketRecord) -> "FlowKey":
        src, dst = (pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port)
        if _endpoint_order(*dst) < _endpoint_order(*src):
            src, dst = dst, src
        return cls(src[0], src[1], dst[0], dst[1], pkt.protocol)

    def text(self) -> str:
        return f"{self.protocol} {self.a_ip}:{self.a_port} {self.b_ip}:{self.b_port}"

    def salted_hash(self, salt: str | bytes = b"") -> str:
        """Provenance identifier that does not reveal the addresses."""
        salt = salt.encode() if isinstance(salt, str) else salt
        return hashlib.sha256(salt + self.text().encode()).hexdigest()[:32]


@dataclass
class Flow:
    key: FlowKey
    packets: list[PacketRecord] = field(default_factory=list)
    session_id: bytes | None = None
    sni: str | None = None

    @property
    def first_ts(self) -> float:
        return self.packets[0].timestamp

    @property
    def last_ts(self) -> float:
        return self.packets[-1].timestamp

    @property
    def client(self) -> tuple[str, int]:
        """Endpoint that sent the first packet."""
        p = self.packets[0]
        return p.src_ip, p.src_port


def assemble_flows(packets, idle_timeout: float = IDLE_TIMEOUT) -> list[Flow]:
    """Group packets by canonical key; a gap longer than ``idle_timeout`` starts a new flow.

    Packets are taken in timestamp order (capture order breaks ties). Flows come back in
    order of their first packet.
    """
    ordered = sorted(packets, key=lambda p: p.timestamp)  # stable: capture order on ties
    active: dict[FlowKey, Flow] = {}
    flows: list[Flow] = []
    for pkt in ordered:
        key = FlowKey.of(pkt)
        flow = active.get(key)
        if flow is None or pkt.timestamp - flow.last_ts > idle_timeout:
            flow = Flow(key)
            active[key] = flow
            flows.append(flow)
        flow.packets.append(pkt)
    return flows
