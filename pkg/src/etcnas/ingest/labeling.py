"""SNI regex labeling with session-id / start-time adjacency propagation, and obfuscation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import BadPattern
from .flows import Flow

ADJACENCY_WINDOW = 1.0


@dataclass
class LabelTable:
    entries: list[tuple[str, str]]  # (pattern, class name), first match wins
    compiled: list[re.Pattern] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise BadPattern("label table is empty")
        self.compiled = []
        for pattern, _ in self.entries:
            try:
                self.compiled.append(re.compile(pattern))
            except re.error as exc:
                raise BadPattern(f"invalid label pattern {pattern!r}: {exc}") from None

    @property
    def class_names(self) -> list[str]:
        names: list[str] = []
        for _, name in self.entries:
            if name not in names:
                names.append(name)
        return names

    def class_index(self, name: str) -> int:
        return self.class_names.index(name)

    def match(self, domain: str | None) -> str | None:
        if not domain:
            return None
        for regex, (_, name) in zip(self.compiled, self.entries):
            if regex.search(domain):
                return name
        return None

    @classmethod
    def parse(cls, text: str) -> "LabelTable":
        """One ``pattern,class`` per line; split at the last comma; '#' starts a comment line."""
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pattern, sep, name = line.rpartition(",")
            if not sep or not pattern or not name.strip():
                raise BadPattern(f"label table line {line!r} is not 'pattern,class'")
            entries.append((pattern.strip(), name.strip()))
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "LabelTable":
        return cls.parse(Path(path).read_text())


@dataclass
class Labeling:
    labels: dict[int, str]  # flow position -> class name
    direct: set[int]  # positions labeled by their own SNI
    unlabeled: list[int]


def label_flows(flows: list[Flow], table: LabelTable, window: float = ADJACENCY_WINDOW,
                use_session_id: bool = True) -> Labeling:
    """SNI match first; then inherit from a directly labeled flow by session id, else by
    start-time proximity (|dt| <= window) with the same client IP. Nearest start wins,
    earlier flow on ties."""
    labels: dict[int, str] = {}
    for i, flow in enumerate(flows):
        name = table.match(flow.sni)
        if name is not None:
            labels[i] = name
    direct = set(labels)
    by_session: dict[bytes, int] = {}
    for i in sorted(direct):
        sid = flows[i].session_id
        if sid and sid not in by_session:
            by_session[sid] = i
    for i, flow in enumerate(flows):
        if i in direct:
            continue
        if use_session_id and flow.session_id and flow.session_id in by_session:
            labels[i] = labels[by_session[flow.session_id]]
            continue
        client_ip = flow.client[0]
        near = [
            (abs(flows[j].first_ts - flow.first_ts), j) for j in direct
            if flows[j].client[0] == client_ip and abs(flows[j].first_ts - flow.first_ts) <= window
        ]
        if near:
            labels[i] = labels[min(near)[1]]
    unlabeled = [i for i in range(len(flows)) if i not in labels]
    return Labeling(labels, direct, unlabeled)


def obfuscate(features: bytes, regions) -> bytes:
    """Zero every (start, end) region; idempotent and leaves other bytes untouched."""
    buf = bytearray(features)
    for start, end in regions:
        start, end = max(0, start), min(end, len(buf))
        buf[start:end] = bytes(max(0, end - start))
    return bytes(buf)


def load_label_map(path: str | Path) -> dict[str, str]:
    """External ``flow-hash,class`` map (used for QUIC, whose SNI is encrypted)."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, name = line.partition(",")
            out[key.strip()] = name.strip()
    return out
