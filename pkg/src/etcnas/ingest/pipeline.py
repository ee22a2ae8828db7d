"""pcap files -> labeled, obfuscated fixed-length dataset, with counters."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import NoHandshakeFound, NotQuic
from .dataset import Dataset
from .flows import IDLE_TIMEOUT, Flow, assemble_flows
from .labeling import ADJACENCY_WINDOW, LabelTable, label_flows, obfuscate
from .pcap import read_pcap
from .quic import CUTOFF as QUIC_CUTOFF, extract_quic_features
from .tls import CUTOFF, HANDSHAKE_PACKETS, extract_tls_features

log = logging.getLogger(__name__)


@dataclass
class Sample:
    features: bytes
    label: str
    flow_hash: str
    capture: str


@dataclass
class PreprocessResult:
    dataset: Dataset
    samples: list[Sample]
    counters: Counter = field(default_factory=Counter)


def _tls_samples(flows: list[Flow], table: LabelTable, capture: str, salt: str, cutoff: int,
                 anchor: str, window: float, counters: Counter) -> list[Sample]:
    extracted = {}
    for i, flow in enumerate(flows):
        try:
            feats = extract_tls_features(flow, cutoff, HANDSHAKE_PACKETS, anchor)
        except NoHandshakeFound:
            counters["no_handshake"] += 1
            continue
        flow.sni, flow.session_id = feats.sni, feats.session_id
        extracted[i] = feats
    labeling = label_flows(flows, table, window)
    samples = []
    for i, feats in extracted.items():
        name = labeling.labels.get(i)
        if name is None:
            counters["unlabeled"] += 1
            continue
        counters["labeled"] += 1
        clean = obfuscate(feats.features, feats.sni_regions + feats.cipher_regions)
        samples.append(Sample(clean, name, flows[i].key.salted_hash(salt), capture))
    return samples


def _quic_samples(flows: list[Flow], label_map: dict[str, str], capture: str, salt: str,
                  cutoff: int, counters: Counter) -> list[Sample]:
    samples = []
    for flow in flows:
        try:
            feats = extract_quic_features(flow, cutoff)
        except NotQuic:
            counters["not_quic"] += 1
            continue
        h = flow.key.salted_hash(salt)
        name = label_map.get(h)
        if name is None:
            counters["unlabeled"] += 1
            continue
        counters["labeled"] += 1
        samples.append(Sample(feats, name, h, capture))
    return samples


def preprocess(pcaps, table: LabelTable, protocol: str = "tls", salt: str = "", anchor: str = "tls",
               idle_timeout: float = IDLE_TIMEOUT, window: float = ADJACENCY_WINDOW,
               label_map: dict[str, str] | None = None, cutoff: int | None = None) -> PreprocessResult:
    counters: Counter = Counter()
    samples: list[Sample] = []
    for path in pcaps:
        reader = read_pcap(path)
        packets = list(reader)
        counters.update(reader.counters)
        flows = assemble_flows(packets, idle_timeout)
        counters["flows"] += len(flows)
        capture = Path(path).name
        if protocol == "tls":
            samples += _tls_samples(flows, table, capture, salt, cutoff or CUTOFF, anchor, window, counters)
        elif protocol == "quic":
            samples += _quic_samples(flows, label_map or {}, capture, salt, cutoff or QUIC_CUTOFF, counters)
        else:
            raise ValueError(f"protocol must be 'tls' or 'quic', got {protocol!r}")
    names = table.class_names
    if protocol == "quic" and label_map:
        names += [n for n in sorted(set(label_map.values())) if n not in names]
    width = (cutoff or CUTOFF) * HANDSHAKE_PACKETS if protocol == "tls" else (cutoff or QUIC_CUTOFF)
    features = np.frombuffer(b"".join(s.features for s in samples), dtype=np.uint8).reshape(len(samples), width)
    labels = np.array([names.index(s.label) for s in samples], dtype=np.int64)
    counters["samples"] = len(samples)
    if not samples:
        log.warning("no labeled samples produced")
    return PreprocessResult(Dataset(features, labels, names), samples, counters)
