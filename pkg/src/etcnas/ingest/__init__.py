"""Packet captures to labeled fixed-length byte datasets."""

from .dataset import Dataset, import_csv, read_dataset, split, write_dataset
from .flows import Flow, FlowKey, assemble_flows
from .labeling import LabelTable, label_flows, obfuscate
from .pcap import PacketRecord, read_pcap
from .pipeline import preprocess
from .quic import extract_quic_features
from .tls import extract_tls_features

__all__ = [
    "Dataset", "Flow", "FlowKey", "LabelTable", "PacketRecord", "assemble_flows", "extract_quic_features",
    "extract_tls_features", "import_csv", "label_flows", "obfuscate", "preprocess", "read_dataset",
    "read_pcap", "split", "write_dataset",
]
