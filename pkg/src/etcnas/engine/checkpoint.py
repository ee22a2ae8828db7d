"""Checkpoint file: versioned header, serialized graph, flat little-endian tensor blob."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import EngineError, MagicMismatch, SchemaVersionMismatch
from ..graph import deserialize, serialize
from .model import ModelInstance
from .optim import Adam

MAGIC = b"ETCNASCK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _tensor_entries(model: ModelInstance):
    for (node, name), arr in model.all_arrays().items():
        yield "param", node, name, arr
    for (node, name), arr in model.optimizer.m.items():
        yield "adam_m", node, name, arr
    for (node, name), arr in model.optimizer.v.items():
        yield "adam_v", node, name, arr


def save_checkpoint(model: ModelInstance, path: str | Path) -> None:
    index = []
    chunks = []
    offset = 0
    for role, node, name, arr in _tensor_entries(model):
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        index.append({
            "role": role, "node": node, "name": name, "shape": list(arr.shape),
            "dtype": arr.dtype.str.lstrip("<>="), "offset": offset, "nbytes": len(data),
        })
        chunks.append(data)
        offset += len(data)
    header = json.dumps({
        "graph": serialize(model.graph),
        "epoch": model.epoch,
        "optimizer_step": model.optimizer.step,
        "tensors": index,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: str | Path) -> ModelInstance:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise MagicMismatch(f"{path}: file too short for a checkpoint header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise MagicMismatch(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise SchemaVersionMismatch(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = _PREFIX.size
    header = json.loads(raw[start:start + header_len])
    blob = memoryview(raw)[start + header_len:]
    graph = deserialize(header["graph"])
    params: dict[str, dict[str, np.ndarray]] = {node: {} for node, _ in graph.nodes}
    opt = Adam()
    opt.step = header["optimizer_step"]
    for entry in header["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(blob):
            raise EngineError(f"{path}: tensor {entry['node']}/{entry['name']} runs past end of file")
        dtype = np.dtype("<" + entry["dtype"])
        arr = np.frombuffer(blob[entry["offset"]:end], dtype=dtype).reshape(entry["shape"]).copy()
        key = (entry["node"], entry["name"])
        if entry["role"] == "param":
            params[entry["node"]][entry["name"]] = arr
        elif entry["role"] == "adam_m":
            opt.m[key] = arr
        else:
            opt.v[key] = arr
    model = ModelInstance(graph, params, optimizer=opt, epoch=header["epoch"])
    for node, layer in model.layers.items():
        missing = set(layer.trainable + layer.state) - set(params[node])
        if missing:
            raise EngineError(f"{path}: node {node!r} lacks tensors {sorted(missing)}")
    return model
