"""Typed DAG of layer specifications: shape inference, parameter accounting, text format."""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Iterable

from .errors import ParseError, SchemaVersionMismatch, ShapeMismatch, UnreachableNode, GraphError

SCHEMA_TAG = "etcnas.graph/1"

Shape = tuple[int, ...]


class Kind(str, Enum):
    INPUT = "Input"
    CONV1D = "Conv1D"
    CONV2D = "Conv2D"
    SEPCONV1D = "SeparableConv1D"
    DENSE = "Dense"
    BATCHNORM = "BatchNorm"
    DROPOUT = "Dropout"
    RELU = "ReLU"
    ELU = "ELU"
    MAXPOOL1D = "MaxPool1D"
    AVGPOOL1D = "AvgPool1D"
    MAXPOOL2D = "MaxPool2D"
    AVGPOOL2D = "AvgPool2D"
    ADD = "Add"
    CONCAT = "Concat"
    FLATTEN = "Flatten"
    GLOBALAVGPOOL = "GlobalAvgPool"
    SOFTMAX = "Softmax"
    IDENTITY = "Identity"
    SHIFT = "Shift"


CONV_KINDS = {Kind.CONV1D, Kind.CONV2D, Kind.SEPCONV1D}
POOL_KINDS = {Kind.MAXPOOL1D, Kind.AVGPOOL1D, Kind.MAXPOOL2D, Kind.AVGPOOL2D}
SPATIAL_RANK = {
    Kind.CONV1D: 1, Kind.SEPCONV1D: 1, Kind.MAXPOOL1D: 1, Kind.AVGPOOL1D: 1,
    Kind.CONV2D: 2, Kind.MAXPOOL2D: 2, Kind.AVGPOOL2D: 2,
}
MULTI_INPUT_KINDS = {Kind.ADD, Kind.CONCAT}

_ATTRS: dict[Kind, frozenset[str]] = defaultdict(frozenset)
_ATTRS.update({
    Kind.INPUT: frozenset({"length", "channels", "reshape"}),
    Kind.DENSE: frozenset({"units"}),
    Kind.DROPOUT: frozenset({"rate"}),
})
for _k in CONV_KINDS:
    _ATTRS[_k] = frozenset({"kernel_size", "stride", "filters"})
for _k in POOL_KINDS:
    _ATTRS[_k] = frozenset({"kernel_size", "stride"})
_OPTIONAL = {"reshape", "stride"}
_ATTR_NAMES = ("length", "channels", "reshape", "kernel_size", "stride", "filters", "units", "rate")


@dataclass(frozen=True)
class LayerSpec:
    """One layer. Only the attributes meaningful for ``kind`` may be set."""

    kind: Kind
    length: int | None = None
    channels: int | None = None
    reshape: tuple[int, int] | None = None
    kernel_size: int | None = None
    stride: int | None = None
    filters: int | None = None
    units: int | None = None
    rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.reshape is not None:
            object.__setattr__(self, "reshape", tuple(int(v) for v in self.reshape))
        allowed = _ATTRS[self.kind]
        if self.kind in CONV_KINDS or self.kind in POOL_KINDS:
            if self.stride is None:
                object.__setattr__(self, "stride", 1)
        for name in _ATTR_NAMES:
            value = getattr(self, name)
            if name in allowed:
                if value is None and name not in _OPTIONAL:
                    raise GraphError(f"{self.kind.value} requires attribute {name!r}")
            elif value is not None:
                raise GraphError(f"{self.kind.value} does not take attribute {name!r}")
        for name in ("length", "channels", "kernel_size", "stride", "filters", "units"):
            value = getattr(self, name)
            if value is not None and (int(value) != value or value < 1):
                raise GraphError(f"{name} must be a positive count, got {value!r}")
        if self.rate is not None and not 0.0 <= self.rate < 1.0:
            raise GraphError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.reshape is not None:
            h, w = self.reshape
            if h < 1 or w < 1 or h * w < self.length:
                raise GraphError(f"reshape {self.reshape} cannot hold {self.length} values")

    def attrs(self) -> dict:
        return {
            name: (list(v) if isinstance(v, tuple) else v)
            for name in _ATTR_NAMES
            if (v := getattr(self, name)) is not None
        }


@dataclass(frozen=True)
class ParamCount:
    total: int
    trainable: int

    @property
    def non_trainable(self) -> int:
        return self.total - self.trainable

    def __add__(self, other: "ParamCount") -> "ParamCount":
        return ParamCount(self.total + other.total, self.trainable + other.trainable)


@dataclass(frozen=True)
class ModelGraph:
    """Immutable layer DAG. Validated on construction: structure and shapes."""

    nodes: tuple[tuple[str, LayerSpec], ...]
    edges: tuple[tuple[str, str, int], ...]
    num_classes: int
    _shapes: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple((str(i), s) for i, s in self.nodes))
        object.__setattr__(self, "edges", tuple((str(a), str(b), int(c)) for a, b, c in self.edges))
        _check_structure(self)
        object.__setattr__(self, "_shapes", _infer(self, self.topological_order()))

    # -- structural helpers -------------------------------------------------
    @property
    def layers(self) -> dict[str, LayerSpec]:
        return dict(self.nodes)

    @property
    def input_id(self) -> str:
        return next(i for i, s in self.nodes if s.kind is Kind.INPUT)

    @property
    def output_id(self) -> str:
        return next(i for i, s in self.nodes if s.kind is Kind.SOFTMAX)

    @property
    def input_shape(self) -> Shape:
        spec = self.layers[self.input_id]
        return (spec.length, spec.channels)

    def inputs_of(self, node_id: str) -> list[str]:
        incoming = sorted((slot, src) for src, dst, slot in self.edges if dst == node_id)
        return [src for _, src in incoming]

    def consumers_of(self, node_id: str) -> list[str]:
        return [dst for src, dst, _ in self.edges if src == node_id]

    def topological_order(self) -> list[str]:
        return _toposort([i for i, _ in self.nodes], self.edges)

    def shapes(self) -> dict[str, Shape]:
        return dict(self._shapes)

    def kinds(self) -> list[Kind]:
        return [s.kind for _, s in self.nodes]

    def fingerprint(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


def _toposort(ids: list[str], edges: Iterable[tuple[str, str, int]]) -> list[str]:
    indeg = {i: 0 for i in ids}
    succ = defaultdict(list)
    for src, dst, _ in edges:
        indeg[dst] += 1
        succ[src].append(dst)
    queue = deque(i for i in ids if indeg[i] == 0)
    order = []
    while queue:
        n = queue.popleft()
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if len(order) != len(ids):
        raise GraphError("graph contains a cycle")
    return order


def _check_structure(g: ModelGraph) -> None:
    ids = [i for i, _ in g.nodes]
    if len(set(ids)) != len(ids):
        raise GraphError("duplicate node ids")
    known = set(ids)
    for src, dst, _ in g.edges:
        if src not in known or dst not in known:
            raise GraphError(f"edge {src}->{dst} references an unknown node")
    kinds = [s.kind for _, s in g.nodes]
    if kinds.count(Kind.INPUT) != 1:
        raise GraphError("graph needs exactly one Input node")
    if kinds.count(Kind.SOFTMAX) != 1:
        raise GraphError("graph needs exactly one Softmax node")
    if g.num_classes < 1:
        raise GraphError("num_classes must be positive")
    _toposort(ids, g.edges)  # raises on cycles
    indeg = defaultdict(int)
    outdeg = defaultdict(int)
    for src, dst, _ in g.edges:
        indeg[dst] += 1
        outdeg[src] += 1
    for node_id, spec in g.nodes:
        n_in = indeg[node_id]
        if spec.kind is Kind.INPUT:
            if n_in:
                raise GraphError("Input node cannot have in-edges")
        elif spec.kind in MULTI_INPUT_KINDS:
            if n_in < 2:
                raise GraphError(f"{spec.kind.value} node {node_id!r} needs >= 2 inputs, has {n_in}")
        elif n_in != 1:
            raise GraphError(f"{spec.kind.value} node {node_id!r} needs exactly 1 input, has {n_in}")
        if spec.kind is Kind.SOFTMAX and outdeg[node_id]:
            raise GraphError("Softmax must be the graph sink")
        if spec.kind is not Kind.SOFTMAX and not outdeg[node_id]:
            raise GraphError(f"node {node_id!r} is a dead end; only Softmax may be a sink")
    input_id = next(i for i, s in g.nodes if s.kind is Kind.INPUT)
    reached = {input_id}
    succ = defaultdict(list)
    for src, dst, _ in g.edges:
        succ[src].append(dst)
    stack = [input_id]
    while stack:
        for m in succ[stack.pop()]:
            if m not in reached:
                reached.add(m)
                stack.append(m)
    missing = [i for i in ids if i not in reached]
    if missing:
        raise UnreachableNode(f"nodes not reachable from Input: {missing}")


def _out_len(n: int, stride: int) -> int:
    return -(-n // stride)


def layer_output_shape(spec: LayerSpec, in_shapes: list[Shape], node_id: str = "?") -> Shape:
    k = spec.kind
    if k is Kind.INPUT:
        if spec.reshape is not None:
            return (*spec.reshape, spec.channels)
        return (spec.length, spec.channels)
    if k is Kind.ADD:
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if s != first:
                raise ShapeMismatch(f"Add {node_id!r} inputs differ: {in_shapes}")
        return first
    if k is Kind.CONCAT:
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if len(s) != len(first) or s[:-1] != first[:-1]:
                raise ShapeMismatch(f"Concat {node_id!r} inputs differ outside the channel axis: {in_shapes}")
        return (*first[:-1], sum(s[-1] for s in in_shapes))
    (x,) = in_shapes
    if k in SPATIAL_RANK:
        if len(x) != SPATIAL_RANK[k] + 1:
            raise ShapeMismatch(f"{k.value} {node_id!r} expects rank-{SPATIAL_RANK[k] + 1} input, got {x}")
        spatial = tuple(_out_len(n, spec.stride) for n in x[:-1])
        channels = spec.filters if k in CONV_KINDS else x[-1]
        return (*spatial, channels)
    if k is Kind.DENSE:
        if len(x) != 1:
            raise ShapeMismatch(f"Dense {node_id!r} expects a flat input, got {x}")
        return (spec.units,)
    if k is Kind.FLATTEN:
        return (math.prod(x),)
    if k is Kind.GLOBALAVGPOOL:
        if len(x) < 2:
            raise ShapeMismatch(f"GlobalAvgPool {node_id!r} expects spatial input, got {x}")
        return (x[-1],)
    if k is Kind.SHIFT and len(x) < 2:
        raise ShapeMismatch(f"Shift {node_id!r} expects spatial input, got {x}")
    return x


def _infer(g: ModelGraph, order: list[str]) -> dict[str, Shape]:
    layers = g.layers
    shapes: dict[str, Shape] = {}
    for node_id in order:
        ins = [shapes[s] for s in g.inputs_of(node_id)]
        shapes[node_id] = layer_output_shape(layers[node_id], ins, node_id)
    out = shapes[g.output_id]
    if out != (g.num_classes,):
        raise ShapeMismatch(f"Softmax output {out} does not match num_classes={g.num_classes}")
    return shapes


def infer_shapes(graph: ModelGraph, order: list[str] | None = None) -> dict[str, Shape]:
    """Per-node output shapes, channels-last. ``order`` may be any topological order."""
    if order is None:
        return graph.shapes()
    return _infer(graph, order)


def layer_params(spec: LayerSpec, in_shapes: list[Shape]) -> ParamCount:
    k = spec.kind
    if k in (Kind.CONV1D, Kind.CONV2D):
        c_in = in_shapes[0][-1]
        window = spec.kernel_size ** SPATIAL_RANK[k]
        n = window * c_in * spec.filters + spec.filters
        return ParamCount(n, n)
    if k is Kind.SEPCONV1D:
        c_in = in_shapes[0][-1]
        n = spec.kernel_size * c_in + c_in * spec.filters + spec.filters
        return ParamCount(n, n)
    if k is Kind.DENSE:
        u_in = in_shapes[0][0]
        n = u_in * spec.units + spec.units
        return ParamCount(n, n)
    if k is Kind.BATCHNORM:
        c = in_shapes[0][-1]
        return ParamCount(4 * c, 2 * c)
    return ParamCount(0, 0)


def count_params(graph: ModelGraph) -> ParamCount:
    shapes = graph.shapes()
    total = ParamCount(0, 0)
    for node_id, spec in graph.nodes:
        total = total + layer_params(spec, [shapes[s] for s in graph.inputs_of(node_id)])
    return total


def batchnorm_channels(graph: ModelGraph) -> int:
    shapes = graph.shapes()
    return sum(
        shapes[graph.inputs_of(i)[0]][-1] for i, s in graph.nodes if s.kind is Kind.BATCHNORM
    )


# -- text format ---------------------------------------------------------------

def serialize(graph: ModelGraph) -> str:
    lines = [
        "{",
        f' "schema": {json.dumps(SCHEMA_TAG)},',
        f' "num_classes": {graph.num_classes},',
        ' "nodes": [',
    ]
    node_lines = [
        "  " + json.dumps({"id": i, "kind": s.kind.value, **s.attrs()}, sort_keys=False)
        for i, s in graph.nodes
    ]
    lines.append(",\n".join(node_lines))
    lines.append(" ],")
    lines.append(' "edges": [')
    lines.append(",\n".join("  " + json.dumps([a, b, c]) for a, b, c in graph.edges))
    lines.append(" ]")
    lines.append("}")
    return "\n".join(line for line in lines if line) + "\n"


def _item_lines(text: str, prefix: str) -> list[int]:
    return [n for n, line in enumerate(text.splitlines(), 1) if line.lstrip().startswith(prefix)]


def deserialize(text: str) -> ModelGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("document must be an object", line=1)
    schema = doc.get("schema")
    if schema is None:
        raise ParseError("missing schema tag", field="schema")
    if schema != SCHEMA_TAG:
        raise SchemaVersionMismatch(f"expected schema {SCHEMA_TAG!r}, found {schema!r}")
    node_lines = _item_lines(text, '{"id"')
    edge_lines = _item_lines(text, '["')

    def line_of(lines, idx):
        return lines[idx] if idx < len(lines) else None

    for key in ("num_classes", "nodes", "edges"):
        if key not in doc:
            raise ParseError(f"missing {key!r}", field=key)
    if not isinstance(doc["nodes"], list) or not isinstance(doc["edges"], list):
        raise ParseError("nodes and edges must be lists", field="nodes")
    nodes = []
    spec_fields = {f.name for f in fields(LayerSpec)}
    for idx, raw in enumerate(doc["nodes"]):
        where = dict(line=line_of(node_lines, idx), field=f"nodes[{idx}]")
        if not isinstance(raw, dict) or "id" not in raw or "kind" not in raw:
            raise ParseError("node needs 'id' and 'kind'", **where)
        attrs = {k: v for k, v in raw.items() if k not in ("id", "kind")}
        unknown = set(attrs) - spec_fields
        if unknown:
            raise ParseError(f"unknown attributes {sorted(unknown)}", **where)
        try:
            spec = LayerSpec(Kind(raw["kind"]), **attrs)
        except (ValueError, GraphError, TypeError) as exc:
            raise ParseError(str(exc), **where) from None
        nodes.append((raw["id"], spec))
    ids = {i for i, _ in nodes}
    edges = []
    for idx, raw in enumerate(doc["edges"]):
        where = dict(line=line_of(edge_lines, idx), field=f"edges[{idx}]")
        if not (isinstance(raw, list) and len(raw) == 3):
            raise ParseError("edge must be [src, dst, slot]", **where)
        src, dst, slot = raw
        for end in (src, dst):
            if end not in ids:
                raise ParseError(f"dangling edge endpoint {end!r}", **where)
        edges.append((src, dst, slot))
    try:
        return ModelGraph(tuple(nodes), tuple(edges), int(doc["num_classes"]))
    except GraphError as exc:
        raise ParseError(f"invalid graph: {exc}") from None


class GraphBuilder:
    """Incremental construction helper with auto-numbered node ids."""

    def __init__(self):
        self.nodes: list[tuple[str, LayerSpec]] = []
        self.edges: list[tuple[str, str, int]] = []
        self._counter = defaultdict(int)

    def add(self, spec: LayerSpec, *inputs: str, name: str | None = None) -> str:
        if name is None:
            base = spec.kind.value.lower()
            name = f"{base}_{self._counter[base]}"
            self._counter[base] += 1
        self.nodes.append((name, spec))
        for slot, src in enumerate(inputs):
            self.edges.append((src, name, slot))
        return name

    def layer(self, kind: Kind, *inputs: str, name: str | None = None, **attrs) -> str:
        return self.add(LayerSpec(kind, **attrs), *inputs, name=name)

    def build(self, num_classes: int) -> ModelGraph:
        return ModelGraph(tuple(self.nodes), tuple(self.edges), num_classes)
