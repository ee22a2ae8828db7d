"""Search spaces: the cell space, the CNN+MLP baseline space, and fixed reference models."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, fields
from fractions import Fraction

import numpy as np

from .errors import ArityViolation, DomainViolation, UnknownReference
from .graph import GraphBuilder, Kind, ModelGraph

IDENTITY = "identity"
SEP_CONV_3 = "sep_conv_3"
SEP_CONV_5 = "sep_conv_5"
AVG_POOL_3 = "avg_pool_3"
MAX_POOL_3 = "max_pool_3"
DEFAULT_OPS = (IDENTITY, SEP_CONV_3, SEP_CONV_5, AVG_POOL_3, MAX_POOL_3)
KNOWN_OPS = set(DEFAULT_OPS)

NORMAL = "normal"
REDUCTION = "reduction"
SLOTS_PER_NODE = 4  # input1, op1, input2, op2


@dataclass(frozen=True)
class SpaceConfig:
    nodes_per_cell: int = 4
    op_set: tuple[str, ...] = DEFAULT_OPS
    initial_filters: int = 64
    cell_dropout_rate: float = 0.4
    input_length: int = 1800
    input_channels: int = 1
    num_classes: int = 8
    cells: tuple[str, ...] = (NORMAL, REDUCTION)

    def __post_init__(self):
        object.__setattr__(self, "op_set", tuple(self.op_set))
        object.__setattr__(self, "cells", tuple(self.cells))
        if self.nodes_per_cell < 1:
            raise DomainViolation("nodes_per_cell must be >= 1")
        if not self.op_set:
            raise DomainViolation("op_set must be non-empty")
        unknown = set(self.op_set) - KNOWN_OPS
        if unknown:
            raise DomainViolation(f"unknown ops {sorted(unknown)}")
        if not 0.0 <= self.cell_dropout_rate < 1.0:
            raise DomainViolation("cell_dropout_rate must be in [0, 1)")
        if not self.cells or set(self.cells) - {NORMAL, REDUCTION}:
            raise DomainViolation(f"cells must be drawn from {NORMAL!r}/{REDUCTION!r}")
        for name in ("initial_filters", "input_length", "input_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise DomainViolation(f"{name} must be positive")

    @property
    def sequence_length(self) -> int:
        return len(self.cells) * self.nodes_per_cell * SLOTS_PER_NODE

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "SpaceConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise DomainViolation(f"unknown space config keys {sorted(extra)}")
        return cls(**data)


@dataclass(frozen=True)
class NodeDecision:
    input1: int
    op1: int
    input2: int
    op2: int


@dataclass(frozen=True)
class CellSpec:
    kind: str
    decisions: tuple[NodeDecision, ...]


def decision_arity(space: SpaceConfig, position: int) -> int:
    if not 0 <= position < space.sequence_length:
        raise IndexError(f"position {position} outside sequence of length {space.sequence_length}")
    within_cell = position % (space.nodes_per_cell * SLOTS_PER_NODE)
    node, slot = divmod(within_cell, SLOTS_PER_NODE)
    if slot in (0, 2):
        return node + 1
    return len(space.op_set)


def arities(space: SpaceConfig) -> list[int]:
    return [decision_arity(space, p) for p in range(space.sequence_length)]


def space_size(space: SpaceConfig) -> int:
    per_cell = 1
    n_ops = len(space.op_set)
    for k in range(space.nodes_per_cell):
        per_cell *= (k + 1) ** 2 * n_ops**2
    return per_cell ** len(space.cells)


def sample_random(space: SpaceConfig, rng_seed: int | np.random.Generator | None = None) -> list[int]:
    rng = np.random.default_rng(rng_seed)
    return [int(rng.integers(a)) for a in arities(space)]


def check_sequence(seq, space: SpaceConfig) -> list[int]:
    seq = [int(v) for v in seq]
    if len(seq) != space.sequence_length:
        raise ArityViolation(f"sequence length {len(seq)} != {space.sequence_length}")
    for pos, (value, arity) in enumerate(zip(seq, arities(space))):
        if not 0 <= value < arity:
            raise ArityViolation(f"position {pos}: value {value} outside arity {arity}")
    return seq


def split_cells(seq, space: SpaceConfig) -> list[CellSpec]:
    seq = check_sequence(seq, space)
    per_cell = space.nodes_per_cell * SLOTS_PER_NODE
    cells = []
    for ci, kind in enumerate(space.cells):
        chunk = seq[ci * per_cell:(ci + 1) * per_cell]
        decisions = tuple(
            NodeDecision(*chunk[k:k + SLOTS_PER_NODE]) for k in range(0, per_cell, SLOTS_PER_NODE)
        )
        cells.append(CellSpec(kind, decisions))
    return cells


def loose_ends(cell: CellSpec) -> list[int]:
    """Node indices whose output no later node in the cell consumes (excluding the last node)."""
    consumed = set()
    for d in cell.decisions:
        consumed.update({d.input1, d.input2})
    n = len(cell.decisions)
    return [k for k in range(n - 1) if k + 1 not in consumed]


# -- decoding -------------------------------------------------------------------

def _sep_conv_hyper(b: GraphBuilder, x: str, kernel: int, filters: int, rate: float, prefix: str) -> str:
    x = b.layer(Kind.RELU, x, name=f"{prefix}/relu")
    x = b.layer(Kind.SEPCONV1D, x, name=f"{prefix}/sepconv", kernel_size=kernel, filters=filters)
    x = b.layer(Kind.BATCHNORM, x, name=f"{prefix}/bn")
    return b.layer(Kind.DROPOUT, x, name=f"{prefix}/dropout", rate=rate)


def _apply_op(b: GraphBuilder, op: str, x: str, channels: int, space: SpaceConfig, prefix: str) -> str:
    if op == IDENTITY:
        return b.layer(Kind.IDENTITY, x, name=f"{prefix}/identity")
    if op in (SEP_CONV_3, SEP_CONV_5):
        k = 3 if op == SEP_CONV_3 else 5
        x = _sep_conv_hyper(b, x, k, channels, space.cell_dropout_rate, f"{prefix}/sep{k}a")
        return _sep_conv_hyper(b, x, k, channels, space.cell_dropout_rate, f"{prefix}/sep{k}b")
    kind = Kind.AVGPOOL1D if op == AVG_POOL_3 else Kind.MAXPOOL1D
    return b.layer(kind, x, name=f"{prefix}/{op}", kernel_size=3, stride=1)


def _filter_alignment(b: GraphBuilder, x: str, filters: int, prefix: str) -> str:
    x = b.layer(Kind.RELU, x, name=f"{prefix}/relu")
    x = b.layer(Kind.CONV1D, x, name=f"{prefix}/conv", kernel_size=1, filters=filters)
    return b.layer(Kind.BATCHNORM, x, name=f"{prefix}/bn")


def _factorized_reduction(b: GraphBuilder, x: str, filters: int, prefix: str) -> str:
    half = filters // 2
    a = b.layer(Kind.AVGPOOL1D, x, name=f"{prefix}/path_a/pool", kernel_size=1, stride=2)
    a = b.layer(Kind.CONV1D, a, name=f"{prefix}/path_a/conv", kernel_size=1, filters=half)
    s = b.layer(Kind.SHIFT, x, name=f"{prefix}/path_b/shift")
    s = b.layer(Kind.AVGPOOL1D, s, name=f"{prefix}/path_b/pool", kernel_size=1, stride=2)
    s = b.layer(Kind.CONV1D, s, name=f"{prefix}/path_b/conv", kernel_size=1, filters=filters - half)
    x = b.layer(Kind.CONCAT, a, s, name=f"{prefix}/concat")
    return b.layer(Kind.BATCHNORM, x, name=f"{prefix}/bn")


def _cell(b: GraphBuilder, x: str, cell: CellSpec, channels: int, space: SpaceConfig, prefix: str) -> str:
    outputs = [x]
    for k, d in enumerate(cell.decisions):
        node = f"{prefix}/node{k}"
        left = _apply_op(b, space.op_set[d.op1], outputs[d.input1], channels, space, f"{node}/in1")
        right = _apply_op(b, space.op_set[d.op2], outputs[d.input2], channels, space, f"{node}/in2")
        outputs.append(b.layer(Kind.ADD, left, right, name=f"{node}/add"))
    loose = [outputs[k + 1] for k in loose_ends(cell)]
    if not loose:
        return outputs[-1]
    return b.layer(Kind.ADD, outputs[-1], *loose, name=f"{prefix}/loose_ends_add")


def decode(seq, space: SpaceConfig) -> ModelGraph:
    cells = split_cells(seq, space)
    filters = space.initial_filters
    b = GraphBuilder()
    x = b.layer(Kind.INPUT, name="input", length=space.input_length, channels=space.input_channels)
    for ci, cell in enumerate(cells):
        prefix = f"cell{ci}_{cell.kind}"
        if cell.kind == REDUCTION:
            x = _factorized_reduction(b, x, filters, f"{prefix}/factorized_reduction")
        else:
            x = _filter_alignment(b, x, filters, f"{prefix}/filter_alignment")
        x = _cell(b, x, cell, filters, space, prefix)
    x = b.layer(Kind.GLOBALAVGPOOL, x, name="head/gap")
    x = b.layer(Kind.DENSE, x, name="head/dense", units=space.num_classes)
    b.layer(Kind.SOFTMAX, x, name="head/softmax")
    return b.build(space.num_classes)


def cell_terminal(graph: ModelGraph, cell_index: int, space: SpaceConfig) -> str:
    """Id of the node whose output leaves the given cell."""
    prefix = f"cell{cell_index}_{space.cells[cell_index]}"
    ids = graph.layers
    candidate = f"{prefix}/loose_ends_add"
    if candidate in ids:
        return candidate
    return f"{prefix}/node{space.nodes_per_cell - 1}/add"


# -- CNN + MLP baseline space ---------------------------------------------------

CONV_ORDER_ITEMS = ("dropout", "activation", "batchnorm")


@dataclass(frozen=True)
class CnnMlpParams:
    conv_pool_blocks: int = 2
    conv_block_repeat: int = 2
    kernel: int = 1
    filters: int = 32
    conv_dropout: float = 0.025
    conv_order: tuple[str, ...] = CONV_ORDER_ITEMS
    pooling: str = "max"
    activation: str = "relu"
    batchnorm: bool = False
    dense_units: int = 100
    dense_layers: int = 3
    reduce_factor: float = 1.0
    mlp_activation: str = "relu"
    mlp_batchnorm: bool = False
    mlp_dropout: float = 0.4
    mlp_order: tuple[str, ...] = ("dropout", "batchnorm", "activation")

    DOMAINS = {
        "conv_pool_blocks": range(1, 7),
        "conv_block_repeat": range(2, 7),
        "kernel": (1, 2),
        "filters": (32, 64),
        "pooling": ("max", "avg"),
        "activation": ("relu", "elu"),
        "batchnorm": (False, True),
        "dense_units": (100, 200, 400),
        "dense_layers": (3, 4, 5),
        "reduce_factor": (1.0, 0.7),
        "mlp_activation": ("relu", "elu"),
        "mlp_batchnorm": (False, True),
    }
    OPEN_INTERVALS = {"conv_dropout": (0.0, 0.05), "mlp_dropout": (0.3, 0.5)}

    def __post_init__(self):
        object.__setattr__(self, "conv_order", tuple(self.conv_order))
        object.__setattr__(self, "mlp_order", tuple(self.mlp_order))
        for name, domain in self.DOMAINS.items():
            if getattr(self, name) not in domain:
                raise DomainViolation(f"{name}={getattr(self, name)!r} outside {tuple(domain)}")
        for name, (lo, hi) in self.OPEN_INTERVALS.items():
            if not lo < getattr(self, name) < hi:
                raise DomainViolation(f"{name}={getattr(self, name)!r} outside ({lo}, {hi})")
        for name in ("conv_order", "mlp_order"):
            if sorted(getattr(self, name)) != sorted(CONV_ORDER_ITEMS):
                raise DomainViolation(f"{name} must be a permutation of {CONV_ORDER_ITEMS}")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "CnnMlpParams":
        perms = list(itertools.permutations(CONV_ORDER_ITEMS))
        values = {name: domain[int(rng.integers(len(domain)))] for name, domain in cls.DOMAINS.items()}
        for name, (lo, hi) in cls.OPEN_INTERVALS.items():
            values[name] = float(lo + (hi - lo) * (0.5 + 0.98 * (rng.random() - 0.5)))
        values["conv_order"] = perms[int(rng.integers(len(perms)))]
        values["mlp_order"] = perms[int(rng.integers(len(perms)))]
        return cls(**values)


def conv_block_filters(filters: int, blocks: int) -> list[int]:
    """Filter width per CONV-Pool block: full for the first two, then halved each block."""
    return [filters if i < 2 else max(1, filters >> (i - 1)) for i in range(blocks)]


def dense_widths(units: int, layers: int, factor: float) -> list[int]:
    ratio = Fraction(str(factor))
    widths = [units]
    for _ in range(layers - 1):
        widths.append(max(1, math.floor(widths[-1] * ratio)))
    return widths


def rectangle_for(length: int) -> tuple[int, int]:
    """Smallest near-square (rows, cols) grid holding ``length`` bytes; the tail is zero-padded."""
    cols = math.isqrt(length)
    if cols * cols < length:
        cols += 1
    rows = -(-length // cols)
    return rows, cols


def _activation(b: GraphBuilder, x: str, name: str) -> str:
    return b.layer(Kind.RELU if name == "relu" else Kind.ELU, x)


def _ordered(b: GraphBuilder, x: str, order, rate: float, activation: str, batchnorm: bool) -> str:
    for item in order:
        if item == "dropout":
            x = b.layer(Kind.DROPOUT, x, rate=rate)
        elif item == "activation":
            x = _activation(b, x, activation)
        elif batchnorm:
            x = b.layer(Kind.BATCHNORM, x)
    return x


def build_cnn_mlp(params: CnnMlpParams, dims: str, input_shape: tuple[int, int], num_classes: int) -> ModelGraph:
    if dims not in ("1D", "2D"):
        raise DomainViolation(f"dims must be '1D' or '2D', got {dims!r}")
    length, channels = input_shape
    b = GraphBuilder()
    if dims == "2D":
        x = b.layer(Kind.INPUT, name="input", length=length, channels=channels, reshape=rectangle_for(length))
        conv_kind = Kind.CONV2D
        pool_kind = Kind.MAXPOOL2D if params.pooling == "max" else Kind.AVGPOOL2D
    else:
        x = b.layer(Kind.INPUT, name="input", length=length, channels=channels)
        conv_kind = Kind.CONV1D
        pool_kind = Kind.MAXPOOL1D if params.pooling == "max" else Kind.AVGPOOL1D
    for block, width in enumerate(conv_block_filters(params.filters, params.conv_pool_blocks)):
        repeat = 2 if block < 2 else params.conv_block_repeat
        for _ in range(repeat):
            x = b.layer(conv_kind, x, kernel_size=params.kernel, filters=width)
            x = _ordered(b, x, params.conv_order, params.conv_dropout, params.activation, params.batchnorm)
        x = b.layer(pool_kind, x, kernel_size=2, stride=2)
    x = b.layer(Kind.FLATTEN, x)
    for width in dense_widths(params.dense_units, params.dense_layers, params.reduce_factor):
        x = b.layer(Kind.DENSE, x, units=width)
        x = _ordered(b, x, params.mlp_order, params.mlp_dropout, params.mlp_activation, params.mlp_batchnorm)
    x = b.layer(Kind.DENSE, x, units=num_classes)
    b.layer(Kind.SOFTMAX, x, name="softmax")
    return b.build(num_classes)


# -- fixed reference baselines --------------------------------------------------

@dataclass(frozen=True)
class ReferenceDefaults:
    """Layer dimensions for a reference model; unknown widths carry documented defaults."""

    conv: tuple[tuple[int, int, int], ...]  # (kernel, filters, stride) per conv layer
    pool_after: tuple[int, ...]             # conv indices followed by a max pool
    pool_size: int
    dense: tuple[int, ...]                  # hidden dense widths before the classifier
    dropout: float = 0.0
    published_params: dict = field(default_factory=dict)


REFERENCES = {
    # two stacked convs, one max pool, three hidden dense layers + classifier
    "DeepPacketCNN": ReferenceDefaults(
        conv=((4, 200, 3), (5, 200, 1)), pool_after=(1,), pool_size=2, dense=(200, 100, 128),
        published_params={"service/TLS": 9_960_732, "app/TLS": 9_962_151},
    ),
    # (conv + pool) x 2, one hidden dense + classifier
    "E2ECNN": ReferenceDefaults(
        conv=((25, 32, 1), (25, 64, 1)), pool_after=(0, 1), pool_size=3, dense=(1024,),
        published_params={"service/TLS": 11_202_440, "app/TLS": 11_213_715},
    ),
    "UWOrangeH": ReferenceDefaults(
        conv=((5, 64, 1), (5, 64, 1), (5, 128, 1), (5, 128, 1)), pool_after=(1, 3), pool_size=2,
        dense=(256, 128), dropout=0.3,
        published_params={"service/TLS": 7_588_360, "app/TLS": 7_588_360},
    ),
    "UCDavisCNN": ReferenceDefaults(
        conv=((5, 64, 1), (5, 64, 1), (5, 128, 1), (5, 128, 1)), pool_after=(1, 3), pool_size=2,
        dense=(128,),
        published_params={"service/TLS": 6_507_016, "app/TLS": 6_507_016},
    ),
}

REFERENCE_INPUT_LENGTH = {"DeepPacketCNN": 1500, "E2ECNN": 768, "UWOrangeH": 1800, "UCDavisCNN": 1800}


def build_reference(name: str, input_len: int | None = None, num_classes: int = 8) -> ModelGraph:
    if name not in REFERENCES:
        raise UnknownReference(f"unknown reference model {name!r}; choose from {sorted(REFERENCES)}")
    cfg = REFERENCES[name]
    length = input_len or REFERENCE_INPUT_LENGTH[name]
    b = GraphBuilder()
    x = b.layer(Kind.INPUT, name="input", length=length, channels=1)
    for i, (kernel, filters, stride) in enumerate(cfg.conv):
        x = b.layer(Kind.CONV1D, x, kernel_size=kernel, filters=filters, stride=stride)
        x = b.layer(Kind.RELU, x)
        if i in cfg.pool_after:
            x = b.layer(Kind.MAXPOOL1D, x, kernel_size=cfg.pool_size, stride=cfg.pool_size)
    x = b.layer(Kind.FLATTEN, x)
    for width in cfg.dense:
        x = b.layer(Kind.DENSE, x, units=width)
        x = b.layer(Kind.RELU, x)
        if cfg.dropout:
            x = b.layer(Kind.DROPOUT, x, rate=cfg.dropout)
    x = b.layer(Kind.DENSE, x, units=num_classes)
    b.layer(Kind.SOFTMAX, x, name="softmax")
    return b.build(num_classes)
