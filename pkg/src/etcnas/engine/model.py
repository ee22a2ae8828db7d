"""Executing, differentiating and training a ModelGraph."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDataset, LabelOutOfRange, ShapeMismatch
from ..graph import ModelGraph
from .layers import Layer, log_softmax, make_layer, softmax
from .optim import Adam

log = logging.getLogger(__name__)

TRAIN = "train"
EVAL = "eval"


@dataclass
class TrainConfig:
    initial_lr: float = 0.001
    lr_halving_period: int = 10
    batch_size: int = 128
    epochs: int = 40
    rng_seed: int = 0

    def __post_init__(self):
        if self.initial_lr <= 0 or self.lr_halving_period < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training configuration {self}")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float | None = None


@dataclass
class ModelInstance:
    graph: ModelGraph
    params: dict[str, dict[str, np.ndarray]]
    optimizer: Adam = field(default_factory=Adam)
    epoch: int = 0
    mode: str = EVAL
    layers: dict[str, Layer] = field(default=None, repr=False)
    plan: list[tuple[str, list[str]]] = field(default=None, repr=False)

    def __post_init__(self):
        shapes = self.graph.shapes()
        specs = self.graph.layers
        order = self.graph.topological_order()
        self.plan = [(n, self.graph.inputs_of(n)) for n in order]
        self.layers = {
            n: make_layer(specs[n], [shapes[s] for s in ins], shapes[n]) for n, ins in self.plan
        }

    def trainable(self) -> dict[tuple[str, str], np.ndarray]:
        return {
            (n, name): self.params[n][name]
            for n, layer in self.layers.items()
            for name in layer.trainable
        }

    def all_arrays(self) -> dict[tuple[str, str], np.ndarray]:
        return {(n, name): arr for n, group in self.params.items() for name, arr in group.items()}

    @property
    def dtype(self):
        for group in self.params.values():
            for arr in group.values():
                return arr.dtype
        return np.float64


def init_params(graph: ModelGraph, rng_seed: int = 0, dtype=np.float64) -> ModelInstance:
    """Glorot-uniform kernels, zero biases, unit BatchNorm scale and variance."""
    rng = np.random.default_rng(rng_seed)
    model = ModelInstance(graph, {})
    for node_id, _ in model.plan:
        model.params[node_id] = model.layers[node_id].init(rng, dtype)
    return model


def _check_batch(model: ModelInstance, x: np.ndarray) -> None:
    spec = model.graph.layers[model.graph.input_id]
    if x.ndim != 3 or x.shape[1:] != (spec.length, spec.channels):
        raise ShapeMismatch(
            f"batch shape {x.shape[1:]} does not match graph input {(spec.length, spec.channels)}"
        )


def _run(model: ModelInstance, x: np.ndarray, train: bool, rng, stop_before_softmax: bool = False):
    _check_batch(model, x)
    x = x.astype(model.dtype, copy=False)
    values: dict[str, np.ndarray] = {}
    caches: dict[str, object] = {}
    out_id = model.graph.output_id
    for node_id, ins in model.plan:
        if node_id == out_id and stop_before_softmax:
            break
        layer = model.layers[node_id]
        inputs = [x] if not ins else [values[s] for s in ins]
        values[node_id], caches[node_id] = layer.forward(model.params[node_id], inputs, train, rng)
    return values, caches


def forward(model: ModelInstance, batch: np.ndarray, mode: str = EVAL, rng=None) -> np.ndarray:
    """Class probabilities for ``batch`` of shape (B, length, channels)."""
    train = mode == TRAIN
    if train and rng is None:
        rng = np.random.default_rng()
    values, _ = _run(model, batch, train, rng)
    return values[model.graph.output_id]


def _backward(model: ModelInstance, caches, seeds: dict[str, np.ndarray]) -> dict[tuple[str, str], np.ndarray]:
    upstream: dict[str, np.ndarray] = dict(seeds)
    grads: dict[tuple[str, str], np.ndarray] = {}
    for node_id, ins in reversed(model.plan):
        if node_id not in upstream or node_id not in caches:
            continue
        dout = upstream.pop(node_id)
        layer = model.layers[node_id]
        dins, dparams = layer.backward(model.params[node_id], caches[node_id], dout)
        for name, g in dparams.items():
            grads[(node_id, name)] = g
        for src, d in zip(ins, dins):
            if src in upstream:
                upstream[src] = upstream[src] + d
            else:
                upstream[src] = d
    for key, arr in model.trainable().items():
        if key not in grads:
            grads[key] = np.zeros_like(arr)
    return grads


def loss_and_grads(model: ModelInstance, batch: np.ndarray, labels, mode: str = TRAIN, rng=None):
    """Mean sparse categorical cross-entropy and its gradient for every trainable parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    c = model.graph.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    train = mode == TRAIN
    if train and rng is None:
        rng = np.random.default_rng()
    values, caches = _run(model, batch, train, rng, stop_before_softmax=True)
    out_id = model.graph.output_id
    logits_id = model.graph.inputs_of(out_id)[0]
    logits = values[logits_id]
    n = len(labels)
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, _backward(model, caches, {logits_id: dlogits})


def adam_step(model: ModelInstance, grads: dict, lr: float) -> ModelInstance:
    params = model.trainable()
    model.optimizer.update(params, {k: grads[k] for k in params}, lr)
    return model


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    return cfg.initial_lr * 0.5 ** (epoch // cfg.lr_halving_period)


def to_input(features: np.ndarray) -> np.ndarray:
    """uint8 byte vectors (N, L) -> float tensor (N, L, 1) scaled to [0, 1]."""
    arr = np.asarray(features)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64, copy=False)


def predict(model: ModelInstance, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    preds = [
        forward(model, x[i:i + batch_size], EVAL).argmax(axis=-1) for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(model: ModelInstance, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    return float((predict(model, x) == np.asarray(y)).mean())


def train(
    model: ModelInstance,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    epochs: int | None = None,
) -> tuple[ModelInstance, list[EpochStats]]:
    """Mini-batch Adam with a step-halving schedule; the schedule position is ``model.epoch``."""
    if len(x) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    y = np.asarray(y, dtype=np.int64)
    history = []
    for _ in range(cfg.epochs if epochs is None else epochs):
        e = model.epoch
        lr = learning_rate(cfg, e)
        rng = np.random.default_rng([cfg.rng_seed, e])
        order = rng.permutation(len(x))
        model.mode = TRAIN
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, x[idx], y[idx], TRAIN, rng)
            adam_step(model, grads, lr)
            total += loss * len(idx)
        model.mode = EVAL
        model.epoch += 1
        val = accuracy(model, x_val, y_val) if x_val is not None else None
        history.append(EpochStats(e, lr, total / len(x), val))
        log.debug("epoch %d lr %.6f loss %.5f val %s", e, lr, total / len(x), val)
    return model, history
