"""Shared oracles for the test-suite: finite differences and tiny fixtures."""

import numpy as np

from etcnas.engine.layers import make_layer
from etcnas.graph import LayerSpec, layer_output_shape

FD_EPS = 1e-6
GRAD_RTOL = 1e-4
# below this norm a gradient is "zero" (e.g. a bias feeding a train-mode BatchNorm) and the
# difference is compared absolutely; central differences are accurate to ~1e-10 here
ZERO_NORM = 1e-7


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    diff = float(np.linalg.norm(a - b))
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return diff if scale < ZERO_NORM else diff / scale


def numeric_grad(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def check_layer(spec: LayerSpec, in_shapes, batch: int, seed: int = 0, train: bool = True):
    """Max relative error between analytic and numeric gradients over inputs and params."""
    rng = np.random.default_rng(seed)
    out_shape = layer_output_shape(spec, list(in_shapes))
    layer = make_layer(spec, list(in_shapes), out_shape)
    params = layer.init(rng, np.float64)
    for name in layer.trainable:  # move away from the trivial init (unit gamma, zero bias)
        params[name] = params[name] + rng.normal(0, 0.3, params[name].shape)
    xs = [rng.normal(size=(batch, *s)) for s in in_shapes]
    weight = rng.normal(size=(batch, *out_shape))

    def loss():
        out, _ = layer.forward(params, xs, train, np.random.default_rng(1))
        return float((out * weight).sum())

    out, cache = layer.forward(params, xs, train, np.random.default_rng(1))
    dins, dparams = layer.backward(params, cache, weight)
    errors = {}
    for i, x in enumerate(xs):
        errors[f"input{i}"] = rel_error(dins[i], numeric_grad(loss, x))
    for name in layer.trainable:
        errors[name] = rel_error(dparams[name], numeric_grad(loss, params[name]))
    return errors


def enumerate_weights(spec, in_shape):
    """Yield (tensor name, index, trainable) for every scalar weight, one at a time.

    Deliberately written as explicit loops over the layer's weight tensors, independent of
    the closed-form counts in the library.
    """
    from etcnas.graph import Kind, SPATIAL_RANK

    kind = spec.kind
    if kind in (Kind.CONV1D, Kind.CONV2D):
        c_in = in_shape[-1]
        rank = SPATIAL_RANK[kind]
        taps = [()]
        for _ in range(rank):
            taps = [t + (i,) for t in taps for i in range(spec.kernel_size)]
        for tap in taps:
            for c in range(c_in):
                for f in range(spec.filters):
                    yield "kernel", tap + (c, f), True
        for f in range(spec.filters):
            yield "bias", (f,), True
    elif kind is Kind.SEPCONV1D:
        c_in = in_shape[-1]
        for k in range(spec.kernel_size):
            for c in range(c_in):
                yield "depthwise", (k, c), True
        for c in range(c_in):
            for f in range(spec.filters):
                yield "pointwise", (c, f), True
        for f in range(spec.filters):
            yield "bias", (f,), True
    elif kind is Kind.DENSE:
        for i in range(in_shape[0]):
            for j in range(spec.units):
                yield "kernel", (i, j), True
        for j in range(spec.units):
            yield "bias", (j,), True
    elif kind is Kind.BATCHNORM:
        for name, trainable in (("gamma", True), ("beta", True), ("moving_mean", False), ("moving_var", False)):
            for c in range(in_shape[-1]):
                yield name, (c,), trainable


def enumerated_count(graph):
    shapes = graph.shapes()
    total = trainable = 0
    for node_id, spec in graph.nodes:
        ins = graph.inputs_of(node_id)
        if not ins:
            continue
        for _, _, is_trainable in enumerate_weights(spec, shapes[ins[0]]):
            total += 1
            trainable += is_trainable
    return total, trainable


def sep3_fraction(seq, space):
    """Rigged reward: fraction of op decisions that pick the 3-wide separable conv."""
    from etcnas.space import SEP_CONV_3, SLOTS_PER_NODE

    code = space.op_set.index(SEP_CONV_3)
    ops = [v for p, v in enumerate(seq) if p % SLOTS_PER_NODE in (1, 3)]
    return sum(v == code for v in ops) / len(ops)


def target_match(target):
    """Rigged reward with a unique optimum: fraction of positions equal to ``target``."""
    target = list(target)

    def reward(seq):
        return sum(a == b for a, b in zip(seq, target)) / len(target)

    return reward
