"""Forward and reverse-mode kernels for every layer kind, channels-last.

Each layer maps ``(params, inputs)`` to an output plus a cache, and the cache plus an
upstream gradient back to input gradients and parameter gradients.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..graph import SPATIAL_RANK, Kind, LayerSpec

BN_MOMENTUM = 0.99
BN_EPSILON = 1e-3
ELU_ALPHA = 1.0


def same_padding(n: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-n // stride)
    total = max((out - 1) * stride + kernel - n, 0)
    return out, total // 2, total - total // 2


def _pad_spec(x_shape, kernel, stride, rank):
    outs, pads = [], [(0, 0)]
    for n in x_shape[1:1 + rank]:
        out, left, right = same_padding(n, kernel, stride)
        outs.append(out)
        pads.append((left, right))
    pads.append((0, 0))
    return outs, pads


def _window(offset, outs, stride):
    return (slice(None),) + tuple(
        slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offset, outs)
    ) + (slice(None),)


def _crop(xp, pads):
    idx = tuple(slice(lo, xp.shape[d] - hi) for d, (lo, hi) in enumerate(pads))
    return xp[idx]


class Layer:
    trainable: tuple[str, ...] = ()
    state: tuple[str, ...] = ()

    def __init__(self, spec: LayerSpec, in_shapes, out_shape):
        self.spec = spec
        self.in_shapes = in_shapes
        self.out_shape = out_shape

    def init(self, rng: np.random.Generator, dtype) -> dict[str, np.ndarray]:
        return {}

    def forward(self, params, inputs, train: bool, rng):
        raise NotImplementedError

    def backward(self, params, cache, dout):
        raise NotImplementedError


def glorot(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class InputLayer(Layer):
    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        if self.spec.reshape is None:
            return x, None
        h, w = self.spec.reshape
        b, length, c = x.shape
        flat = np.zeros((b, h * w, c), dtype=x.dtype)
        flat[:, :length] = x
        return flat.reshape(b, h, w, c), None

    def backward(self, params, cache, dout):
        if self.spec.reshape is None:
            return [dout], {}
        b = dout.shape[0]
        flat = dout.reshape(b, -1, dout.shape[-1])
        return [flat[:, :self.spec.length]], {}


class Conv(Layer):
    trainable = ("kernel", "bias")

    def __init__(self, spec, in_shapes, out_shape):
        super().__init__(spec, in_shapes, out_shape)
        self.rank = SPATIAL_RANK[spec.kind]
        self.offsets = list(itertools.product(range(spec.kernel_size), repeat=self.rank))

    def init(self, rng, dtype):
        k, c_in, f = self.spec.kernel_size, self.in_shapes[0][-1], self.spec.filters
        window = k ** self.rank
        shape = (k,) * self.rank + (c_in, f)
        return {
            "kernel": glorot(rng, shape, window * c_in, window * f, dtype),
            "bias": np.zeros(f, dtype=dtype),
        }

    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        outs, pads = _pad_spec(x.shape, self.spec.kernel_size, self.spec.stride, self.rank)
        xp = np.pad(x, pads) if any(p != (0, 0) for p in pads) else x
        out = None
        for off in self.offsets:
            term = xp[_window(off, outs, self.spec.stride)] @ params["kernel"][off]
            out = term if out is None else out + term
        return out + params["bias"], (xp, outs, pads)

    def backward(self, params, cache, dout):
        xp, outs, pads = cache
        kernel = params["kernel"]
        dxp = np.zeros_like(xp)
        dkernel = np.zeros_like(kernel)
        f = dout.shape[-1]
        dflat = dout.reshape(-1, f)
        for off in self.offsets:
            win = _window(off, outs, self.spec.stride)
            patch = xp[win]
            dkernel[off] = patch.reshape(-1, patch.shape[-1]).T @ dflat
            dxp[win] += dout @ kernel[off].T
        grads = {"kernel": dkernel, "bias": dflat.sum(axis=0)}
        return [_crop(dxp, pads)], grads


class SeparableConv(Layer):
    trainable = ("depthwise", "pointwise", "bias")

    def init(self, rng, dtype):
        k, c_in, f = self.spec.kernel_size, self.in_shapes[0][-1], self.spec.filters
        return {
            "depthwise": glorot(rng, (k, c_in), k * c_in, k, dtype),
            "pointwise": glorot(rng, (c_in, f), c_in, f, dtype),
            "bias": np.zeros(f, dtype=dtype),
        }

    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        k, s = self.spec.kernel_size, self.spec.stride
        outs, pads = _pad_spec(x.shape, k, s, 1)
        xp = np.pad(x, pads)
        depth = None
        for j in range(k):
            term = xp[_window((j,), outs, s)] * params["depthwise"][j]
            depth = term if depth is None else depth + term
        out = depth @ params["pointwise"] + params["bias"]
        return out, (xp, depth, outs, pads)

    def backward(self, params, cache, dout):
        xp, depth, outs, pads = cache
        k, s = self.spec.kernel_size, self.spec.stride
        c_in = depth.shape[-1]
        dflat = dout.reshape(-1, dout.shape[-1])
        dpoint = depth.reshape(-1, c_in).T @ dflat
        ddepth = dout @ params["pointwise"].T
        dxp = np.zeros_like(xp)
        ddw = np.zeros_like(params["depthwise"])
        for j in range(k):
            win = _window((j,), outs, s)
            ddw[j] = (xp[win] * ddepth).reshape(-1, c_in).sum(axis=0)
            dxp[win] += ddepth * params["depthwise"][j]
        grads = {"depthwise": ddw, "pointwise": dpoint, "bias": dflat.sum(axis=0)}
        return [_crop(dxp, pads)], grads


class Dense(Layer):
    trainable = ("kernel", "bias")

    def init(self, rng, dtype):
        u_in, u_out = self.in_shapes[0][0], self.spec.units
        return {
            "kernel": glorot(rng, (u_in, u_out), u_in, u_out, dtype),
            "bias": np.zeros(u_out, dtype=dtype),
        }

    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        return x @ params["kernel"] + params["bias"], x

    def backward(self, params, cache, dout):
        x = cache
        return [dout @ params["kernel"].T], {"kernel": x.T @ dout, "bias": dout.sum(axis=0)}


class BatchNorm(Layer):
    trainable = ("gamma", "beta")
    state = ("moving_mean", "moving_var")

    def init(self, rng, dtype):
        c = self.in_shapes[0][-1]
        return {
            "gamma": np.ones(c, dtype=dtype),
            "beta": np.zeros(c, dtype=dtype),
            "moving_mean": np.zeros(c, dtype=dtype),
            "moving_var": np.ones(c, dtype=dtype),
        }

    def forward(self, params, inputs, train, rng, update_stats=True):
        (x,) = inputs
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_stats:
                params["moving_mean"] *= BN_MOMENTUM
                params["moving_mean"] += (1 - BN_MOMENTUM) * mean
                params["moving_var"] *= BN_MOMENTUM
                params["moving_var"] += (1 - BN_MOMENTUM) * var
        else:
            mean, var = params["moving_mean"], params["moving_var"]
        inv = 1.0 / np.sqrt(var + BN_EPSILON)
        xhat = (x - mean) * inv
        return params["gamma"] * xhat + params["beta"], (xhat, inv, train, axes)

    def backward(self, params, cache, dout):
        xhat, inv, train, axes = cache
        dgamma = (dout * xhat).sum(axis=axes)
        dbeta = dout.sum(axis=axes)
        dxhat = dout * params["gamma"]
        if train:
            n = math.prod(xhat.shape[:-1])
            dx = inv / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            dx = dxhat * inv
        return [dx], {"gamma": dgamma, "beta": dbeta}


class Dropout(Layer):
    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        rate = self.spec.rate
        if not train or rate == 0.0:
            return x, None
        mask = (rng.random(x.shape, dtype=np.float32) >= rate) * (1.0 / (1.0 - rate))
        return x * mask, mask

    def backward(self, params, cache, dout):
        return [dout if cache is None else dout * cache], {}


class ReLU(Layer):
    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dout):
        return [dout * cache], {}


class ELU(Layer):
    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        neg = ELU_ALPHA * np.expm1(np.minimum(x, 0.0))
        out = np.where(x > 0, x, neg)
        return out, (x > 0, neg)

    def backward(self, params, cache, dout):
        pos, neg = cache
        return [dout * np.where(pos, 1.0, neg + ELU_ALPHA)], {}


class Pool(Layer):
    def __init__(self, spec, in_shapes, out_shape):
        super().__init__(spec, in_shapes, out_shape)
        self.rank = SPATIAL_RANK[spec.kind]
        self.is_max = spec.kind in (Kind.MAXPOOL1D, Kind.MAXPOOL2D)
        self.offsets = list(itertools.product(range(spec.kernel_size), repeat=self.rank))

    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        k, s = self.spec.kernel_size, self.spec.stride
        outs, pads = _pad_spec(x.shape, k, s, self.rank)
        padded = any(p != (0, 0) for p in pads)
        if self.is_max:
            xp = np.pad(x, pads, constant_values=-np.inf) if padded else x
            stack = np.stack([xp[_window(o, outs, s)] for o in self.offsets])
            arg = stack.argmax(axis=0)
            out = np.take_along_axis(stack, arg[None], axis=0)[0]
            return out, (xp.shape, arg, outs, pads)
        xp = np.pad(x, pads) if padded else x
        ones = np.pad(np.ones((1, *x.shape[1:-1], 1), dtype=x.dtype), pads) if padded else None
        total = sum(xp[_window(o, outs, s)] for o in self.offsets)
        if ones is None:
            count = np.array(len(self.offsets), dtype=x.dtype)
        else:
            count = sum(ones[_window(o, outs, s)] for o in self.offsets)
        return total / count, (xp.shape, count, outs, pads)

    def backward(self, params, cache, dout):
        shape, aux, outs, pads = cache
        s = self.spec.stride
        dxp = np.zeros(shape, dtype=dout.dtype)
        if self.is_max:
            for i, o in enumerate(self.offsets):
                dxp[_window(o, outs, s)] += dout * (aux == i)
        else:
            share = dout / aux
            for o in self.offsets:
                dxp[_window(o, outs, s)] += share
        return [_crop(dxp, pads)], {}


class Add(Layer):
    def forward(self, params, inputs, train, rng):
        out = inputs[0]
        for x in inputs[1:]:
            out = out + x
        return out, len(inputs)

    def backward(self, params, cache, dout):
        return [dout] * cache, {}


class Concat(Layer):
    def forward(self, params, inputs, train, rng):
        return np.concatenate(inputs, axis=-1), [x.shape[-1] for x in inputs]

    def backward(self, params, cache, dout):
        splits = np.cumsum(cache)[:-1]
        return list(np.split(dout, splits, axis=-1)), {}


class Flatten(Layer):
    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dout):
        return [dout.reshape(cache)], {}


class GlobalAvgPool(Layer):
    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        axes = tuple(range(1, x.ndim - 1))
        return x.mean(axis=axes), x.shape

    def backward(self, params, cache, dout):
        shape = cache
        n = math.prod(shape[1:-1])
        expand = dout.reshape(shape[0], *([1] * (len(shape) - 2)), shape[-1])
        return [np.broadcast_to(expand / n, shape).copy()], {}


class Softmax(Layer):
    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        y = softmax(x)
        return y, y

    def backward(self, params, cache, dout):
        y = cache
        return [y * (dout - (dout * y).sum(axis=-1, keepdims=True))], {}


class Identity(Layer):
    def forward(self, params, inputs, train, rng):
        return inputs[0], None

    def backward(self, params, cache, dout):
        return [dout], {}


class Shift(Layer):
    """Drops the first spatial position and zero-pads the end (second factorized-reduction path)."""

    def forward(self, params, inputs, train, rng):
        (x,) = inputs
        out = np.zeros_like(x)
        out[:, :-1] = x[:, 1:]
        return out, None

    def backward(self, params, cache, dout):
        dx = np.zeros_like(dout)
        dx[:, 1:] = dout[:, :-1]
        return [dx], {}


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


LAYER_TYPES: dict[Kind, type[Layer]] = {
    Kind.INPUT: InputLayer,
    Kind.CONV1D: Conv,
    Kind.CONV2D: Conv,
    Kind.SEPCONV1D: SeparableConv,
    Kind.DENSE: Dense,
    Kind.BATCHNORM: BatchNorm,
    Kind.DROPOUT: Dropout,
    Kind.RELU: ReLU,
    Kind.ELU: ELU,
    Kind.MAXPOOL1D: Pool,
    Kind.AVGPOOL1D: Pool,
    Kind.MAXPOOL2D: Pool,
    Kind.AVGPOOL2D: Pool,
    Kind.ADD: Add,
    Kind.CONCAT: Concat,
    Kind.FLATTEN: Flatten,
    Kind.GLOBALAVGPOOL: GlobalAvgPool,
    Kind.SOFTMAX: Softmax,
    Kind.IDENTITY: Identity,
    Kind.SHIFT: Shift,
}


def make_layer(spec: LayerSpec, in_shapes, out_shape) -> Layer:
    return LAYER_TYPES[spec.kind](spec, in_shapes, out_shape)
