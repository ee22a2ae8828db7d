"""Adam with bias correction over named parameter arrays."""

from __future__ import annotations

import math

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class Adam:
    def __init__(self, beta1: float = BETA1, beta2: float = BETA2, eps: float = EPSILON):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: dict = {}
        self.v: dict = {}

    def update(self, params: dict, grads: dict, lr: float) -> None:
        """In-place update of ``params[key]`` for every key in ``grads``."""
        self.step += 1
        t = self.step
        corr1 = 1.0 - self.beta1**t
        corr2 = 1.0 - self.beta2**t
        for key, g in grads.items():
            p = params[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m, v = self.m[key], self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm
