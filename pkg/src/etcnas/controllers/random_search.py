"""Uniform random sampling over the decision sequence."""

from __future__ import annotations

import numpy as np

from ..space import SpaceConfig, sample_random
from .base import Strategy, TrialRecord


class RandomSearch(Strategy):
    name = "rs"
    asynchronous = True

    def __init__(self, space: SpaceConfig, seed: int | None = 0):
        self.space = space
        self.rng = np.random.default_rng(seed)

    def propose(self) -> list[int]:
        return sample_random(self.space, self.rng)

    def observe(self, record: TrialRecord) -> None:
        pass
