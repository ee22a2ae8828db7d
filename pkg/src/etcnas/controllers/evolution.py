"""Aging evolution: tournament selection, single-position mutation, oldest-first eviction."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..space import SpaceConfig, arities, sample_random
from .base import Strategy, TrialRecord

POPULATION = 20
TOURNAMENT = 5


def mutate(parent, arity: list[int], rng: np.random.Generator) -> list[int]:
    """Copy of ``parent`` with exactly one position changed to a different legal value."""
    free = [p for p, a in enumerate(arity) if a > 1]
    child = list(parent)
    pos = free[int(rng.integers(len(free)))]
    # draw from the arity - 1 values other than the current one
    value = int(rng.integers(arity[pos] - 1))
    child[pos] = value + (value >= child[pos])
    return child


class EvolutionController(Strategy):
    name = "ea"
    asynchronous = True

    def __init__(self, space: SpaceConfig, seed: int | None = 0,
                 population_size: int = POPULATION, tournament_size: int = TOURNAMENT):
        self.space = space
        self.arity = arities(space)
        self.rng = np.random.default_rng(seed)
        self.population_size = population_size
        self.tournament_size = tournament_size
        self.population: deque[tuple[tuple[int, ...], float]] = deque(maxlen=population_size)
        self.last_parent: tuple[int, ...] | None = None

    def propose(self) -> list[int]:
        if len(self.population) < self.population_size:
            self.last_parent = None
            return sample_random(self.space, self.rng)
        picks = self.rng.choice(len(self.population), size=self.tournament_size, replace=False)
        # ties go to the older individual
        best = min(picks, key=lambda i: (-self.population[i][1], i))
        self.last_parent = self.population[best][0]
        return mutate(self.last_parent, self.arity, self.rng)

    def observe(self, record: TrialRecord) -> None:
        self.population.append((tuple(record.sequence), record.reward))

    def max_reward(self) -> float:
        return max(r for _, r in self.population)
