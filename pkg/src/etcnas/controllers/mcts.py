"""Monte Carlo tree search over decision prefixes with surrogate-ranked rollouts."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import OutOfOrderObservation
from ..space import SpaceConfig, arities
from .base import Strategy, TrialRecord
from .surrogate import SurrogateModel, surrogate_fit

EXPANSION_CAP = 10
ROLLOUT_SAMPLES = 10
REFIT_EVERY = 10
EXPLORATION = math.sqrt(2.0)


@dataclass
class TreeNode:
    prefix: tuple[int, ...]
    children: dict[int, "TreeNode"] = field(default_factory=dict)
    visits: int = 0
    total: float = 0.0

    @property
    def mean(self) -> float:
        return self.total / self.visits if self.visits else 0.0


class MctsController(Strategy):
    name = "mcts"

    def __init__(self, space: SpaceConfig, seed: int | None = 0, c: float = EXPLORATION,
                 expansion_cap: int = EXPANSION_CAP, rollout_samples: int = ROLLOUT_SAMPLES,
                 refit_every: int = REFIT_EVERY):
        self.space = space
        self.arity = arities(space)
        self.rng = np.random.default_rng(seed)
        self.c = c
        self.expansion_cap = expansion_cap
        self.rollout_samples = rollout_samples
        self.refit_every = refit_every
        self.root = TreeNode(())
        self.surrogate: SurrogateModel | None = None
        self.history: list[tuple[tuple[int, ...], float]] = []
        self._pending: deque[tuple[tuple[int, ...], list[TreeNode]]] = deque()

    def _cap(self, depth: int) -> int:
        return min(self.arity[depth], self.expansion_cap)

    def _uct(self, parent: TreeNode, child: TreeNode) -> float:
        if child.visits == 0:
            return math.inf
        return child.mean + self.c * math.sqrt(math.log(max(parent.visits, 1)) / child.visits)

    def _select(self) -> list[TreeNode]:
        path = [self.root]
        node = self.root
        while len(node.prefix) < len(self.arity):
            depth = len(node.prefix)
            if len(node.children) < self._cap(depth):
                untried = [a for a in range(self.arity[depth]) if a not in node.children]
                action = untried[int(self.rng.integers(len(untried)))]
                child = TreeNode(node.prefix + (action,))
                node.children[action] = child
                path.append(child)
                return path
            node = max(node.children.values(), key=lambda ch: self._uct(node, ch))
            path.append(node)
        return path

    def _rollout(self, prefix: tuple[int, ...]) -> list[int]:
        rest = self.arity[len(prefix):]
        if not rest:
            return list(prefix)
        candidates = [list(prefix) + [int(self.rng.integers(a)) for a in rest]
                      for _ in range(self.rollout_samples)]
        if self.surrogate is None:
            return candidates[0]
        scores = self.surrogate.predict(np.asarray(candidates, dtype=np.float64))
        return candidates[int(np.argmax(scores))]

    def propose(self) -> list[int]:
        path = self._select()
        seq = self._rollout(path[-1].prefix)
        self._pending.append((tuple(seq), path))
        return seq

    def observe(self, record: TrialRecord) -> None:
        if not self._pending or self._pending[0][0] != tuple(record.sequence):
            raise OutOfOrderObservation("MCTS observations must arrive in proposal order")
        seq, path = self._pending.popleft()
        for node in path:
            node.visits += 1
            node.total += record.reward
        self.history.append((seq, record.reward))
        if len(self.history) % self.refit_every == 0 and len(self.history) >= 2:
            self.surrogate = surrogate_fit(self.history)

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())
