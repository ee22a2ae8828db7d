"""REINFORCE with a moving-average baseline over an LSTM policy."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..engine.optim import Adam, clip_by_global_norm
from ..engine.policy import HIDDEN, RecurrentPolicyCell, log_prob_and_grads, sample
from ..errors import OutOfOrderObservation
from ..space import SpaceConfig, arities
from .base import Strategy, TrialRecord

BASELINE_DECAY = 0.999
GRAD_CLIP = 5.0
LEARNING_RATE = 1e-3


class ReinforceController(Strategy):
    """One policy-gradient step per observed trial (batch size 1, no entropy bonus)."""

    name = "rl"

    def __init__(
        self,
        space: SpaceConfig,
        seed: int | None = 0,
        hidden: int = HIDDEN,
        lr: float = LEARNING_RATE,
        baseline_decay: float = BASELINE_DECAY,
        grad_clip: float = GRAD_CLIP,
    ):
        seed = 0 if seed is None else seed
        self.space = space
        self.cell = RecurrentPolicyCell.create(arities(space), rng_seed=[seed, 0], hidden=hidden)
        self.rng = np.random.default_rng([seed, 1])
        self.optimizer = Adam()
        self.lr = lr
        self.baseline_decay = baseline_decay
        self.grad_clip = grad_clip
        self.baseline = 0.0
        self.last_grad_norm = 0.0
        self._pending: deque[tuple[int, ...]] = deque()

    def propose(self) -> list[int]:
        choices, _ = sample(self.cell, self.rng)
        self._pending.append(tuple(choices))
        return choices

    def observe(self, record: TrialRecord) -> None:
        if not self._pending or self._pending[0] != tuple(record.sequence):
            raise OutOfOrderObservation("RL observations must arrive in proposal order")
        self._pending.popleft()
        self.update(record.sequence, record.reward)

    def update(self, sequence, reward: float) -> None:
        self.baseline = self.baseline_decay * self.baseline + (1.0 - self.baseline_decay) * reward
        advantage = reward - self.baseline
        _, grads = log_prob_and_grads(self.cell, list(sequence))
        # descend on -advantage * log p
        loss_grads = {k: -advantage * g for k, g in grads.items()}
        loss_grads, self.last_grad_norm = clip_by_global_norm(loss_grads, self.grad_clip)
        self.optimizer.update(self.cell.params, loss_grads, self.lr)
