"""LSTM policy over a positional decision sequence, with exact backprop-through-time."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import log_softmax, softmax

HIDDEN = 100
INIT_RANGE = 0.1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class RecurrentPolicyCell:
    """Single-layer LSTM; step ``t`` reads the embedding of the choice made at ``t - 1``.

    Parameters live in ``params``: ``lstm_w`` (2H, 4H), ``lstm_b`` (4H,), per-position
    choice embeddings ``emb_t`` (arity_t, H) and output heads ``head_w_t`` (H, arity_t),
    ``head_b_t`` (arity_t,).
    """

    arities: list[int]
    hidden: int = HIDDEN
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, arities, rng_seed=0, hidden: int = HIDDEN) -> "RecurrentPolicyCell":
        rng = np.random.default_rng(rng_seed)
        h = hidden
        params = {
            "lstm_w": rng.uniform(-INIT_RANGE, INIT_RANGE, (2 * h, 4 * h)),
            "lstm_b": np.zeros(4 * h),
        }
        for t, a in enumerate(arities):
            params[f"emb_{t}"] = rng.uniform(-INIT_RANGE, INIT_RANGE, (a, h))
            params[f"head_w_{t}"] = rng.uniform(-INIT_RANGE, INIT_RANGE, (h, a))
            params[f"head_b_{t}"] = np.zeros(a)
        return cls(list(arities), hidden, params)

    def zero_state(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.hidden), np.zeros(self.hidden)

    def input_for(self, position: int, prev_choice: int | None) -> np.ndarray:
        if position == 0 or prev_choice is None:
            return np.zeros(self.hidden)
        return self.params[f"emb_{position - 1}"][prev_choice]


def _lstm_step(params, x, h, c):
    hdim = h.shape[0]
    z = np.concatenate([x, h]) @ params["lstm_w"] + params["lstm_b"]
    i = _sigmoid(z[:hdim])
    f = _sigmoid(z[hdim:2 * hdim])
    o = _sigmoid(z[2 * hdim:3 * hdim])
    g = np.tanh(z[3 * hdim:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, o, g, tc)


def recurrent_policy_forward(cell: RecurrentPolicyCell, position: int, prev_choice_embedding, hidden_state):
    """One recurrence step; returns logits over the position's arity and the new (h, c)."""
    h, c = hidden_state
    h_new, c_new, _ = _lstm_step(cell.params, np.asarray(prev_choice_embedding, dtype=float), h, c)
    logits = h_new @ cell.params[f"head_w_{position}"] + cell.params[f"head_b_{position}"]
    return logits, (h_new, c_new)


def sample(cell: RecurrentPolicyCell, rng: np.random.Generator) -> tuple[list[int], float]:
    """Autoregressive sample; returns the choices and their total log-probability."""
    state = cell.zero_state()
    choices: list[int] = []
    logp = 0.0
    prev = None
    for t in range(len(cell.arities)):
        logits, state = recurrent_policy_forward(cell, t, cell.input_for(t, prev), state)
        p = softmax(logits)
        a = int(rng.choice(len(p), p=p))
        logp += float(np.log(p[a]))
        choices.append(a)
        prev = a
    return choices, logp


def log_prob(cell: RecurrentPolicyCell, seq) -> float:
    return log_prob_and_grads(cell, seq, with_grads=False)[0]


def log_prob_and_grads(cell: RecurrentPolicyCell, seq, with_grads: bool = True):
    """log p(seq) under the policy and its gradient w.r.t. every parameter."""
    params = cell.params
    h, c = cell.zero_state()
    steps = []
    total = 0.0
    for t, a in enumerate(seq):
        x = cell.input_for(t, seq[t - 1] if t else None)
        h, c, cache = _lstm_step(params, x, h, c)
        logits = h @ params[f"head_w_{t}"] + params[f"head_b_{t}"]
        lp = log_softmax(logits)
        total += float(lp[a])
        steps.append((cache, h, lp))
    if not with_grads:
        return total, None
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    hdim = cell.hidden
    dh_next = np.zeros(hdim)
    dc_next = np.zeros(hdim)
    for t in reversed(range(len(seq))):
        (x, h_prev, c_prev, i, f, o, g, tc), h_t, lp = steps[t]
        a = seq[t]
        dlogits = -np.exp(lp)
        dlogits[a] += 1.0
        grads[f"head_w_{t}"] += np.outer(h_t, dlogits)
        grads[f"head_b_{t}"] += dlogits
        dh = params[f"head_w_{t}"] @ dlogits + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc**2) + dc_next
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)])
        grads["lstm_w"] += np.outer(np.concatenate([x, h_prev]), dz)
        grads["lstm_b"] += dz
        dxh = params["lstm_w"] @ dz
        dx, dh_next = dxh[:hdim], dxh[hdim:]
        dc_next = dc * f
        if t > 0:
            grads[f"emb_{t - 1}"][seq[t - 1]] += dx
    return total, grads
