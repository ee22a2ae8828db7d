"""Search strategies behind one propose/observe interface."""

from ..errors import SearchError
from ..space import SpaceConfig
from .base import (TOP_N_GRID, SearchReport, Strategy, TrialRecord, run_search, top_n,
                   top_n_summary)
from .evolution import EvolutionController
from .mcts import MctsController
from .random_search import RandomSearch
from .rl import ReinforceController
from .surrogate import SurrogateModel, surrogate_fit, surrogate_predict

STRATEGIES = {
    "rs": RandomSearch,
    "rl": ReinforceController,
    "ea": EvolutionController,
    "mcts": MctsController,
}


def make_strategy(name: str, space: SpaceConfig, seed: int | None = 0) -> Strategy:
    try:
        cls = STRATEGIES[name.lower()]
    except KeyError:
        raise SearchError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}") from None
    return cls(space, seed=seed)


__all__ = [
    "EvolutionController", "MctsController", "RandomSearch", "ReinforceController",
    "STRATEGIES", "SearchReport", "Strategy", "SurrogateModel", "TOP_N_GRID", "TrialRecord",
    "make_strategy", "run_search", "surrogate_fit", "surrogate_predict", "top_n", "top_n_summary",
]
