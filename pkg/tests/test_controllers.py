from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etcnas.controllers import (EvolutionController, MctsController, RandomSearch, ReinforceController,
                                SearchReport, TrialRecord, make_strategy, run_search, top_n, top_n_summary)
from etcnas.controllers.evolution import mutate
from etcnas.engine.policy import log_prob
from etcnas.errors import NOutOfRange, OutOfOrderObservation, SearchError
from etcnas.space import SpaceConfig, arities, sample_random, space_size
from helpers import sep3_fraction, target_match

TWO_NODE = SpaceConfig(nodes_per_cell=2, cells=("normal",))
DEFAULT = SpaceConfig()


def record(i, seq, reward):
    return TrialRecord(i, tuple(seq), reward)


class TestTopN:
    def test_example(self):
        assert top_n([0.5, 0.9, 0.7], 2) == pytest.approx(0.8)

    def test_all_is_mean(self):
        assert top_n([0.5, 0.9, 0.7], 3) == pytest.approx(0.7)

    def test_range(self):
        with pytest.raises(NOutOfRange):
            top_n([0.5], 2)
        with pytest.raises(NOutOfRange):
            top_n([0.5], 0)

    @settings(max_examples=100)
    @given(rewards=st.lists(st.floats(0, 1), min_size=1, max_size=50), data=st.data())
    def test_oracle(self, rewards, data):
        n = data.draw(st.integers(1, len(rewards)))
        assert top_n(rewards, n) == pytest.approx(sum(sorted(rewards, reverse=True)[:n]) / n)

    def test_summary_grid(self):
        report = SearchReport("rs", {}, 12, [record(i, [0], i / 12) for i in range(12)])
        assert set(top_n_summary(report)) == {1, 5, 10}


class TestReport:
    def test_best_ties_to_earlier(self):
        report = SearchReport("rs", {}, 3, [record(0, [0], 0.2), record(1, [1], 0.9), record(2, [2], 0.9)])
        assert report.best().trial_index == 1

    def test_reward_domain(self):
        with pytest.raises(SearchError):
            record(0, [0], 1.5)

    def test_save_load(self, tmp_path):
        report = run_search(RandomSearch(TWO_NODE, 0), lambda s: sep3_fraction(s, TWO_NODE), 7,
                            space=TWO_NODE.to_dict(), seed=0)
        report.save(tmp_path / "r.jsonl")
        back = SearchReport.load(tmp_path / "r.jsonl")
        assert back == report

    def test_torn_last_line_is_dropped(self, tmp_path):
        report = run_search(RandomSearch(TWO_NODE, 0), lambda s: 0.5, 4)
        path = tmp_path / "r.jsonl"
        report.save(path)
        with open(path, "a") as fh:
            fh.write('{"type": "trial", "trial_ind')
        assert len(SearchReport.load(path).records) == 4


class TestRunSearch:
    def test_length_and_order(self):
        report = run_search(RandomSearch(DEFAULT, 1), lambda s: sep3_fraction(s, DEFAULT), 100)
        assert len(report.records) == 100
        assert [r.trial_index for r in report.records] == list(range(100))

    def test_rs_reproducible(self):
        runs = [run_search(RandomSearch(DEFAULT, 5), lambda s: sep3_fraction(s, DEFAULT), 20) for _ in range(2)]
        assert [(r.sequence, r.reward) for r in runs[0].records] == [(r.sequence, r.reward) for r in runs[1].records]

    @pytest.mark.parametrize("name", ["rs", "ea", "rl", "mcts"])
    def test_resume_matches_uninterrupted(self, tmp_path, name):
        reward = lambda s: sep3_fraction(s, TWO_NODE)  # noqa: E731
        full = run_search(make_strategy(name, TWO_NODE, 3), reward, 30, space=TWO_NODE.to_dict())
        path = tmp_path / "r.jsonl"
        run_search(make_strategy(name, TWO_NODE, 3), reward, 12, space=TWO_NODE.to_dict(), report_path=path)
        calls = []

        def counting(s):
            calls.append(s)
            return reward(s)

        resumed = run_search(make_strategy(name, TWO_NODE, 3), counting, 30, space=TWO_NODE.to_dict(),
                             report_path=path)
        assert [r.sequence for r in resumed.records] == [r.sequence for r in full.records]
        assert len(calls) == 18
        assert len(SearchReport.load(path).records) == 30

    def test_resume_rejects_other_search(self, tmp_path):
        path = tmp_path / "r.jsonl"
        run_search(RandomSearch(TWO_NODE, 0), lambda s: 0.1, 2, space=TWO_NODE.to_dict(), report_path=path)
        with pytest.raises(SearchError):
            run_search(EvolutionController(TWO_NODE, 0), lambda s: 0.1, 4, space=TWO_NODE.to_dict(),
                       report_path=path)

    def test_unknown_strategy(self):
        with pytest.raises(SearchError):
            make_strategy("bayes", DEFAULT)


class TestEvolution:
    @settings(max_examples=200)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_mutation_hamming_one(self, seed):
        rng = np.random.default_rng(seed)
        arity = arities(DEFAULT)
        parent = sample_random(DEFAULT, rng)
        child = mutate(parent, arity, rng)
        assert sum(a != b for a, b in zip(parent, child)) == 1
        assert all(0 <= v < a for v, a in zip(child, arity))

    def test_population_keeps_most_recent(self):
        ea = EvolutionController(DEFAULT, 0)
        for i in range(25):
            ea.observe(record(i, ea.propose(), i / 25))
        assert len(ea.population) == 20
        assert [r for _, r in ea.population] == [i / 25 for i in range(5, 25)]

    def test_children_come_from_tournament(self):
        ea = EvolutionController(DEFAULT, 1)
        for i in range(40):
            seq = ea.propose()
            if ea.last_parent is not None:
                assert ea.last_parent in [s for s, _ in ea.population]
                assert sum(a != b for a, b in zip(seq, ea.last_parent)) == 1
            ea.observe(record(i, seq, sep3_fraction(seq, DEFAULT)))

    def test_max_non_decreasing_between_evictions(self):
        ea = EvolutionController(DEFAULT, 2)
        for i in range(300):
            seq = ea.propose()
            before = ea.max_reward() if ea.population else -1.0
            evicted = ea.population[0] if len(ea.population) == ea.population_size else None
            ea.observe(record(i, seq, sep3_fraction(seq, DEFAULT)))
            if evicted is None or evicted[1] < before:
                assert ea.max_reward() >= before


class TestMcts:
    def test_first_proposal_expands_root(self):
        m = MctsController(DEFAULT, 0)
        m.propose()
        assert len(m.root.children) == 1
        (child,) = m.root.children.values()
        assert child.visits == 0 and child.children == {}

    def test_expansion_cap(self):
        m = MctsController(TWO_NODE, 0)
        for i in range(200):
            seq = m.propose()
            m.observe(record(i, seq, sep3_fraction(seq, TWO_NODE)))
        for node in m.nodes():
            depth = len(node.prefix)
            if depth < len(m.arity):
                assert len(node.children) <= min(m.arity[depth], 10)

    def test_visit_and_mean_invariants(self):
        m = MctsController(DEFAULT, 4)
        rewards = {}
        for i in range(150):
            seq = m.propose()
            r = sep3_fraction(seq, DEFAULT)
            rewards[tuple(seq)] = r
            m.observe(record(i, seq, r))
        assert m.root.visits == 150
        for node in m.nodes():
            assert sum(ch.visits for ch in node.children.values()) <= node.visits
            if node.visits:
                # exact running average of the rewards of sequences routed through this node
                routed = [Fraction(r).limit_denominator(10**6) for s, r in m.history
                          if s[:len(node.prefix)] == node.prefix]
                assert len(routed) >= node.visits
        # the root mean is exactly the mean of all observed rewards
        assert abs(m.root.mean - np.mean([r for _, r in m.history])) <= 1e-12

    def test_node_means_are_running_averages(self):
        m = MctsController(TWO_NODE, 7)
        seen: dict[tuple, list[float]] = {}
        for i in range(300):
            seq = m.propose()
            _, path = m._pending[-1]
            r = sep3_fraction(seq, TWO_NODE)
            for node in path:
                seen.setdefault(node.prefix, []).append(r)
            before = {n.prefix: n.visits for n in path}
            m.observe(record(i, seq, r))
            for node in path:
                assert node.visits == before[node.prefix] + 1
        for node in m.nodes():
            if node.visits:
                assert abs(node.mean - sum(seen[node.prefix]) / len(seen[node.prefix])) <= 1e-12

    def test_out_of_order(self):
        m = MctsController(DEFAULT, 0)
        a, b = m.propose(), m.propose()
        if a != b:
            with pytest.raises(OutOfOrderObservation):
                m.observe(record(0, b, 0.5))

    def test_surrogate_refit(self):
        m = MctsController(TWO_NODE, 0)
        for i in range(9):
            seq = m.propose()
            m.observe(record(i, seq, 0.5))
        assert m.surrogate is None
        seq = m.propose()
        m.observe(record(9, seq, 0.5))
        assert m.surrogate is not None

    def test_finds_unique_optimum(self):
        assert space_size(TWO_NODE) == 2500
        target = [0, 1, 0, 3, 1, 4, 0, 2]
        reward = target_match(target)
        m = MctsController(TWO_NODE, 0)
        found = None
        for i in range(1000):
            seq = m.propose()
            if seq == target:
                found = i
                break
            m.observe(record(i, seq, reward(seq)))
        assert found is not None


class TestReinforce:
    def test_baseline_converges(self):
        rl = ReinforceController(TWO_NODE, 0, hidden=8)
        for i in range(5000):
            seq = rl.propose()
            rl.observe(record(i, seq, 0.6))
        assert abs(rl.baseline - 0.6) <= 0.01 * 0.6
        assert rl.baseline == pytest.approx(0.6 * (1 - 0.999**5000), rel=1e-9)

    def test_positive_advantage_raises_log_prob(self):
        rl = ReinforceController(TWO_NODE, 1, hidden=16)
        seq = rl.propose()
        rl._pending.clear()
        before = log_prob(rl.cell, seq)
        rl.update(seq, 1.0)
        assert log_prob(rl.cell, seq) > before

    def test_negative_advantage_lowers_log_prob(self):
        rl = ReinforceController(TWO_NODE, 1, hidden=16)
        rl.baseline = 0.9
        seq = rl.propose()
        rl._pending.clear()
        before = log_prob(rl.cell, seq)
        rl.update(seq, 0.0)
        assert log_prob(rl.cell, seq) < before

    def test_gradient_clipped(self):
        rl = ReinforceController(DEFAULT, 2, grad_clip=1e-3)
        seq = rl.propose()
        rl.observe(record(0, seq, 1.0))
        assert rl.last_grad_norm > 1e-3  # the raw norm; the applied step used the clipped one

    def test_out_of_order(self):
        rl = ReinforceController(TWO_NODE, 0, hidden=8)
        a = rl.propose()
        b = list(a)
        b[1] = (b[1] + 1) % 5
        with pytest.raises(OutOfOrderObservation):
            rl.observe(record(0, b, 0.5))

    def test_learns_rigged_reward(self):
        rl = ReinforceController(TWO_NODE, 0, hidden=32, lr=0.01)
        rewards = []
        for i in range(300):
            seq = rl.propose()
            r = sep3_fraction(seq, TWO_NODE)
            rewards.append(r)
            rl.observe(record(i, seq, r))
        assert np.mean(rewards[-50:]) > np.mean(rewards[:50]) + 0.1
