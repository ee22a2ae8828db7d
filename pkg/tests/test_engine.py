import math

import numpy as np
import pytest

from etcnas.engine import (EVAL, TRAIN, TrainConfig, accuracy, adam_step, forward, init_params, learning_rate,
                           loss_and_grads, to_input, train)
from etcnas.engine.checkpoint import load_checkpoint, save_checkpoint
from etcnas.engine.layers import BN_EPSILON, make_layer
from etcnas.engine.optim import Adam
from etcnas.engine.policy import RecurrentPolicyCell, recurrent_policy_forward
from etcnas.errors import EmptyDataset, LabelOutOfRange, MagicMismatch, ShapeMismatch
from etcnas.graph import GraphBuilder, Kind, LayerSpec
from etcnas.orchestrator import make_separable_dataset
from etcnas.space import SpaceConfig, decode, sample_random

TINY = SpaceConfig(nodes_per_cell=2, initial_filters=4, input_length=16, num_classes=3, cell_dropout_rate=0.0)


def child(seed=0, space=TINY):
    return init_params(decode(sample_random(space, seed), space), rng_seed=seed)


def dense_model(n_in=10, n_out=5, dropout=0.0):
    b = GraphBuilder()
    x = b.layer(Kind.INPUT, length=n_in, channels=1)
    x = b.layer(Kind.FLATTEN, x)
    x = b.layer(Kind.DROPOUT, x, rate=dropout)
    x = b.layer(Kind.DENSE, x, name="dense", units=n_out)
    b.layer(Kind.SOFTMAX, x)
    return init_params(b.build(n_out), rng_seed=3)


def batch(n=6, length=16, seed=0):
    return np.random.default_rng(seed).random((n, length, 1))


class TestInit:
    def test_same_seed_identical(self):
        a, b = child(1), child(1)
        for key, arr in a.all_arrays().items():
            assert np.array_equal(arr, b.all_arrays()[key])

    def test_glorot_bound(self):
        m = dense_model()
        w = m.params["dense"]["kernel"]
        bound = math.sqrt(6 / 15)
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.5 * bound
        assert not m.params["dense"]["bias"].any()


class TestForward:
    def test_softmax_rows_sum_to_one(self):
        p = forward(child(2), batch(), EVAL)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9, rtol=0)

    def test_eval_deterministic(self):
        m, x = child(3), batch()
        assert np.array_equal(forward(m, x, EVAL), forward(m, x, EVAL))

    def test_zero_dropout_train_equals_eval(self):
        b = GraphBuilder()
        x = b.layer(Kind.INPUT, length=16, channels=1)
        x = b.layer(Kind.CONV1D, x, kernel_size=3, filters=4)
        x = b.layer(Kind.DROPOUT, x, rate=0.0)
        x = b.layer(Kind.SEPCONV1D, x, kernel_size=3, filters=4)
        x = b.layer(Kind.GLOBALAVGPOOL, x)
        b.layer(Kind.SOFTMAX, b.layer(Kind.DENSE, x, units=3))
        m = init_params(b.build(3))
        x = batch()
        assert np.array_equal(forward(m, x, TRAIN, np.random.default_rng(0)), forward(m, x, EVAL))

    def test_frozen_batchnorm_train_equals_eval(self):
        # with moving statistics set to the batch statistics, train and eval coincide
        spec = LayerSpec(Kind.BATCHNORM)
        layer = make_layer(spec, [(8, 3)], (8, 3))
        params = layer.init(np.random.default_rng(0), np.float64)
        x = np.random.default_rng(1).normal(size=(5, 8, 3))
        params["moving_mean"][:] = x.mean(axis=(0, 1))
        params["moving_var"][:] = x.var(axis=(0, 1))
        frozen = {k: v.copy() for k, v in params.items()}
        y_eval, _ = layer.forward(frozen, [x], False, None)
        y_train, _ = layer.forward(params, [x], True, None)
        assert np.allclose(y_train, y_eval, atol=1e-12)

    def test_wrong_input_shape(self):
        with pytest.raises(ShapeMismatch):
            forward(child(), batch(length=17))


class TestLoss:
    def test_uniform_prediction_is_ln_c(self):
        m = dense_model(n_out=5)
        m.params["dense"]["kernel"][:] = 0.0
        loss, _ = loss_and_grads(m, batch(length=10), [0, 1, 2, 3, 4, 0], EVAL)
        assert loss == pytest.approx(math.log(5), abs=1e-12)

    def test_perfect_fit_has_zero_gradient(self):
        m = dense_model(n_out=2)
        m.params["dense"]["kernel"][:] = 0.0
        m.params["dense"]["bias"][:] = [60.0, -60.0]
        loss, grads = loss_and_grads(m, batch(length=10), [0] * 6, EVAL)
        assert loss < 1e-40
        assert max(np.abs(g).max() for g in grads.values()) < 1e-40

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            loss_and_grads(child(), batch(n=2), [0, 3])


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        opt = Adam()
        p = {"w": np.array([0.5])}
        opt.update(p, {"w": np.array([1.0])}, 0.01)
        assert p["w"][0] == pytest.approx(0.49, abs=1e-9)

    def test_zero_grad_leaves_params(self):
        m = child(4)
        before = {k: v.copy() for k, v in m.trainable().items()}
        adam_step(m, {k: np.zeros_like(v) for k, v in before.items()}, 0.1)
        assert m.optimizer.step == 1
        for k, v in m.trainable().items():
            assert np.array_equal(v, before[k])

    def test_identical_models_identical_updates(self):
        a, b = child(5), child(5)
        x, y = batch(), [0, 1, 2, 0, 1, 2]
        _, grads = loss_and_grads(a, x, y, EVAL)
        adam_step(a, grads, 0.01)
        adam_step(b, {k: g.copy() for k, g in grads.items()}, 0.01)
        for k, v in a.all_arrays().items():
            assert np.array_equal(v, b.all_arrays()[k])


class TestTraining:
    def test_lr_trace(self):
        cfg = TrainConfig(initial_lr=0.001, lr_halving_period=10, epochs=25)
        trace = [learning_rate(cfg, e) for e in range(25)]
        assert trace[:10] == [0.001] * 10
        assert trace[10:20] == [0.0005] * 10
        assert trace[20:] == [0.00025] * 5

    def test_history_follows_schedule(self):
        data = make_separable_dataset(n=40, length=16, num_classes=3, seed=0)
        cfg = TrainConfig(lr_halving_period=2, batch_size=16, epochs=5)
        _, hist = train(child(), to_input(data.features), data.labels, cfg)
        assert [h.lr for h in hist] == [0.001, 0.001, 0.0005, 0.0005, 0.00025]

    def test_seeded_run_repeats(self):
        data = make_separable_dataset(n=60, length=16, num_classes=3, seed=1)
        x = to_input(data.features)
        cfg = TrainConfig(batch_size=16, epochs=3, rng_seed=7)
        space = SpaceConfig(nodes_per_cell=2, initial_filters=4, input_length=16, num_classes=3)
        _, h1 = train(child(6, space), x, data.labels, cfg, x, data.labels)
        _, h2 = train(child(6, space), x, data.labels, cfg, x, data.labels)
        assert h1 == h2

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            train(child(), np.zeros((0, 16, 1)), np.zeros(0), TrainConfig())

    def test_small_child_fits_separable_data(self):
        # small batches: eval-mode BatchNorm needs a few hundred moving-average updates
        space = SpaceConfig(nodes_per_cell=2, initial_filters=4, input_length=16, num_classes=2)
        data = make_separable_dataset(n=300, length=16, num_classes=2, seed=2)
        x = to_input(data.features)
        model, _ = train(child(8, space), x, data.labels, TrainConfig(batch_size=8, epochs=10))
        assert accuracy(model, x, data.labels) >= 0.99


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = child(9)
        data = make_separable_dataset(n=32, length=16, num_classes=3)
        train(m, to_input(data.features), data.labels, TrainConfig(batch_size=16, epochs=1))
        save_checkpoint(m, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.graph == m.graph
        assert back.epoch == 1 and back.optimizer.step == m.optimizer.step
        for k, v in m.all_arrays().items():
            assert np.array_equal(v, back.all_arrays()[k])
        x = batch()
        assert np.array_equal(forward(m, x), forward(back, x))

    def test_resume_equals_straight_run(self, tmp_path):
        data = make_separable_dataset(n=48, length=16, num_classes=3, seed=4)
        x, y = to_input(data.features), data.labels
        cfg = TrainConfig(batch_size=16, lr_halving_period=1, rng_seed=3)
        straight, _ = train(child(10), x, y, cfg, epochs=4)
        half, _ = train(child(10), x, y, cfg, epochs=2)
        save_checkpoint(half, tmp_path / "half.ckpt")
        resumed, _ = train(load_checkpoint(tmp_path / "half.ckpt"), x, y, cfg, epochs=2)
        for k, v in straight.all_arrays().items():
            assert np.array_equal(v, resumed.all_arrays()[k])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + bytes(32))
        with pytest.raises(MagicMismatch):
            load_checkpoint(path)

    def test_float32_round_trip(self, tmp_path):
        m = init_params(decode(sample_random(TINY, 0), TINY), dtype=np.float32)
        save_checkpoint(m, tmp_path / "f32.ckpt")
        assert load_checkpoint(tmp_path / "f32.ckpt").dtype == np.float32


class TestStatistics:
    def test_dropout_expectation(self):
        layer = make_layer(LayerSpec(Kind.DROPOUT, rate=0.3), [(6,)], (6,))
        x = np.linspace(0.5, 2.0, 6)[None, :]
        rng = np.random.default_rng(0)
        n = 10_000
        samples = np.concatenate([layer.forward({}, [x], True, rng)[0] for _ in range(n)])
        se = samples.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(samples.mean(axis=0) - x[0]) <= 3 * se)

    def test_batchnorm_train_statistics(self):
        layer = make_layer(LayerSpec(Kind.BATCHNORM), [(16, 4)], (16, 4))
        params = layer.init(np.random.default_rng(0), np.float64)
        params["gamma"][:] = [0.5, 1.0, 2.0, 3.0]
        params["beta"][:] = [-1.0, 0.0, 1.0, 2.0]
        x = np.random.default_rng(2).normal(3.0, 2.0, size=(32, 16, 4))
        y, _ = layer.forward(params, [x], True, None)
        var_in = x.var(axis=(0, 1))
        assert np.allclose(y.mean(axis=(0, 1)), params["beta"], atol=1e-6)
        # remove the epsilon shrinkage to compare against gamma squared
        var_out = y.var(axis=(0, 1)) * (var_in + BN_EPSILON) / var_in
        assert np.allclose(var_out, params["gamma"] ** 2, atol=1e-6)


class TestPolicy:
    def test_zero_state_logits_equal_head_bias(self):
        cell = RecurrentPolicyCell.create([3, 5], rng_seed=0, hidden=8)
        cell.params["head_b_1"][:] = [0.1, -0.2, 0.3, 0.0, 0.5]
        logits, _ = recurrent_policy_forward(cell, 1, np.zeros(8), cell.zero_state())
        assert np.array_equal(logits, cell.params["head_b_1"])

    def test_hidden_state_stays_finite(self):
        cell = RecurrentPolicyCell.create([5] * 32, rng_seed=1)
        state = cell.zero_state()
        prev = None
        for t in range(32):
            logits, state = recurrent_policy_forward(cell, t, cell.input_for(t, prev), state)
            prev = int(np.argmax(logits))
        assert np.all(np.isfinite(state[0])) and np.all(np.abs(state[0]) < 1)
