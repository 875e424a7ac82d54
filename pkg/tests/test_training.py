import numpy as np
import pytest

from deeppipe import gp
from deeppipe import metadata as md
from deeppipe import search_space as ss
from deeppipe import training as tr
from deeppipe.embed import ArchitectureSpec, build_network, set_trainable
from deeppipe.errors import ValidationError


def make_tasks(toy_space, n_tasks=8, n_pipelines=40, seed=0):
    spec = md.SyntheticSpec(toy_space, n_tasks=n_tasks, n_pipelines=n_pipelines, noise=0.02)
    meta = md.generate_synthetic(spec, seed=seed)
    meta = md.split_assign(meta, 0.5, 0.25, seed=seed)
    active = np.stack([ss.infer_mask(toy_space, r).active for r in meta.features])
    stats = ss.preprocess_fit(meta.features, toy_space.slot_names, toy_space, active)
    return (
        md.task_arrays(meta, "train", stats, toy_space),
        md.task_arrays(meta, "val", stats, toy_space),
    )


def tiny_net(toy_space, seed=0):
    return build_network(
        toy_space, ArchitectureSpec(2, 1, 3, embedding_dim=6), seed=seed
    )


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        values = np.array([1.0, -2.0, 3.0])
        state = tr.AdamState.for_size(3)
        out = tr.adam_step(values, np.zeros(3), state, 0.1)
        assert np.array_equal(out, values)

    def test_first_step_has_learning_rate_magnitude(self):
        values = np.zeros(4)
        grads = np.array([0.3, -0.7, 2.0, -0.01])
        out = tr.adam_step(values, grads, tr.AdamState.for_size(4), 0.05)
        # bias correction makes the first update ~ lr * sign(g)
        assert np.allclose(out, -0.05 * np.sign(grads), rtol=1e-6)

    def test_optimizes_quadratic(self):
        w = np.array([1.0])
        state = tr.AdamState.for_size(1)
        for _ in range(100):
            w = tr.adam_step(w, 2.0 * w, state, 0.1)
        assert abs(w[0]) < 0.1

    def test_masked_entries_bit_identical(self):
        values = np.array([1.0, 2.0, 3.0, 4.0])
        mask = np.array([True, False, True, False])
        state = tr.AdamState.for_size(4)
        out = values
        for _ in range(5):
            out = tr.adam_step(out, np.ones(4), state, 0.1, mask)
        assert out[1] == 2.0 and out[3] == 4.0
        assert out[0] != 1.0 and out[2] != 3.0

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            tr.adam_step(np.zeros(3), np.zeros(2), tr.AdamState.for_size(3), 0.1)


class TestMetaTrain:
    CFG = tr.TrainConfig(
        epochs=200, batch_size=25, learning_rate=1e-3, val_interval=20,
        patience=10, seed=0,
    )

    def test_improves_and_keeps_best_snapshot(self, toy_space):
        train, val = make_tasks(toy_space)
        net = tiny_net(toy_space)
        result = tr.meta_train(net, gp.KernelParams(), train, val, self.CFG)
        assert result.final_train_nll < result.initial_train_nll
        logged = [row["mean_val_nll"] for row in result.log]
        assert result.best_val_nll <= logged[0]
        assert result.best_val_nll == min(logged)

    def test_small_task_uses_full_history(self, toy_space):
        train, val = make_tasks(toy_space, n_pipelines=10)
        cfg = tr.TrainConfig(epochs=3, batch_size=1000, learning_rate=1e-3,
                             val_interval=1, patience=1, seed=0)
        result = tr.meta_train(tiny_net(toy_space), gp.KernelParams(), train, val, cfg)
        assert result.trained_epochs >= 1

    def test_deterministic(self, toy_space):
        train, val = make_tasks(toy_space)
        runs = []
        for _ in range(2):
            net = tiny_net(toy_space, seed=5)
            res = tr.meta_train(net, gp.KernelParams(), train, val, self.CFG)
            runs.append((res.net.get_vector(), res.params.to_array(), res.log))
        assert np.array_equal(runs[0][0], runs[1][0])
        assert np.array_equal(runs[0][1], runs[1][1])
        a = [(r["epoch"], r["mean_train_nll"], r["mean_val_nll"]) for r in runs[0][2]]
        b = [(r["epoch"], r["mean_train_nll"], r["mean_val_nll"]) for r in runs[1][2]]
        assert a == b

    def test_frozen_groups_conserved(self, toy_space):
        train, val = make_tasks(toy_space)
        net = tiny_net(toy_space, seed=2)
        set_trainable(net, ("encoder", 1, 0))
        frozen_before = {
            key: [w.copy() for w in net.group_arrays(key).weights]
            for key in net.group_keys()
            if not net.trainable[key]
        }
        cfg = tr.TrainConfig(epochs=30, batch_size=25, learning_rate=1e-3,
                             val_interval=10, patience=3, seed=0)
        tr.meta_train(net, gp.KernelParams(), train, val, cfg)
        for key, weights in frozen_before.items():
            for before, after in zip(weights, net.group_arrays(key).weights):
                assert np.array_equal(before, after)

    def test_empty_train_split_rejected(self, toy_space):
        with pytest.raises(ValidationError, match="training"):
            tr.meta_train(tiny_net(toy_space), gp.KernelParams(), [], [], self.CFG)

    def test_nan_loss_aborts_with_coordinates(self, toy_space, monkeypatch):
        train, val = make_tasks(toy_space)

        def bad_grad(*args, **kwargs):
            return float("nan"), np.zeros(3), np.zeros((len(args[1]), args[0].shape[1]))

        monkeypatch.setattr(gp, "nll_grad", bad_grad)
        with pytest.raises(tr.TrainingDivergedError, match="epoch 1, task"):
            tr.meta_train(tiny_net(toy_space), gp.KernelParams(), train, val, self.CFG)


class TestFineTune:
    def _history(self, toy_space, toy_batch, n=20, seed=0):
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(toy_batch["features"]), size=n, replace=False)
        y = rng.uniform(0.2, 0.9, size=n)
        y_std, _, _ = gp.standardize_targets(y)
        return toy_batch["features"][idx], toy_batch["active"][idx], y_std

    def test_zero_steps_is_identity(self, toy_space, toy_batch):
        feats, act, y = self._history(toy_space, toy_batch)
        net = tiny_net(toy_space)
        params = gp.KernelParams(0.1, 0.2, -3.0)
        out, losses = tr.fine_tune(net, params, feats, act, y, steps=0)
        assert out == params and losses == []

    def test_descent_over_seeds(self, toy_space, toy_batch):
        wins = 0
        for seed in range(20):
            feats, act, y = self._history(toy_space, toy_batch, seed=seed)
            net = tiny_net(toy_space, seed=seed)
            params = gp.KernelParams()
            out, losses = tr.fine_tune(
                net, params, feats, act, y, steps=100, learning_rate=1e-3
            )
            emb, _ = tr.forward(net, feats, act)
            after = gp.nll(emb, y, out)
            if after <= losses[0]:
                wins += 1
        assert wins >= 19  # >= 95% of 20 seeds

    def test_kernel_only_never_touches_network(self, toy_space, toy_batch):
        feats, act, y = self._history(toy_space, toy_batch)
        net = tiny_net(toy_space)
        before = net.get_vector()
        _, losses = tr.fine_tune(net, gp.KernelParams(), feats, act, y, steps=100)
        assert len(losses) == 100
        assert np.array_equal(net.get_vector(), before)

    def test_full_mode_with_frozen_groups_is_contradictory(self, toy_space, toy_batch):
        feats, act, y = self._history(toy_space, toy_batch)
        net = tiny_net(toy_space)
        set_trainable(net, "kernel_only")
        with pytest.raises(ValidationError, match="frozen"):
            tr.fine_tune(net, gp.KernelParams(), feats, act, y, steps=1, mode="full")

    def test_full_mode_updates_network(self, toy_space, toy_batch):
        feats, act, y = self._history(toy_space, toy_batch)
        net = tiny_net(toy_space)
        before = net.get_vector()
        tr.fine_tune(net, gp.KernelParams(), feats, act, y, steps=5, mode="full")
        assert not np.array_equal(net.get_vector(), before)

    def test_trainable_mode_respects_flags(self, toy_space, toy_batch):
        feats, act, y = self._history(toy_space, toy_batch)
        net = tiny_net(toy_space)
        set_trainable(net, "aggregation")
        slices = net.group_slices()
        before = net.get_vector()
        tr.fine_tune(net, gp.KernelParams(), feats, act, y, steps=5, mode="trainable")
        after = net.get_vector()
        for key in net.group_keys():
            same = np.array_equal(before[slices[key]], after[slices[key]])
            assert same != (key == ("aggr",))
