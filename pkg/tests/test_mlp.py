import copy

import numpy as np
import pytest

from latticeopt import data, features, lattice, mlp
from latticeopt.features import FeaturePipeline
from latticeopt.mlp import AdamState, ModelMeta, TrainConfig

from conftest import random_topology


def _toy_model(dims=(3, 5, 4, 1), seed=0):
    return mlp.init(dims, seed=seed)


def test_init_deterministic_and_bounded():
    a = _toy_model(seed=42)
    b = _toy_model(seed=42)
    c = _toy_model(seed=43)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))
    for fan_in, w in zip(a.layer_dims[:-1], a.weights):
        assert np.max(np.abs(w)) <= np.sqrt(6.0 / fan_in)
    for bias in a.biases:
        assert np.all(bias == 0.0)


def test_zero_input_forward_is_zero_after_init():
    model = _toy_model()
    assert mlp.forward(model, np.zeros(3)) == 0.0


def test_forward_toy_network_hand_computed():
    model = mlp.init([1, 1, 1, 1, 1], seed=0)
    ws = [2.0, -3.0, 0.5, 4.0]
    for w, val in zip(model.weights, ws):
        w[:] = val
    for b, val in zip(model.biases, (1.0, 0.5, -0.25, 2.0)):
        b[:] = val
    x = 1.5
    h1 = max(2.0 * x + 1.0, 0.0)  # 4
    h2 = max(-3.0 * h1 + 0.5, 0.0)  # 0
    h3 = max(0.5 * h2 - 0.25, 0.0)  # 0
    out = 4.0 * h3 + 2.0  # 2
    assert mlp.forward(model, np.asarray([x])) == pytest.approx(out, rel=1e-15)
    assert out == 2.0


def test_forward_rejects_wrong_dim():
    with pytest.raises(ValueError):
        mlp.forward(_toy_model(), np.zeros(7))


def test_gradients_match_central_finite_differences():
    rng = np.random.default_rng(1)
    model = _toy_model(seed=3)
    x = rng.normal(size=(6, 3))
    y = rng.normal(size=6)
    dws, dbs, _ = mlp.grad(model, x, y)

    def loss():
        pred = mlp.forward(model, x)
        return float(((pred - y) ** 2).mean())

    h = 1e-5
    for params, grads in ((model.weights, dws), (model.biases, dbs)):
        for p, g in zip(params, grads):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                # skip entries whose perturbation crosses a ReLU kink
                p[idx] = orig + h
                up = loss()
                p[idx] = orig - h
                down = loss()
                p[idx] = orig
                fd = (up - down) / (2 * h)
                if abs(fd) > 1e-8 or abs(g[idx]) > 1e-8:
                    assert g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_perfect_fit_batch_has_zero_gradient():
    model = _toy_model(seed=5)
    x = np.random.default_rng(2).normal(size=(4, 3))
    y = mlp.forward(model, x)
    dws, dbs, mse = mlp.grad(model, x, y)
    assert mse == 0.0
    for g in dws + dbs:
        assert np.all(g == 0.0)


def test_residual_doubling_doubles_gradients():
    model = _toy_model(seed=6)
    x = np.random.default_rng(3).normal(size=(4, 3))
    pred = mlp.forward(model, x)
    resid = np.random.default_rng(4).normal(size=4)
    d1 = mlp.grad(model, x, pred - resid)
    d2 = mlp.grad(model, x, pred - 2 * resid)
    for g1, g2 in zip(d1[0] + d1[1], d2[0] + d2[1]):
        assert np.allclose(2 * g1, g2, rtol=1e-12, atol=1e-12)


def test_grad_rejects_empty_batch():
    with pytest.raises(ValueError):
        mlp.grad(_toy_model(), np.empty((0, 3)), np.empty(0))


def test_adam_zero_gradient_no_update():
    model = _toy_model(seed=7)
    before = copy.deepcopy(model.weights)
    state = AdamState.for_model(model)
    zeros_w = [np.zeros_like(w) for w in model.weights]
    zeros_b = [np.zeros_like(b) for b in model.biases]
    mlp.adam_step(model, zeros_w, zeros_b, state, TrainConfig())
    for w0, w1 in zip(before, model.weights):
        assert np.array_equal(w0, w1)


def test_adam_moves_against_gradient():
    model = _toy_model(seed=8)
    state = AdamState.for_model(model)
    grads_w = [np.ones_like(w) for w in model.weights]
    grads_b = [np.ones_like(b) for b in model.biases]
    before = copy.deepcopy(model.weights)
    cfg = TrainConfig(learning_rate=1e-3)
    mlp.adam_step(model, grads_w, grads_b, state, cfg)
    for w0, w1 in zip(before, model.weights):
        assert np.allclose(w0 - w1, cfg.learning_rate, rtol=1e-6)


def test_evaluate_matches_single_pass():
    model = _toy_model(seed=9)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(500, 3))
    y = rng.normal(size=500)
    direct = float(((mlp.forward(model, x) - y) ** 2).mean())
    assert mlp.evaluate(model, x, y, chunk=64) == pytest.approx(direct, rel=1e-12)


def test_train_epochs_zero_returns_init(tiny_dataset_m2):
    cfg = TrainConfig(epochs=0, batch_size=32, seed=13, hidden_dims=(16, 8, 4))
    model, history = mlp.train(tiny_dataset_m2, FeaturePipeline(n_m=2), cfg)
    assert history == []
    model2, _ = mlp.train(tiny_dataset_m2, FeaturePipeline(n_m=2), cfg)
    for w1, w2 in zip(model.weights, model2.weights):
        assert np.array_equal(w1, w2)


def test_train_deterministic_history_and_loss_decreases(tiny_dataset_m2):
    cfg = TrainConfig(epochs=4, batch_size=32, seed=13, hidden_dims=(32, 16, 8))
    pipe = FeaturePipeline(n_m=2, top_k=64)
    model, hist = mlp.train(tiny_dataset_m2, pipe, cfg)
    _, hist2 = mlp.train(tiny_dataset_m2, pipe, cfg)
    assert hist == hist2
    assert hist[-1]["train_mse"] < hist[0]["train_mse"]
    assert model.meta.input_dim == 64
    assert model.layer_dims == [64, 32, 16, 8, 1]


def test_train_selection_uses_training_split_only(tiny_dataset_m2):
    # selection indices must not change when test-split targets are corrupted
    cfg = TrainConfig(epochs=0, batch_size=32, seed=13, hidden_dims=(8,))
    pipe = FeaturePipeline(n_m=2, top_k=40)
    model, _ = mlp.train(tiny_dataset_m2, pipe, cfg)

    n = len(tiny_dataset_m2)
    perm = np.random.default_rng(cfg.seed).permutation(n)
    test_idx = perm[int(n * cfg.split) :]
    comp = tiny_dataset_m2.compliances.copy()
    comp[test_idx] = np.random.default_rng(0).random(len(test_idx)) * 100
    corrupted = data.Dataset(
        m=2, bits=tiny_dataset_m2.bits, volumes=tiny_dataset_m2.volumes,
        compliances=comp, meta=tiny_dataset_m2.meta,
    )
    model2, _ = mlp.train(corrupted, pipe, cfg)
    assert np.array_equal(model.meta.selected_indices, model2.meta.selected_indices)


def test_train_rejects_too_small_dataset(tiny_dataset_m2):
    with pytest.raises(ValueError):
        mlp.train(tiny_dataset_m2, FeaturePipeline(), TrainConfig(batch_size=10**6))


def test_predict_ignores_unselected_features(tiny_dataset_m2):
    cfg = TrainConfig(epochs=1, batch_size=32, seed=1, hidden_dims=(8,))
    model, _ = mlp.train(tiny_dataset_m2, FeaturePipeline(n_m=2, top_k=20), cfg)
    rng = np.random.default_rng(3)
    x = random_topology(2, rng)
    full = features.training_matrix(x.bits[None, :], 2, 2)[0]
    noisy = full.copy()
    unselected = np.setdiff1d(np.arange(len(full)), model.meta.selected_indices)
    noisy[unselected] = rng.random(len(unselected))
    assert mlp.predict(model, x) == pytest.approx(
        float(mlp.forward(model, noisy[model.meta.selected_indices])), rel=1e-15
    )


def test_save_load_round_trip_identical_predictions(tmp_path, tiny_dataset_m2):
    cfg = TrainConfig(epochs=1, batch_size=32, seed=4, hidden_dims=(16, 8))
    model, _ = mlp.train(tiny_dataset_m2, FeaturePipeline(n_m=2, top_k=30), cfg)
    path = tmp_path / "model.json"
    mlp.save(model, path)
    loaded = mlp.load(path)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x = random_topology(2, rng)
        assert mlp.predict(loaded, x) == mlp.predict(model, x)


def test_load_truncated_file_errors(tmp_path, tiny_dataset_m2):
    cfg = TrainConfig(epochs=0, batch_size=32, seed=4, hidden_dims=(8,))
    model, _ = mlp.train(tiny_dataset_m2, FeaturePipeline(n_m=2, top_k=10), cfg)
    path = tmp_path / "model.json"
    mlp.save(model, path)
    blob = path.read_text()
    path.write_text(blob[: len(blob) // 2])
    with pytest.raises(ValueError, match="malformed"):
        mlp.load(path)


def test_predict_with_mismatched_m_errors(tmp_path, tiny_dataset_m2):
    cfg = TrainConfig(epochs=0, batch_size=32, seed=4, hidden_dims=(8,))
    model, _ = mlp.train(tiny_dataset_m2, FeaturePipeline(n_m=2, top_k=10), cfg)
    with pytest.raises(ValueError, match="incompatible"):
        mlp.predict(model, lattice.ground(8))  # model is m=2: only 2 or 4 allowed
    assert isinstance(mlp.predict(model, lattice.ground(4)), float)


def test_loss_history_csv(tmp_path):
    history = [
        {"epoch": 0, "train_mse": 1.25, "test_mse": 2.5},
        {"epoch": 1, "train_mse": 0.5, "test_mse": 1.0},
    ]
    path = tmp_path / "loss.csv"
    mlp.save_loss_history(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_mse,test_mse"
    assert lines[1].startswith("0,1.25,2.5")


def test_model_meta_round_trip_no_filter(tmp_path, tiny_dataset_m2):
    cfg = TrainConfig(epochs=0, batch_size=32, seed=4, hidden_dims=(8,))
    model, _ = mlp.train(tiny_dataset_m2, FeaturePipeline(n_m=None), cfg)
    assert model.meta.n_m is None
    assert model.meta.input_dim == 16
    path = tmp_path / "nf.json"
    mlp.save(model, path)
    assert mlp.load(path).meta.n_m is None
    with pytest.raises(ValueError, match="filtered model"):
        mlp.predict(model, lattice.ground(4))
