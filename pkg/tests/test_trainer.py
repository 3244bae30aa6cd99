import csv

import numpy as np
import pytest

from deeplift.errors import DataError, Divergence
from deeplift.graph import Dense, Graph, ReLU, Sigmoid, Softmax, forward
from deeplift.trainer import (
    TrainConfig,
    accuracy,
    config_train,
    init_graph,
    load_config,
    logit_position,
    roc_auc,
    train,
    weight_gradients,
    write_history,
)


def loss_of(g, x, y, loss):
    return weight_gradients(g, x, y, loss)[0]


def test_zero_weights_uniform_labels_give_zero_gradient():
    g = Graph((Dense(np.zeros((3, 4)), np.zeros(4)), Softmax()), (3,))
    x = np.random.default_rng(0).normal(size=(4, 3))
    labels = np.full((4, 4), 0.25)
    value, grads = weight_gradients(g, x, labels)
    assert abs(value - np.log(4)) < 1e-12
    dw, db = grads[0]
    assert np.abs(dw).max() < 1e-15 and np.abs(db).max() < 1e-15


def test_single_dense_gradient_is_outer_product():
    rng = np.random.default_rng(1)
    w, b = rng.normal(size=(3, 2)), rng.normal(size=2)
    g = Graph((Dense(w, b), Softmax()), (3,))
    x = rng.normal(size=(1, 3))
    _, grads = weight_gradients(g, x, np.array([1]))
    z = x[0] @ w + b
    p = np.exp(z - z.max())
    p /= p.sum()
    delta = p - np.array([0.0, 1.0])
    np.testing.assert_allclose(grads[0][0], np.outer(x[0], delta), rtol=1e-12)
    np.testing.assert_allclose(grads[0][1], delta, rtol=1e-12)


@pytest.mark.parametrize("loss", ["softmax_xent", "multi_task_sigmoid_xent"])
def test_weight_gradients_match_finite_differences(loss):
    rng = np.random.default_rng(2)
    head = Softmax() if loss == "softmax_xent" else Sigmoid()
    g = Graph((Dense(rng.normal(size=(4, 5)), rng.normal(size=5)), ReLU(),
               Dense(rng.normal(size=(5, 3)), rng.normal(size=3)), head), (4,))
    x = rng.normal(size=(6, 4))
    y = rng.integers(3, size=6) if loss == "softmax_xent" else rng.integers(2, size=(6, 3))
    _, grads = weight_gradients(g, x, y, loss)
    h = 1e-6
    for i in (0, 2):
        w = g.layers[i].weights
        for idx in [(0, 0), (1, 2), (3, 1)]:
            bumped = []
            for sign in (1, -1):
                w2 = w.copy()
                w2[idx] += sign * h
                layers = list(g.layers)
                layers[i] = layers[i].with_params(w2, g.layers[i].bias)
                bumped.append(loss_of(g.with_layers(layers), x, y, loss))
            fd = (bumped[0] - bumped[1]) / (2 * h)
            assert abs(fd - grads[i][0][idx]) < 1e-6


def test_separable_toy_set_is_learned():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(300, 2))
    x = x[np.abs(x[:, 0] + x[:, 1]) > 0.3]
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    g = init_graph([{"kind": "Dense", "units": 2}, {"kind": "Softmax"}], (2,), seed=0)
    trained, history = train(g, (x, y), TrainConfig(learning_rate=0.1, epochs=50, batch_size=16))
    assert len(history) == 50
    assert accuracy(trained, x, y) == 1.0
    assert history[-1]["loss"] < history[0]["loss"]


def test_zero_epochs_leave_graph_unchanged():
    g = init_graph([{"kind": "Dense", "units": 2}, {"kind": "Softmax"}], (2,), seed=0)
    trained, history = train(g, (np.ones((4, 2)), np.array([0, 1, 0, 1])), TrainConfig(epochs=0))
    assert history == []
    assert trained.layers[0].weights.tobytes() == g.layers[0].weights.tobytes()


def test_training_is_deterministic():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(64, 3)), rng.integers(2, size=64)
    arch = [{"kind": "Dense", "units": 4}, {"kind": "ReLU"}, {"kind": "Dense", "units": 2}, {"kind": "Softmax"}]
    runs = [train(init_graph(arch, (3,), seed=5), (x, y), TrainConfig(epochs=3, seed=9)) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    assert all(a.weights.tobytes() == b.weights.tobytes()
               for a, b in zip(runs[0][0].layers, runs[1][0].layers) if isinstance(a, Dense))


def test_divergence_carries_history():
    x = np.array([[1.0], [-1.0]] * 4)
    y = np.array([1, 0] * 4)
    g = Graph((Dense([[1.0, -1.0]], [0.0, 0.0]), Softmax()), (1,))
    with pytest.raises(Divergence) as info:
        train(g, (x * 1e150, y), TrainConfig(learning_rate=1e200, momentum=0.0, epochs=5, batch_size=8))
    assert [h["epoch"] for h in info.value.history] == [1]
    assert info.value.exit_code == 4


def test_logit_position():
    g = Graph((Dense(np.ones((2, 2)), np.zeros(2)), Softmax()), (2,))
    assert logit_position(g, "softmax_xent") == 1
    assert logit_position(g, "multi_task_sigmoid_xent") == 2


def test_roc_auc():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([1, 2, 3], [0, 1, 1]) == 1.0
    assert roc_auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    with pytest.raises(DataError):
        roc_auc([1, 2], [1, 1])


@pytest.mark.parametrize("bad", [
    {"learning_rate": 0.0}, {"momentum": 1.0}, {"batch_size": 0}, {"epochs": -1}, {"loss": "mse"},
])
def test_config_validation(bad):
    with pytest.raises(DataError):
        TrainConfig(**bad)


def test_shipped_configs():
    for name in ("genomic", "digits"):
        cfg = load_config(name)
        tc = config_train(cfg, epochs=1)
        assert tc.epochs == 1
        g = init_graph(cfg["architecture"], cfg["input_shape"], seed=0)
        x = np.zeros((1,) + tuple(cfg["input_shape"]))
        assert forward(g, x).output.ndim == 2
    with pytest.raises(DataError):
        load_config("no-such-config")


def test_write_history(tmp_path):
    path = tmp_path / "loss.csv"
    write_history([{"epoch": 1, "loss": 0.5}, {"epoch": 2, "loss": 0.25}], path)
    rows = list(csv.reader(open(path)))
    assert rows == [["epoch", "loss"], ["1", "0.5"], ["2", "0.25"]]
