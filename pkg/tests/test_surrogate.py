import json
import warnings

import numpy as np
import pytest

from conftest import rel
from hdmr_homog import surrogate as sg
from hdmr_homog.errors import FormatError, InsufficientData, TrainingDiverged
from hdmr_homog.oracles import Toy1dProblem, toy1d_micro_energy
from hdmr_homog.validation import derivative_errors, random_model


def one_neuron(c=0.7, w=(0.4, -0.3, 0.2, 0.5), v=0.1, v0=0.05):
    comp = sg.ComponentNet(A=np.eye(4), b=np.zeros(4), W=np.array([w]), v=[v], c=[c], v0=v0)
    norm = sg.Normalization([0.8, -0.5, -0.5, 0.8], [1.2, 0.5, 0.5, 1.2], -1.0, 3.0)
    return sg.HdmrModel([comp], norm)


def test_zero_weights_constant():
    rng = np.random.default_rng(0)
    comps = []
    for v0 in (0.2, -0.5):
        c = sg.random_component(rng, 4, 4, 6)
        comps.append(sg.ComponentNet(c.A, c.b, c.W, c.v, np.zeros(6), v0))
    norm = sg.Normalization(np.zeros(4), np.ones(4), 1.0, 5.0)
    m = sg.HdmrModel(comps, norm)
    x = rng.uniform(0, 1, (10, 4))
    np.testing.assert_allclose(m.evaluate(x), 4.0 / 2 * (-0.3 + 1.0) + 1.0, rtol=1e-15)
    assert np.all(m.gradient(x) == 0.0) and np.all(m.hessian(x) == 0.0)


def test_structural_reduction():
    rng = np.random.default_rng(1)
    W, v, c = rng.normal(size=(7, 4)), rng.normal(size=7), rng.normal(size=7)
    m = sg.HdmrModel([sg.ComponentNet(np.eye(4), np.zeros(4), W, v, c, 0.3)],
                     sg.Normalization(-np.ones(4), np.ones(4), -1.0, 1.0))
    xi = rng.uniform(-1, 1, (20, 4))
    direct = np.tanh(xi @ W.T + v) @ c + 0.3
    assert np.abs(m.evaluate(xi) - direct).max() < 1e-14


def test_single_neuron_by_hand():
    m = one_neuron()
    x = np.array([1.05, 0.1, -0.2, 0.9])
    n = m.norm
    xi = 2 * (x - n.x_min) / n.dx - 1
    w = np.array([0.4, -0.3, 0.2, 0.5])
    q = w @ xi + 0.1
    assert m.evaluate(x) == pytest.approx(n.df / 2 * (0.7 * np.tanh(q) + 0.05 + 1) + n.f_min, rel=1e-14)
    np.testing.assert_allclose(m.gradient(x), 0.7 * (1 - np.tanh(q) ** 2) * w * n.df / n.dx, rtol=1e-14)
    H = 2 * 0.7 * np.outer(w, w) * (np.tanh(q) ** 2 - 1) * np.tanh(q) * 2 * n.df / np.outer(n.dx, n.dx)
    np.testing.assert_allclose(m.hessian(x), H, rtol=1e-13)


def test_derivatives_random_models():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m = random_model(rng)
        x = m.norm.x_min + rng.uniform(0, 1, 4) * m.norm.dx
        eg, _ = derivative_errors(m, x, 1e-5)
        _, eH = derivative_errors(m, x, 1e-4)
        assert eg < 1e-6 and eH < 1e-5
        H = m.hessian(x, warn=False)
        assert np.array_equal(H, H.T)
        C = H.reshape(2, 2, 2, 2)
        assert np.array_equal(C, C.transpose(2, 3, 0, 1))


def test_second_order_convergence():
    rng = np.random.default_rng(8)
    m = random_model(rng)
    x = m.norm.x_min + 0.3 * m.norm.dx
    g1, H1 = derivative_errors(m, x, 2e-3)
    g2, H2 = derivative_errors(m, x, 1e-3)
    assert g1 / g2 == pytest.approx(4.0, abs=0.5)
    assert H1 / H2 == pytest.approx(4.0, abs=0.5)


def test_batch_matches_single():
    rng = np.random.default_rng(2)
    m = random_model(rng)
    X = m.norm.x_min + rng.uniform(0, 1, (5, 4)) * m.norm.dx
    for i in range(5):
        assert m.evaluate(X)[i] == pytest.approx(m.evaluate(X[i]), rel=1e-14)
        np.testing.assert_allclose(m.gradient(X)[i], m.gradient(X[i]), rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(m.hessian(X)[i], m.hessian(X[i]), rtol=1e-13, atol=1e-15)


def test_extrapolation_warning():
    m = one_neuron()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m.evaluate(np.array([1.0, 0.0, 0.0, 1.0]))
    with pytest.warns(sg.ExtrapolationWarning):
        m.evaluate(np.array([1.5, 0.0, 0.0, 1.0]))


def test_serialization_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    m = random_model(rng, L=4, N=5)
    p = tmp_path / "m.json"
    m.save(p)
    m2 = sg.HdmrModel.load(p)
    X = m.norm.x_min + rng.uniform(-0.2, 1.2, (50, 4)) * m.norm.dx
    np.testing.assert_array_equal(m.evaluate(X, warn=False), m2.evaluate(X, warn=False))
    np.testing.assert_array_equal(m.hessian(X, warn=False), m2.hessian(X, warn=False))
    data = json.loads(p.read_text())
    assert data["L"] == 4 and data["D"] == 4 and "format_version" in data


def test_load_malformed(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"format_version": 1, "D": 4}')
    with pytest.raises(FormatError):
        sg.HdmrModel.load(p)
    p.write_text("{oops")
    with pytest.raises(FormatError):
        sg.HdmrModel.load(p)


def test_invalid_shapes():
    with pytest.raises(ValueError):
        sg.ComponentNet(np.eye(4), np.zeros(3), np.ones((2, 4)), np.zeros(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        sg.Normalization([0.0], [0.0], 0.0, 1.0)


# ---------------------------------------------------------------- training


def test_train_constant():
    X = np.random.default_rng(0).uniform(0, 1, (200, 4))
    m = sg.train(X, np.full(200, 2.5), (2, 4, 3))
    assert m.metrics["validation_rmse"] < 1e-10
    assert m.evaluate(np.full(4, 0.5)) == pytest.approx(2.5, abs=1e-9)


def test_train_toy1d():
    rng = np.random.default_rng(0)
    eps = rng.uniform(0.0, 2.0, 10_000)
    idx = rng.choice(10_000, 1000, replace=False)
    p = Toy1dProblem()
    f = np.array([toy1d_micro_energy(p, e) for e in eps[idx]])
    m = sg.train(eps[idx][:, None], f, (2, 1, 5))
    assert m.metrics["validation_rmse"] < 1e-3


def test_train_quadratic():
    X = np.random.default_rng(5).uniform(-1, 1, (2000, 4))
    m = sg.train(X, np.sum(X**2, axis=1), (5, 4, 10))
    assert m.metrics["validation_rmse"] < 1e-2
    # the gradient of a good energy fit is a good stress fit
    x = np.array([0.3, -0.2, 0.5, 0.1])
    assert rel(m.gradient(x), 2 * x) < 0.05


def test_train_deterministic():
    X = np.random.default_rng(6).uniform(-1, 1, (300, 4))
    f = np.sin(X).sum(axis=1)
    a = sg.train(X, f, (2, 4, 4), sg.TrainOptions(max_epochs=20, finetune_epochs=20))
    b = sg.train(X, f, (2, 4, 4), sg.TrainOptions(max_epochs=20, finetune_epochs=20))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_insufficient_data():
    X = np.random.default_rng(0).uniform(0, 1, (20, 4))
    with pytest.raises(InsufficientData):
        sg.train(X, X.sum(axis=1), (5, 4, 10))
    with pytest.raises(InsufficientData):
        sg.train(np.zeros((0, 4)), np.zeros(0), (1, 4, 2))


def test_training_diverged(monkeypatch):
    X = np.random.default_rng(0).uniform(0, 1, (100, 2))

    def bad_value(comps, xi):
        return np.full(xi.shape[0], np.nan)

    monkeypatch.setattr(sg, "_value", bad_value)
    with pytest.raises(TrainingDiverged):
        sg.train(X, X.sum(axis=1), (1, 2, 2), sg.TrainOptions(max_epochs=5, finetune_epochs=5))


def test_invalid_architecture():
    X = np.ones((100, 4))
    with pytest.raises(ValueError):
        sg.train(X, np.arange(100.0), (1, 5, 3))
    with pytest.raises(ValueError):
        sg.TrainOptions(weight_decay=-1.0)
