import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from odamot.errors import Degenerate, DimMismatch, NonFinite
from odamot.linmodel import (LinearModel, batch_train, load_model, logistic_loss, loss_gradient,
                             predict_prob, save_model, sgd_step)

finite = st.floats(-5, 5, allow_nan=False)


def _model_with_margin(m):
    # phi = (1,), w = (0,), bias = m
    return LinearModel([0.0, m]), np.array([1.0])


def test_predict_prob_examples():
    m, phi = _model_with_margin(0.0)
    assert predict_prob(m, phi) == 0.5
    assert predict_prob(LinearModel.zeros(4), np.ones(4)) == 0.5
    m, phi = _model_with_margin(math.log(3))
    assert predict_prob(m, phi) == pytest.approx(0.75, abs=1e-15)


def test_dim_mismatch():
    with pytest.raises(DimMismatch):
        predict_prob(LinearModel.zeros(3), np.ones(4))
    with pytest.raises(DimMismatch):
        logistic_loss(LinearModel.zeros(3), np.ones(2), 1)


def test_logistic_loss_examples():
    m, phi = _model_with_margin(0.0)
    assert logistic_loss(m, phi, 1) == pytest.approx(math.log(2), abs=1e-15)
    m, phi = _model_with_margin(20.0)
    assert logistic_loss(m, phi, 1) < 1e-8
    m, phi = _model_with_margin(math.log(3))
    assert logistic_loss(m, phi, 1) == pytest.approx(math.log(4 / 3), abs=1e-15)


def test_loss_gradient_examples():
    phi = np.array([0.3, -2.0])
    m = LinearModel([0.0, 0.0, 0.0])
    np.testing.assert_allclose(loss_gradient(m, phi, 1), -np.r_[phi, 1.0] / 2)
    m, one = _model_with_margin(30.0)
    assert np.linalg.norm(loss_gradient(m, one, 1)) < 1e-10


def _fd(f, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def test_loss_gradient_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 21))
        w = rng.normal(size=d + 1)
        phi = rng.normal(size=d)
        y = int(rng.choice([-1, 1]))
        g = loss_gradient(LinearModel(w), phi, y)
        num = _fd(lambda v: logistic_loss(LinearModel(v), phi, y), w)
        assert np.linalg.norm(g - num) / max(np.linalg.norm(g), 1e-12) < 1e-5


@given(arrays(float, 4, elements=finite), arrays(float, 3, elements=finite))
def test_negated_model_complements(w, phi):
    m = LinearModel(w)
    assert predict_prob(m, phi) + predict_prob(LinearModel(-w), phi) == pytest.approx(1.0, abs=1e-12)


@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite),
       arrays(float, 3, elements=finite), st.sampled_from([-1, 1]))
def test_loss_convex(w1, w2, phi, y):
    mid = logistic_loss(LinearModel((w1 + w2) / 2), phi, y)
    assert mid <= (logistic_loss(LinearModel(w1), phi, y) + logistic_loss(LinearModel(w2), phi, y)) / 2 + 1e-12


def test_sgd_step_examples():
    m = LinearModel([1.0, 1.0])
    assert sgd_step(m, np.zeros(2), 0.1) == m
    assert sgd_step(m, np.array([2.0, -2.0]), 0.5).weights.tolist() == [0.0, 2.0]
    with pytest.raises(NonFinite):
        sgd_step(m, np.array([np.inf, 0.0]), 0.1)


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=st.integers(-8, 8).map(float)),
       st.sampled_from([0.5, 0.25, 1e-5]))
def test_sgd_step_inverse(w, g, eta):
    # dyadic gradients keep the round trip exact
    m = LinearModel(np.round(w * 64) / 64)
    back = sgd_step(sgd_step(m, g, eta), -g, eta)
    np.testing.assert_allclose(back.weights, m.weights, atol=1e-12)


def test_batch_train_separable():
    rng = np.random.default_rng(1)
    pos = rng.normal([3, 3], 0.5, size=(100, 2))
    neg = rng.normal([-3, -3], 0.5, size=(400, 2))
    m = batch_train(pos, neg, lam=1e-4)
    acc = np.mean(np.r_[m.prob(pos) >= 0.5, m.prob(neg) < 0.5])
    assert acc == 1.0


def test_batch_train_identical_distributions_is_chance():
    from sklearn.metrics import roc_auc_score
    aucs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        pos = rng.normal(size=(300, 4))
        neg = rng.normal(size=(300, 4))
        m = batch_train(pos, neg, lam=1e-2, rounds=0, n_init_neg=300, seed=seed)
        tp, tn = rng.normal(size=(500, 4)), rng.normal(size=(500, 4))
        s = np.r_[m.prob(tp), m.prob(tn)]
        aucs.append(roc_auc_score(np.r_[np.ones(500), np.zeros(500)], s))
        assert np.all(np.abs(s - 0.5) < 0.15)
    assert abs(np.median(aucs) - 0.5) <= 0.05


def test_batch_train_rounds_zero_is_plain_fit():
    rng = np.random.default_rng(2)
    pos = rng.normal(1, 1, size=(50, 3))
    neg = rng.normal(-1, 1, size=(200, 3))
    a = batch_train(pos, neg, rounds=0, n_init_neg=200)
    b = batch_train(pos, neg, rounds=3, n_init_neg=200)
    # with the whole pool already in the set, mining adds nothing
    np.testing.assert_allclose(a.weights, b.weights)


def test_batch_train_degenerate():
    with pytest.raises(Degenerate):
        batch_train(np.zeros((0, 3)), np.ones((5, 3)))
    with pytest.raises(Degenerate):
        batch_train(np.ones((5, 3)), np.zeros((0, 3)))


def test_model_file_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    for _ in range(100):
        m = LinearModel(rng.normal(size=int(rng.integers(2, 40))) * 10.0 ** rng.integers(-5, 5))
        p = tmp_path / "m.odmw"
        save_model(m, p)
        assert load_model(p).weights.tobytes() == m.weights.tobytes()
    with pytest.raises(DimMismatch):
        load_model(p, dim=m.dim + 1)
