import numpy as np
import pytest
from hypothesis import given, strategies as st

from qtransfer.datagen import LabeledDataset
from qtransfer.frontend import FrozenExtractor
from qtransfer.hybrid import (
    HybridModel,
    empirical_loss,
    evaluate,
    hybrid_forward,
    predict,
    predict_logits,
    softmax,
    softmax_cross_entropy,
)
from qtransfer.qsim import Shots
from qtransfer.vqc import CircuitParams, vqc_forward


def linear_extractor(W, b=None):
    W = np.asarray(W, float)
    U, D = W.shape
    params = {"W0": W.T.copy(), "b0": np.zeros(U) if b is None else np.asarray(b, float)}
    return FrozenExtractor("mlp", D, U, params, config={"hidden": []})


def test_cross_entropy_examples():
    assert softmax_cross_entropy([0, 0], 0) == pytest.approx(np.log(2), abs=1e-15)
    a = softmax_cross_entropy([1, -1], 0)
    b = softmax_cross_entropy([1, -1], 1)
    assert a == pytest.approx(0.126928, abs=1e-6)
    assert b == pytest.approx(2.126928, abs=1e-6)
    assert b - a == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        softmax_cross_entropy([0, 0], 2)


def test_cross_entropy_stable():
    assert np.isfinite(softmax_cross_entropy([1000, -1000], 1))


def test_predict_examples():
    cls, probs = predict_logits([0.0, 0.0])
    assert cls == 0 and np.allclose(probs, [0.5, 0.5])
    cls, probs = predict_logits([1.0, -1.0])
    assert cls == 0 and probs[0] == pytest.approx(0.8808, abs=1e-4)
    assert predict_logits([-3.0, 3.0])[0] == 1


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-50, 50))
def test_softmax_shift_invariance(a, b, c):
    assert np.allclose(softmax([a, b]), softmax([a + c, b + c]), atol=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1))
def test_loss_nonnegative(a, b, label):
    assert softmax_cross_entropy([a, b], label) >= 0


def test_depth0_forced_zero_state():
    ext = linear_extractor(np.zeros((3, 2)), b=[-1e6] * 3)
    model = HybridModel(ext, CircuitParams.zeros(3, 0))
    assert np.allclose(hybrid_forward(model, [0.3, 0.1]), [1.0, 1.0])


def test_composition_oracle(rng):
    W = rng.normal(size=(2, 5))
    model = HybridModel(linear_extractor(W), CircuitParams.random(2, 2, seed=1))
    for _ in range(5):
        x = rng.normal(size=5)
        want = vqc_forward(model.vqc, W @ x)[[0, 1]]
        got = hybrid_forward(model, x)
        assert np.max(np.abs(got - want)) <= 1e-12
        assert np.all(np.abs(got) <= 1)


def test_model_validation():
    ext = linear_extractor(np.eye(3))
    with pytest.raises(ValueError):
        HybridModel(ext, CircuitParams.zeros(2, 1))
    with pytest.raises(ValueError):
        HybridModel(ext, CircuitParams.zeros(3, 1), readout_qubits=(1, 1))
    with pytest.raises(ValueError):
        HybridModel(ext, CircuitParams.zeros(3, 1), readout_qubits=(0, 3))


def dataset(x, y):
    return LabeledDataset(np.asarray(x, np.float32), np.asarray(y, np.uint8), "test", "clean", {})


def test_empirical_loss_examples(rng):
    ext = linear_extractor(np.zeros((2, 2)), b=[-1e6, -1e6])
    model = HybridModel(ext, CircuitParams.zeros(2, 0))
    assert empirical_loss(model, dataset([[0, 0]], [0])) == pytest.approx(np.log(2))
    model = HybridModel(linear_extractor(rng.normal(size=(3, 4))), CircuitParams.random(3, 2, seed=2))
    X = rng.normal(size=(5, 4)).astype(np.float32)
    y = rng.integers(0, 2, size=5)
    by_hand = sum(softmax_cross_entropy(hybrid_forward(model, X[i].astype(float)), int(y[i])) for i in range(5)) / 5
    assert empirical_loss(model, dataset(X, y)) == pytest.approx(by_hand, abs=1e-12)
    doubled = dataset(np.concatenate([X, X]), np.concatenate([y, y]))
    assert empirical_loss(model, doubled) == pytest.approx(empirical_loss(model, dataset(X, y)), abs=1e-14)
    with pytest.raises(ValueError):
        empirical_loss(model, dataset(np.zeros((0, 4)), []))


def test_predict_and_evaluate(rng):
    model = HybridModel(linear_extractor(rng.normal(size=(2, 3))), CircuitParams.random(2, 1, seed=4))
    X = rng.normal(size=(6, 3)).astype(np.float32)
    y = np.array([0, 1, 0, 1, 1, 0])
    preds = [predict(model, x.astype(float))[0] for x in X]
    loss, acc = evaluate(model, dataset(X, y))
    assert acc == pytest.approx(np.mean(np.array(preds) == y))
    assert loss == pytest.approx(empirical_loss(model, dataset(X, y)))


def test_shots_deterministic(rng):
    model = HybridModel(linear_extractor(rng.normal(size=(2, 3))), CircuitParams.random(2, 1, seed=4), mode=Shots(100, 3))
    x = rng.normal(size=3)
    assert np.array_equal(hybrid_forward(model, x), hybrid_forward(model, x))
