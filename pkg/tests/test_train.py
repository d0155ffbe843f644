import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qtransfer.datagen import LabeledDataset
from qtransfer.frontend import FrozenExtractor, NumericalAbort
from qtransfer.grad import readout_jacobian
from qtransfer.hybrid import HybridModel, empirical_loss, evaluate
from qtransfer.train import (
    TRACE_COLUMNS,
    BoundConstants,
    SweepBase,
    TrainConfig,
    bound_table,
    decompose_errors,
    estimate_circuit_constants,
    estimate_constants,
    init_model,
    opt_error_bound,
    sgd_train,
    sweep,
    theorem3_lr,
)
from qtransfer.vqc import CircuitParams


def identity_extractor(U):
    return FrozenExtractor("pca", U, U, {"mean": np.zeros(U), "components": np.eye(U), "eigenvalues": np.ones(U)})


def separable(n=200, seed=0, split="train"):
    # with zero angles the ring maps <Z0> -> c1 and <Z1> -> c0 c1, so sign(x1) is readable
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2)) * 2
    y = (X[:, 1] > 0).astype(np.uint8)
    return LabeledDataset(X.astype(np.float32), y, split, "clean", {"generator": "separable", "seed": seed})


def test_theorem3_lr_examples():
    assert theorem3_lr(1, 1, 0, 100) == 0.1
    assert theorem3_lr(2, 0, 1, 4) == 0.5
    with pytest.raises(ValueError):
        theorem3_lr(1, 0, 0, 10)
    with pytest.raises(ValueError):
        theorem3_lr(1, 1, 0, 0)


def test_opt_bound_examples():
    assert opt_error_bound(1, 1, 0, 100) == pytest.approx(0.1, abs=1e-15)
    assert opt_error_bound(1, 1, 1, 10**12) == pytest.approx(1.0, abs=1e-5)
    a, b = opt_error_bound(1, 1, 0, 1), opt_error_bound(1, 1, 0, 4)
    assert (a, b) == (1.0, 0.5)


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.integers(1, 10**6))
def test_bound_sqrt_scaling(R, L, T):
    assert opt_error_bound(R, L, 0.0, T) * math.sqrt(T) == pytest.approx(R * L, rel=1e-12)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5), st.integers(1, 1000))
def test_bound_identities(R, L, beta, T):
    bound = opt_error_bound(R, L, beta, T)
    assert bound >= beta * R**2
    assert opt_error_bound(R, L, beta, T + 1) <= bound + 1e-12
    if L**2 + beta**2 * R**2 > 0:
        eta = theorem3_lr(R, L, beta, T)
        assert eta * math.sqrt(T) * math.sqrt(L**2 + beta**2 * R**2) == pytest.approx(R, rel=1e-12, abs=1e-300)


def consts(**kw):
    base = dict(beta=0.0, L=1.0, R=1.0, C_FX=1.0, C_FV=1.0, D_A=1, D_B=1, M=1, U=1)
    base.update(kw)
    return BoundConstants(**base)


def test_bound_table_examples():
    t = bound_table(consts(C_FX=100, D_A=10_000, M=100))
    assert t["bounds"]["pretrained_plus_vqc"]["approximation"]["value"] == pytest.approx(0.2, abs=1e-15)
    t = bound_table(consts(C_FV=64, D_B=6400))
    assert t["bounds"]["pretrained_plus_vqc"]["estimation"]["value"] == pytest.approx(0.1, abs=1e-15)
    e1 = bound_table(consts(C_FV=5, D_B=100))["bounds"]["pretrained_plus_vqc"]["estimation"]["value"]
    e4 = bound_table(consts(C_FV=5, D_B=400))["bounds"]["pretrained_plus_vqc"]["estimation"]["value"]
    assert e4 == pytest.approx(e1 / 2, rel=1e-14)
    with pytest.raises(ValueError):
        consts(D_B=0)


def test_estimate_constants_depth0():
    model = HybridModel(identity_extractor(2), CircuitParams.zeros(2, 0))
    assert estimate_constants(model, separable(5)) == (0.0, 0.0)


def test_estimate_constants_cosine():
    # <Z> = cos(a) cos(b) near zero angles: gradient 0, Hessian diag(-1, -1, 0)
    beta, L = estimate_circuit_constants(CircuitParams.zeros(1, 1), [[-1e6]], [0], probe_count=500, seed=0)
    assert L == pytest.approx(0.0, abs=1e-12)
    assert beta == pytest.approx(1.0, abs=1e-3)


def test_estimate_constants_bounds(rng):
    p = CircuitParams.random(3, 2, seed=1)
    feats = rng.normal(size=(4, 3))
    beta, L = estimate_circuit_constants(p, feats, [0, 1], probe_count=4, seed=0)
    assert 0 <= L <= math.sqrt(p.num_params)
    sq = np.mean([(readout_jacobian(p, f)[:, [0, 1]] ** 2).sum(axis=0) for f in feats])
    assert L == pytest.approx(math.sqrt(sq), rel=1e-12)
    assert beta >= 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)
    with pytest.raises(ValueError):
        TrainConfig(lr_mode="theorem3", R=1.0)
    assert TrainConfig(epochs=100, lr_mode="theorem3", R=1, L=1, beta=0).step_size() == 0.1


def test_lr_zero_keeps_angles():
    model = HybridModel(identity_extractor(2), CircuitParams.random(2, 1, seed=3))
    final, trace = sgd_train(model, separable(20), None, TrainConfig(epochs=2, lr=0.0))
    assert np.array_equal(final.vqc.angles, model.vqc.angles)


def test_deterministic_trace():
    model = HybridModel(identity_extractor(2), CircuitParams.random(2, 1, seed=3))
    runs = [sgd_train(model, separable(30), separable(10, 1, "test"), TrainConfig(epochs=3, lr=0.05, seed=4))
            for _ in range(2)]
    assert runs[0][1].to_csv() == runs[1][1].to_csv()
    assert np.array_equal(runs[0][0].vqc.angles, runs[1][0].vqc.angles)


def test_trace_schema_and_frozen():
    model = HybridModel(identity_extractor(2), CircuitParams.random(2, 1, seed=3))
    before = model.extractor.checksum()
    final, trace = sgd_train(model, separable(30), separable(10, 1, "test"), TrainConfig(epochs=4, lr=0.05))
    lines = trace.to_csv().strip().split("\n")
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert [int(l.split(",")[0]) for l in lines[1:]] == [1, 2, 3, 4]
    assert final.extractor.checksum() == before == trace.extractor_checksum


def test_separable_task_learned():
    train = separable()
    ext = identity_extractor(2)
    # oracle: grid over one angle (RY on qubit 0) finds a perfect classifier
    best = 0.0
    for a in np.linspace(-np.pi, np.pi, 73):
        angles = np.zeros((1, 2, 3))
        angles[0, 0, 1] = a
        best = max(best, evaluate(HybridModel(ext, CircuitParams(2, 1, angles)), train)[1])
    assert best >= 0.9
    model = HybridModel(ext, CircuitParams.random(2, 1, seed=0))
    _, trace = sgd_train(model, train, None, TrainConfig(epochs=50, lr=0.05, seed=0))
    assert trace.final().train_acc >= 0.9


def test_theorem3_descent_and_clipping():
    model = HybridModel(identity_extractor(2), CircuitParams.random(2, 1, seed=2))
    cfg = TrainConfig(epochs=10, lr_mode="theorem3", R=0.5, L=1.0, beta=0.5)
    _, trace = sgd_train(model, separable(100), None, cfg)
    losses = trace.column("train_loss")
    assert losses[-1] <= losses[0]
    assert trace.step_size == theorem3_lr(0.5, 1.0, 0.5, 10)


def test_nonfinite_abort():
    bad = FrozenExtractor("mlp", 2, 2, {"W0": np.eye(2), "b0": np.zeros(2)}, config={"hidden": []})
    model = HybridModel(bad, CircuitParams.random(2, 1, seed=0))
    data = LabeledDataset(np.array([[np.nan, 0]], np.float32), np.array([0], np.uint8), "train", "clean", {})
    with pytest.raises(NumericalAbort):
        sgd_train(model, data, None, TrainConfig(epochs=1))


def test_decompose_identities():
    train, test = separable(40), separable(20, 1, "test")
    init = HybridModel(identity_extractor(2), CircuitParams.random(2, 1, seed=5))
    final, _ = sgd_train(init, train, test, TrainConfig(epochs=2, lr=0.05))
    d = decompose_errors(final, init, train, test, oracle_config=TrainConfig(epochs=4, lr=0.05))
    assert d.approx_proxy + d.est_proxy + d.opt_proxy == pytest.approx(d.test_loss, abs=1e-10)
    assert d.est_proxy == empirical_loss(final, test) - empirical_loss(final, train)
    assert d.opt_proxy >= 0
    assert "proxies" in d.as_dict()["label"]
    # final model is the oracle optimum
    d = decompose_errors(final, init, train, test, oracle_min=empirical_loss(final, train))
    assert d.opt_proxy == 0.0
    # identical train/test sets -> zero estimation gap
    d = decompose_errors(final, init, train, train, oracle_min=0.1)
    assert d.est_proxy == 0.0


def sweep_base(**kw):
    ext = identity_extractor(2)
    base = dict(train=separable(60), test=separable(20, 1, "test"), extractor_for=lambda U: ext,
                config=TrainConfig(epochs=2, lr=0.05), qubits=2, depth=1, init_seed=0)
    base.update(kw)
    return SweepBase(**base)


def test_singleton_sweep_matches_direct_run():
    base = sweep_base()
    rows = sweep("epochs", [2], base)
    _, trace = sgd_train(init_model(base.extractor_for(2), 1, 0), base.train, base.test, base.config)
    assert len(rows) == 1
    assert rows[0]["test_loss"] == trace.final().test_loss
    assert rows[0]["extractor_unchanged"]


def test_sweep_dedupe_and_empty():
    with pytest.warns(UserWarning):
        rows = sweep("target_size", [10, 20, 10], sweep_base())
    assert [r["value"] for r in rows] == [10, 20]
    assert [r["target_size"] for r in rows] == [10, 20]
    with pytest.raises(ValueError):
        sweep("epochs", [], sweep_base())
    with pytest.raises(ValueError):
        sweep("depth", [1], sweep_base())


def test_shots_sweep_deviation_shrinks():
    rows = sweep("shots", [16, 256, 4096], sweep_base(test=separable(200, 1, "test")))
    dev = [r["shots_loss_deviation"] for r in rows]
    assert dev[2] < dev[0]
