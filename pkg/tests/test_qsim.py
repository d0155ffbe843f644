import numpy as np
import pytest
from hypothesis import given, strategies as st

from qtransfer import qsim
from qtransfer.qsim import (
    CapacityError,
    Shots,
    Statevector,
    TopologyError,
    apply_cnot,
    apply_rotation,
    dense_cnot,
    dense_rotation,
    expectation_z,
    new_zero_state,
    sample_expectation_z,
)


def basis(U, index):
    amps = np.zeros(2**U, dtype=complex)
    amps[index] = 1
    return Statevector(amps, U)


def plus_state():
    return Statevector(np.array([1, 1], dtype=complex) / np.sqrt(2), 1)


def test_zero_state():
    assert np.array_equal(new_zero_state(1).amplitudes, [1, 0])
    assert np.array_equal(new_zero_state(2).amplitudes, [1, 0, 0, 0])


def test_capacity():
    with pytest.raises(CapacityError):
        new_zero_state(25)
    with pytest.raises(CapacityError):
        new_zero_state(0)


def test_ry_pi_flips():
    out = apply_rotation(new_zero_state(1), "Y", 0, np.pi)
    assert np.allclose(out.amplitudes, [0, 1], atol=1e-15)


def test_rz_keeps_zero_state():
    for theta in (0.3, 1.7, -2.2):
        out = apply_rotation(new_zero_state(1), "Z", 0, theta)
        assert abs(abs(out.amplitudes[0]) - 1) < 1e-15
        assert expectation_z(out, 0) == pytest.approx(1.0, abs=1e-15)


def test_ry_half_pi():
    out = apply_rotation(new_zero_state(1), "Y", 0, np.pi / 2)
    c = np.cos(np.pi / 4)
    assert np.allclose(out.amplitudes, [c, c], atol=1e-15)


def test_rotation_errors():
    with pytest.raises(IndexError):
        apply_rotation(new_zero_state(2), "X", 2, 0.1)
    with pytest.raises(ValueError):
        apply_rotation(new_zero_state(1), "X", 0, np.inf)


def test_cnot_truth_table():
    # control qubit 0 set (basis index 1) -> target qubit 1 flips (index 3)
    out = apply_cnot(basis(2, 1), 0, 1)
    assert np.array_equal(out.amplitudes, basis(2, 3).amplitudes)
    assert np.array_equal(apply_cnot(basis(2, 0), 0, 1).amplitudes, basis(2, 0).amplitudes)


def test_cnot_bell():
    s = Statevector(np.array([1, 1, 0, 0], dtype=complex) / np.sqrt(2), 2)
    out = apply_cnot(s, 0, 1)
    assert np.allclose(out.amplitudes, np.array([1, 0, 0, 1]) / np.sqrt(2))


def test_cnot_same_qubit():
    with pytest.raises(TopologyError):
        apply_cnot(new_zero_state(2), 1, 1)


def test_expectation_examples():
    assert expectation_z(new_zero_state(1), 0) == 1.0
    assert expectation_z(basis(1, 1), 0) == -1.0
    assert expectation_z(plus_state(), 0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(IndexError):
        expectation_z(new_zero_state(1), 1)


def test_shots_deterministic_outcomes():
    for seed in range(5):
        assert sample_expectation_z(basis(1, 1), 0, Shots(37, seed)) == -1.0
    assert sample_expectation_z(new_zero_state(1), 0, Shots(1, 3)) == 1.0


def test_shots_validation():
    with pytest.raises(ValueError):
        Shots(0)


def test_shots_plus_state_concentration():
    hits = sum(abs(sample_expectation_z(plus_state(), 0, Shots(10000, s))) <= 0.05 for s in range(100))
    assert hits >= 99


def test_shots_reproducible():
    s = apply_rotation(new_zero_state(1), "Y", 0, 1.1)
    a = sample_expectation_z(s, 0, Shots(500, 42))
    b = sample_expectation_z(s, 0, Shots(500, 42))
    assert a == b


def test_shot_values_on_grid():
    s = apply_rotation(new_zero_state(1), "Y", 0, 0.9)
    M = 64
    v = sample_expectation_z(s, 0, Shots(M, 5))
    k = (v * M + M) / 2
    assert k == pytest.approx(round(k), abs=1e-9)


def test_shot_estimator_unbiased():
    s = apply_rotation(new_zero_state(1), "Y", 0, 1.234)
    exact = expectation_z(s, 0)
    M = 100
    mean = np.mean([sample_expectation_z(s, 0, Shots(M, seed)) for seed in range(1000)])
    assert abs(mean - exact) <= 4 / np.sqrt(1000 * M)


def random_circuit(rng, U, n_gates):
    ops = []
    for _ in range(n_gates):
        if U > 1 and rng.random() < 0.3:
            c, t = rng.choice(U, size=2, replace=False)
            ops.append(("cnot", int(c), int(t)))
        else:
            ops.append(("rot", "XYZ"[rng.integers(3)], int(rng.integers(U)), float(rng.uniform(-4, 4))))
    return ops


def run_ops(state, ops):
    for op in ops:
        state = apply_cnot(state, op[1], op[2]) if op[0] == "cnot" else apply_rotation(state, op[1], op[2], op[3])
    return state


def test_norm_conservation(rng):
    for _ in range(1000):
        U = int(rng.integers(1, 11))
        state = run_ops(new_zero_state(U), random_circuit(rng, U, 12))
        assert abs(state.norm() - 1) <= 1e-10
        for q in range(U):
            assert -1 <= expectation_z(state, q) <= 1


def test_dense_unitary_oracle(rng):
    for _ in range(200):
        U = int(rng.integers(1, 4))
        amps = rng.normal(size=2**U) + 1j * rng.normal(size=2**U)
        state = Statevector(amps / np.linalg.norm(amps), U)
        if U > 1 and rng.random() < 0.4:
            c, t = (int(v) for v in rng.choice(U, size=2, replace=False))
            got = apply_cnot(state, c, t).amplitudes
            want = dense_cnot(U, c, t) @ state.amplitudes
        else:
            axis, q, theta = "XYZ"[rng.integers(3)], int(rng.integers(U)), float(rng.uniform(-6, 6))
            got = apply_rotation(state, axis, q, theta).amplitudes
            want = dense_rotation(U, axis, q, theta) @ state.amplitudes
        assert np.max(np.abs(got - want)) <= 1e-12


def test_dense_rotation_matches_expm():
    # exp(-i theta A / 2) via eigen-decomposition of the Pauli matrix
    paulis = {"X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1, -1])}
    for axis, P in paulis.items():
        w, v = np.linalg.eigh(P.astype(complex))
        for theta in (0.4, -2.5):
            expm = v @ np.diag(np.exp(-1j * theta * w / 2)) @ v.conj().T
            assert np.allclose(qsim.rotation_matrix(axis, theta), expm, atol=1e-14)


def test_input_state_not_mutated():
    s = plus_state()
    before = s.amplitudes.copy()
    apply_rotation(s, "X", 0, 0.7)
    assert np.array_equal(s.amplitudes, before)


@given(st.floats(-10, 10), st.integers(0, 2), st.sampled_from("XYZ"))
def test_rotation_unitarity_property(theta, q, axis):
    state = run_ops(new_zero_state(3), [("rot", "Y", 0, 0.3), ("cnot", 0, 2), ("rot", "X", 1, 1.1)])
    out = apply_rotation(state, axis, q, theta)
    assert abs(out.norm() - 1) <= 1e-12
    back = apply_rotation(out, axis, q, -theta)
    assert np.allclose(back.amplitudes, state.amplitudes, atol=1e-12)


@given(st.integers(1, 2**31 - 1), st.integers(1, 2000), st.floats(-1, 1))
def test_sample_from_expectation_range(seed, M, z):
    out = qsim.sample_from_expectation(np.array([z]), M, qsim.make_rng(seed))
    assert -1 <= out[0] <= 1
