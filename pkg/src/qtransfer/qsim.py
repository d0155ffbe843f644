"""Dense statevector simulator.

Conventions used throughout the package:

* little-endian ordering: qubit ``q`` is bit ``q`` of the basis index, so for
  two qubits the amplitude vector is ordered ``|q1 q0> = 00, 01, 10, 11``;
* half-angle rotations ``R_A(theta) = exp(-i theta A / 2)``.

The public functions operate on :class:`Statevector` objects and never mutate
their input.  The ``*_batch`` helpers work on raw ``(B, 2**U)`` arrays and are
what the circuit code uses on the hot path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

MAX_QUBITS = 24

Axis = Literal["X", "Y", "Z"]


class CapacityError(ValueError):
    """Requested register is outside the supported qubit range."""


class TopologyError(ValueError):
    """Invalid gate wiring, e.g. a CNOT whose control equals its target."""


@dataclass(frozen=True)
class Statevector:
    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        if self.amplitudes.shape != (2**self.num_qubits,):
            raise ValueError(
                f"amplitude vector of length {self.amplitudes.shape} does not "
                f"match {self.num_qubits} qubits"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class Exact:
    """Exact expectation values read directly from the amplitudes."""


@dataclass(frozen=True)
class Shots:
    """``M`` projective measurements drawn from a seeded generator."""

    M: int
    seed: int = 0

    def __post_init__(self):
        if int(self.M) < 1:
            raise ValueError(f"shot count must be >= 1, got {self.M}")


MeasurementMode = Union[Exact, Shots]


def make_rng(*key: int) -> np.random.Generator:
    """Philox4x32 counter-based generator keyed by a tuple of integers.

    The key is expanded with :class:`numpy.random.SeedSequence`, so
    ``make_rng(seed, i)`` gives independent, reproducible child streams.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def _check_qubit(qubit: int, num_qubits: int) -> None:
    if not 0 <= qubit < num_qubits:
        raise IndexError(f"qubit index {qubit} out of range for {num_qubits} qubits")


def new_zero_state(num_qubits: int) -> Statevector:
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise CapacityError(f"num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits}")
    amps = np.zeros(2**num_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return Statevector(amps, num_qubits)


def rotation_matrix(axis: Axis, angle) -> np.ndarray:
    """2x2 matrix of ``exp(-i angle A / 2)``; broadcasts over array ``angle``.

    Returns shape ``angle.shape + (2, 2)``.
    """
    angle = np.asarray(angle, dtype=np.float64)
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    out = np.zeros(angle.shape + (2, 2), dtype=np.complex128)
    if axis == "X":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
    elif axis == "Y":
        out[..., 0, 0] = c
        out[..., 1, 1] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
    elif axis == "Z":
        out[..., 0, 0] = c - 1j * s
        out[..., 1, 1] = c + 1j * s
    else:
        raise ValueError(f"unknown rotation axis {axis!r}")
    return out


def apply_1q_batch(states: np.ndarray, qubit: int, gates: np.ndarray) -> np.ndarray:
    """Apply per-row 2x2 ``gates`` (shape ``(B, 2, 2)`` or ``(2, 2)``) to ``qubit``."""
    B, dim = states.shape
    view = states.reshape(B, dim >> (qubit + 1), 2, 1 << qubit)
    if gates.ndim == 2:
        out = np.einsum("ij,bhjl->bhil", gates, view)
    else:
        out = np.einsum("bij,bhjl->bhil", gates, view)
    return out.reshape(B, dim)


def cnot_permutation(num_qubits: int, control: int, target: int) -> np.ndarray:
    """Index map ``p`` such that ``new = old[p]`` realises CNOT(control, target)."""
    idx = np.arange(2**num_qubits)
    flip = (idx >> control) & 1
    return idx ^ (flip << target)


def apply_rotation(state: Statevector, axis: Axis, qubit: int, angle: float) -> Statevector:
    _check_qubit(qubit, state.num_qubits)
    if not np.isfinite(angle):
        raise ValueError(f"rotation angle must be finite, got {angle}")
    out = apply_1q_batch(state.amplitudes[None, :], qubit, rotation_matrix(axis, angle))
    return Statevector(out[0], state.num_qubits)


def apply_cnot(state: Statevector, control: int, target: int) -> Statevector:
    _check_qubit(control, state.num_qubits)
    _check_qubit(target, state.num_qubits)
    if control == target:
        raise TopologyError(f"CNOT control and target are both qubit {control}")
    perm = cnot_permutation(state.num_qubits, control, target)
    return Statevector(state.amplitudes[perm], state.num_qubits)


def z_signs(num_qubits: int) -> np.ndarray:
    """``(2**U, U)`` table of Pauli-Z eigenvalues, +1 where bit q is 0."""
    idx = np.arange(2**num_qubits)[:, None]
    bits = (idx >> np.arange(num_qubits)[None, :]) & 1
    return 1.0 - 2.0 * bits


def expectation_z(state: Statevector, qubit: int) -> float:
    _check_qubit(qubit, state.num_qubits)
    probs = state.probabilities()
    bit = (np.arange(probs.size) >> qubit) & 1
    value = probs[bit == 0].sum() - probs[bit == 1].sum()
    return float(np.clip(value, -1.0, 1.0))


def sample_from_expectation(exact: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """Average of ``M`` +/-1 outcomes for each entry of ``exact``.

    The number of +1 outcomes is drawn as Binomial(M, (1 + <Z>) / 2), which is
    the distribution of the count of M independent Bernoulli shots.
    """
    p_plus = np.clip((1.0 + np.asarray(exact, dtype=np.float64)) / 2.0, 0.0, 1.0)
    k = rng.binomial(int(M), p_plus)
    return (2.0 * k - M) / M


def sample_expectation_z(state: Statevector, qubit: int, mode: MeasurementMode) -> float:
    if not isinstance(mode, Shots):
        raise TypeError("sample_expectation_z needs a Shots measurement mode")
    exact = expectation_z(state, qubit)
    rng = make_rng(mode.seed, qubit)
    return float(sample_from_expectation(np.array([exact]), mode.M, rng)[0])


def dense_rotation(num_qubits: int, axis: Axis, qubit: int, angle: float) -> np.ndarray:
    """Full ``2**U x 2**U`` unitary of a single-qubit rotation (test oracle)."""
    mats = [np.eye(2, dtype=np.complex128)] * num_qubits
    mats[qubit] = rotation_matrix(axis, angle)
    out = np.ones((1, 1), dtype=np.complex128)
    # kron puts its first argument on the most significant bit
    for q in reversed(range(num_qubits)):
        out = np.kron(out, mats[q])
    return out


def dense_cnot(num_qubits: int, control: int, target: int) -> np.ndarray:
    dim = 2**num_qubits
    out = np.zeros((dim, dim), dtype=np.complex128)
    for i in range(dim):
        j = i ^ (((i >> control) & 1) << target)
        out[j, i] = 1.0
    return out
