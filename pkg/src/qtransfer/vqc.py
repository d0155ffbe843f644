"""Variational circuit: sigmoid tensor-product encoding, CNOT-ring layers, Z readout."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import qsim
from ._kernels import evolve_inplace, fused_gates, shifted_readouts
from .qsim import Exact, MeasurementMode, Shots, Statevector

_NO_PERM = np.zeros(0, dtype=np.int64)

# Rows of at most this many complex amplitudes are simulated in one batch.
_BATCH_BUDGET = 1 << 22


@dataclass(frozen=True)
class CircuitParams:
    """Trainable angles ``angles[layer, qubit] = (alpha, beta, gamma)``.

    ``alpha``/``beta``/``gamma`` drive the RX/RY/RZ rotations of a layer.
    """

    num_qubits: int
    depth: int
    angles: np.ndarray = field(repr=False)

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64)
        if angles.shape != (self.depth, self.num_qubits, 3):
            raise ValueError(
                f"angles shape {angles.shape} != ({self.depth}, {self.num_qubits}, 3)"
            )
        if not np.all(np.isfinite(angles)):
            raise ValueError("circuit angles must be finite")
        angles = angles.copy()
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @property
    def num_params(self) -> int:
        return 3 * self.num_qubits * self.depth

    def flat(self) -> np.ndarray:
        return self.angles.reshape(-1).copy()

    def with_flat(self, values: np.ndarray) -> "CircuitParams":
        return CircuitParams(self.num_qubits, self.depth, np.asarray(values).reshape(self.angles.shape))

    @classmethod
    def zeros(cls, num_qubits: int, depth: int) -> "CircuitParams":
        return cls(num_qubits, depth, np.zeros((depth, num_qubits, 3)))

    @classmethod
    def random(cls, num_qubits: int, depth: int, seed: int, scale: float = np.pi) -> "CircuitParams":
        """Angles drawn uniformly from ``[-scale, scale)``."""
        rng = qsim.make_rng(seed, 0xC1C)
        return cls(num_qubits, depth, rng.uniform(-scale, scale, size=(depth, num_qubits, 3)))


def sigmoid_phi(x):
    """Logistic sigmoid, stable for large ``|x|``; scalar in, scalar out."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return float(out) if out.ndim == 0 else out


def encoding_angles(features) -> np.ndarray:
    """RY angles ``pi * phi(x)``; with half-angle gates these give cos/sin(pi/2 phi)."""
    return np.pi * sigmoid_phi(np.asarray(features, dtype=np.float64))


def encode_tpe(features) -> Statevector:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1 or features.size < 1:
        raise ValueError(f"features must be a non-empty vector, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("features must be finite")
    state = qsim.new_zero_state(features.size)
    for q, angle in enumerate(encoding_angles(features)):
        state = qsim.apply_rotation(state, "Y", q, float(angle))
    return state


@lru_cache(maxsize=None)
def ring_permutation(num_qubits: int) -> np.ndarray:
    """Composite index map of the CNOT ring ``i -> (i+1) mod U``, applied in order i = 0..U-1."""
    perm = np.arange(2**num_qubits)
    if num_qubits == 1:
        return perm
    for i in range(num_qubits):
        perm = perm[qsim.cnot_permutation(num_qubits, i, (i + 1) % num_qubits)]
    perm.setflags(write=False)
    return perm


def apply_pqc_layer(state: Statevector, layer_angles) -> Statevector:
    U = state.num_qubits
    layer_angles = np.asarray(layer_angles, dtype=np.float64)
    if layer_angles.shape != (U, 3):
        raise ValueError(f"layer angles shape {layer_angles.shape} != ({U}, 3)")
    if U > 1:
        for i in range(U):
            state = qsim.apply_cnot(state, i, (i + 1) % U)
    for q in range(U):
        for axis, angle in zip("XYZ", layer_angles[q]):
            state = qsim.apply_rotation(state, axis, q, float(angle))
    return state


def vqc_forward(params: CircuitParams, features, mode: MeasurementMode = Exact()) -> np.ndarray:
    """Readout ``<Z_i>`` for every qubit.  Returns a length-U vector in [-1, 1]."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (params.num_qubits,):
        raise ValueError(f"expected {params.num_qubits} features, got shape {features.shape}")
    return expectations(params, features[None, :], mode)[0]


# ---------------------------------------------------------------- batched engine


def layer_gates(angles: np.ndarray) -> np.ndarray:
    """Fused per-qubit gate RZ(gamma) RY(beta) RX(alpha); shape ``angles.shape[:-1] + (2, 2)``."""
    rx = qsim.rotation_matrix("X", angles[..., 0])
    ry = qsim.rotation_matrix("Y", angles[..., 1])
    rz = qsim.rotation_matrix("Z", angles[..., 2])
    return rz @ ry @ rx


def encode_batch(features: np.ndarray) -> np.ndarray:
    """Product states for a ``(B, U)`` feature matrix; returns ``(B, 2**U)``."""
    B, U = features.shape
    half = encoding_angles(features) / 2
    local = np.stack([np.cos(half), np.sin(half)], axis=-1)  # (B, U, 2)
    out = np.ones((B, 1), dtype=np.complex128)
    for q in reversed(range(U)):
        out = (out[:, :, None] * local[:, q, None, :]).reshape(B, -1)
    return out


def evolve_batch(states: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Run all PQC layers.  ``angles`` is ``(depth, U, 3)`` shared or ``(B, depth, U, 3)`` per row."""
    U = angles.shape[-2]
    per_row = angles.ndim == 4
    gates = fused_gates(np.ascontiguousarray(angles if per_row else angles[None], dtype=np.float64))
    perm = ring_permutation(U) if U > 1 else _NO_PERM
    out = np.array(states, dtype=np.complex128, order="C", copy=True)
    evolve_inplace(out, gates, perm, per_row)
    return out


def evolve_batch_numpy(states: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Pure-numpy twin of :func:`evolve_batch`, kept as a cross-check."""
    U = angles.shape[-2]
    depth = angles.shape[-3]
    gates = layer_gates(angles)
    perm = ring_permutation(U)
    for layer in range(depth):
        if U > 1:
            states = states[:, perm]
        for q in range(U):
            g = gates[layer, q] if gates.ndim == 4 else gates[:, layer, q]
            states = qsim.apply_1q_batch(states, q, g)
    return states


def exact_expectations_batch(states: np.ndarray, num_qubits: int) -> np.ndarray:
    probs = states.real**2 + states.imag**2
    return np.clip(probs @ _z_signs(num_qubits), -1.0, 1.0)


@lru_cache(maxsize=None)
def _z_signs(num_qubits: int) -> np.ndarray:
    signs = qsim.z_signs(num_qubits)
    signs.setflags(write=False)
    return signs


def _rows_per_chunk(num_qubits: int) -> int:
    return max(1, _BATCH_BUDGET >> num_qubits)


def expectations(params: CircuitParams, features: np.ndarray, mode: MeasurementMode = Exact()) -> np.ndarray:
    """``(B, U)`` readout for a batch of feature rows sharing one parameter set.

    In shot mode, qubit ``q`` draws from the stream ``make_rng(seed, q)`` in
    row order, so row 0 matches :func:`qsim.sample_expectation_z`.
    """
    features = np.asarray(features, dtype=np.float64)
    U = params.num_qubits
    if features.ndim != 2 or features.shape[1] != U:
        raise ValueError(f"expected (B, {U}) features, got {features.shape}")
    chunk = _rows_per_chunk(U)
    out = np.empty(features.shape, dtype=np.float64)
    for start in range(0, features.shape[0], chunk):
        rows = slice(start, start + chunk)
        states = evolve_batch(encode_batch(features[rows]), params.angles)
        out[rows] = exact_expectations_batch(states, U)
    if isinstance(mode, Shots):
        for q in range(U):
            out[:, q] = qsim.sample_from_expectation(out[:, q], mode.M, qsim.make_rng(mode.seed, q))
    return out


def expectations_multi(angle_sets: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Exact readout of one feature vector under many parameter sets.

    ``angle_sets`` is ``(K, depth, U, 3)``; returns ``(K, U)``.
    """
    K = angle_sets.shape[0]
    U = angle_sets.shape[-2]
    base = encode_batch(np.asarray(features, dtype=np.float64)[None, :])
    chunk = _rows_per_chunk(U)
    out = np.empty((K, U), dtype=np.float64)
    for start in range(0, K, chunk):
        sets = angle_sets[start:start + chunk]
        states = np.repeat(base, sets.shape[0], axis=0)
        out[start:start + chunk] = exact_expectations_batch(evolve_batch(states, sets), U)
    return out


def shift_readouts(params: CircuitParams, features, shift: float):
    """Exact readout at ``theta`` and at ``theta +/- shift`` along every coordinate.

    Returns ``(base, plus, minus)`` with ``base`` of shape ``(U,)`` and
    ``plus``/``minus`` of shape ``(P, U)`` in flat parameter order.
    """
    U, depth = params.num_qubits, params.depth
    state0 = encode_batch(np.asarray(features, dtype=np.float64)[None, :])[0]
    gates = fused_gates(params.angles[None])[0]
    moved = np.repeat(params.angles[:, :, None, None, :], 3, axis=2).repeat(2, axis=3)
    for axis in range(3):
        moved[:, :, axis, 0, axis] += shift
        moved[:, :, axis, 1, axis] -= shift
    shift_gates = fused_gates(moved.reshape(-1, 1, 1, 3)).reshape(depth, U, 3, 2, 2, 2)
    perm = ring_permutation(U) if U > 1 else _NO_PERM
    base, shifted = shifted_readouts(state0, gates, shift_gates, perm)
    shifted = np.clip(shifted.reshape(-1, 2, U), -1.0, 1.0)
    return np.clip(base, -1.0, 1.0), shifted[:, 0], shifted[:, 1]
