"""Parameter-shift gradients of circuit readouts and of the hybrid loss."""

from __future__ import annotations

import numpy as np

from .vqc import CircuitParams, expectations_multi, shift_readouts

SHIFT = np.pi / 2


def shifted_angle_sets(params: CircuitParams, shift: float) -> np.ndarray:
    """``(2P, depth, U, 3)``: rows ``2k`` / ``2k+1`` move parameter ``k`` by ``+shift`` / ``-shift``."""
    P = params.num_params
    flat = params.flat()
    sets = np.repeat(flat[None, :], 2 * P, axis=0)
    k = np.arange(P)
    sets[2 * k, k] += shift
    sets[2 * k + 1, k] -= shift
    return sets.reshape((2 * P,) + params.angles.shape)


def readout_jacobian(params: CircuitParams, features) -> np.ndarray:
    """``(P, U)`` matrix of d<Z_q>/d theta_k by the two-term shift rule (exact mode)."""
    if params.num_params == 0:
        return np.zeros((0, params.num_qubits))
    _, plus, minus = shift_readouts(params, features, SHIFT)
    return (plus - minus) / 2


def _check_obs(params: CircuitParams, qubit_obs: int) -> None:
    if not 0 <= qubit_obs < params.num_qubits:
        raise IndexError(f"observable qubit {qubit_obs} out of range for {params.num_qubits} qubits")


def param_shift_grad(params: CircuitParams, features, qubit_obs: int) -> np.ndarray:
    _check_obs(params, qubit_obs)
    return readout_jacobian(params, features)[:, qubit_obs]


def finite_diff_grad(params: CircuitParams, features, qubit_obs: int, h: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    _check_obs(params, qubit_obs)
    if not 1e-8 <= h <= 1e-2:
        raise ValueError(f"finite-difference step must be in [1e-8, 1e-2], got {h}")
    if params.num_params == 0:
        return np.zeros(0)
    _, plus, minus = shift_readouts(params, features, h)
    return (plus[:, qubit_obs] - minus[:, qubit_obs]) / (2 * h)


def softmax_residual(logits: np.ndarray, label: int) -> np.ndarray:
    """d CE / d logits = softmax(logits) - onehot(label)."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    p = e / e.sum()
    p[label] -= 1.0
    return p


def loss_and_grad(params: CircuitParams, features, label: int, readout=(0, 1)):
    """Cross-entropy of one sample and its gradient wrt the circuit angles.

    The unshifted circuit and all 2P shifted circuits are evaluated in one
    compiled pass.
    """
    from .hybrid import softmax_cross_entropy

    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    readout = list(readout)
    if params.num_params == 0:
        z = expectations_multi(params.angles[None], features)[0, readout]
        return softmax_cross_entropy(z, label), np.zeros(0)
    base, plus, minus = shift_readouts(params, features, SHIFT)
    z = base[readout]
    jac = (plus[:, readout] - minus[:, readout]) / 2
    return softmax_cross_entropy(z, label), jac @ softmax_residual(z, label)


def loss_grad(model, sample) -> np.ndarray:
    """Gradient of the sample loss wrt ``model.vqc``; the extractor gets none."""
    x, label = sample
    features = model.features(x)
    return loss_and_grad(model.vqc, features, int(label), model.readout_qubits)[1]
