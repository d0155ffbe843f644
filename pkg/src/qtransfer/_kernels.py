"""Compiled inner loop for batched layer evolution (the SGD hot path)."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def evolve_inplace(states, gates, perm, per_row):
    """Apply ``depth`` layers of (CNOT ring permutation, per-qubit 2x2 gates).

    ``states``: (B, 2**U) complex128, overwritten.
    ``gates``: (G, depth, U, 2, 2) with G == B when ``per_row`` else G == 1.
    ``perm``: ring permutation, or an empty array for a single qubit.
    """
    B, dim = states.shape
    depth = gates.shape[1]
    U = gates.shape[2]
    tmp = np.empty(dim, dtype=np.complex128)
    for b in range(B):
        gi = b if per_row else 0
        row = states[b]
        for layer in range(depth):
            if perm.shape[0] > 0:
                for i in range(dim):
                    tmp[i] = row[perm[i]]
                for i in range(dim):
                    row[i] = tmp[i]
            for q in range(U):
                g00 = gates[gi, layer, q, 0, 0]
                g01 = gates[gi, layer, q, 0, 1]
                g10 = gates[gi, layer, q, 1, 0]
                g11 = gates[gi, layer, q, 1, 1]
                step = 1 << q
                for hi in range(0, dim, 2 * step):
                    for lo in range(step):
                        i0 = hi + lo
                        i1 = i0 + step
                        a0 = row[i0]
                        a1 = row[i1]
                        row[i0] = g00 * a0 + g01 * a1
                        row[i1] = g10 * a0 + g11 * a1


@njit(cache=True)
def fused_gates(angles):
    """RZ(g) RY(b) RX(a) for every ``(..., 3)`` angle triple of a (G, depth, U, 3) array."""
    G, depth, U, _ = angles.shape
    out = np.empty((G, depth, U, 2, 2), dtype=np.complex128)
    for g in range(G):
        for layer in range(depth):
            for q in range(U):
                a = angles[g, layer, q, 0] / 2
                b = angles[g, layer, q, 1] / 2
                c = angles[g, layer, q, 2] / 2
                ca, sa = np.cos(a), np.sin(a)
                cb, sb = np.cos(b), np.sin(b)
                # RY(b) RX(a)
                m00 = cb * ca + 1j * sb * sa
                m01 = -1j * cb * sa - sb * ca
                m10 = sb * ca - 1j * cb * sa
                m11 = -1j * sb * sa + cb * ca
                zm = np.cos(c) - 1j * np.sin(c)
                zp = np.cos(c) + 1j * np.sin(c)
                out[g, layer, q, 0, 0] = zm * m00
                out[g, layer, q, 0, 1] = zm * m01
                out[g, layer, q, 1, 0] = zp * m10
                out[g, layer, q, 1, 1] = zp * m11
    return out


@njit(cache=True)
def _apply_gate(row, q, g):
    dim = row.shape[0]
    step = 1 << q
    g00, g01, g10, g11 = g[0, 0], g[0, 1], g[1, 0], g[1, 1]
    for hi in range(0, dim, 2 * step):
        for lo in range(step):
            i0 = hi + lo
            i1 = i0 + step
            a0 = row[i0]
            a1 = row[i1]
            row[i0] = g00 * a0 + g01 * a1
            row[i1] = g10 * a0 + g11 * a1


@njit(cache=True)
def _apply_ring(row, perm, tmp):
    if perm.shape[0] == 0:
        return
    for i in range(row.shape[0]):
        tmp[i] = row[perm[i]]
    for i in range(row.shape[0]):
        row[i] = tmp[i]


@njit(cache=True)
def _z_expect(row, U, out):
    for q in range(U):
        out[q] = 0.0
    for i in range(row.shape[0]):
        p = row[i].real * row[i].real + row[i].imag * row[i].imag
        for q in range(U):
            if (i >> q) & 1:
                out[q] -= p
            else:
                out[q] += p


@njit(cache=True)
def shifted_readouts(state0, gates, shift_gates, perm):
    """Z readout of the unshifted circuit and of every single-angle shift.

    ``gates``: (depth, U, 2, 2) fused layer gates.
    ``shift_gates``: (depth, U, 3, 2, 2, 2), the fused gate of (layer, qubit)
    with angle ``axis`` moved by +shift (index 0) or -shift (index 1).
    Returns ``(base (U,), shifted (depth, U, 3, 2, U))``.

    Rotations inside one layer act on distinct qubits and commute, so each
    shift reuses the layer state with every other qubit already rotated.
    """
    depth, U = gates.shape[0], gates.shape[1]
    dim = state0.shape[0]
    tmp = np.empty(dim, dtype=np.complex128)
    s = state0.copy()
    partial = np.empty(dim, dtype=np.complex128)
    work = np.empty(dim, dtype=np.complex128)
    shifted = np.zeros((depth, U, 3, 2, U))
    base = np.zeros(U)
    for layer in range(depth):
        _apply_ring(s, perm, tmp)
        for q in range(U):
            partial[:] = s
            for q2 in range(U):
                if q2 != q:
                    _apply_gate(partial, q2, gates[layer, q2])
            for axis in range(3):
                for sign in range(2):
                    work[:] = partial
                    _apply_gate(work, q, shift_gates[layer, q, axis, sign])
                    for later in range(layer + 1, depth):
                        _apply_ring(work, perm, tmp)
                        for q3 in range(U):
                            _apply_gate(work, q3, gates[later, q3])
                    _z_expect(work, U, shifted[layer, q, axis, sign])
        for q in range(U):
            _apply_gate(s, q, gates[layer, q])
    _z_expect(s, U, base)
    return base, shifted
