"""Dense statevector simulation for small parameterized circuits.

Conventions
-----------
* Qubit 0 is the most significant bit of the basis index, so ``|10>`` on two
  qubits is basis index 2.
* Rotations are ``R_P(t) = exp(-i t P / 2)``; in particular
  ``RY(t)|0> = cos(t/2)|0> + sin(t/2)|1>``.

Circuits are flat lists of ops.  A rotation op is ``(axis, qubit, column)``
where ``column`` indexes a per-sample angle matrix of shape ``(B, P)``; a
column may be referenced by several ops (shared parameters), and the
gradient routines sum the contributions of every occurrence.  An entangler
is ``("cnot", control, target)``.

All simulation routines are batched over a leading sample axis.  Gradients
use the adjoint method: one forward pass, then a backward sweep that undoes
each gate on both the state and the cotangent state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

MAX_QUBITS = 12

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class Statevector:
    """Amplitudes of a ``num_qubits``-qubit pure state."""

    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2**self.num_qubits,):
            raise InvalidArgumentError(
                f"expected {2**self.num_qubits} amplitudes, got shape {amps.shape}"
            )
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))


@dataclass(frozen=True)
class CircuitSpec:
    """Shape of the generator circuit: qubits, layers and embedding angles."""

    num_qubits: int
    num_layers: int
    embedding_angles: np.ndarray

    def __post_init__(self):
        _check_num_qubits(self.num_qubits)
        if self.num_layers < 1:
            raise InvalidArgumentError(f"num_layers must be >= 1, got {self.num_layers}")
        angles = np.asarray(self.embedding_angles, dtype=float).reshape(-1)
        if angles.shape != (self.num_qubits,):
            raise InvalidArgumentError(
                f"need {self.num_qubits} embedding angles, got {angles.size}"
            )
        if not np.all(np.isfinite(angles)):
            raise InvalidArgumentError("embedding angles must be finite")
        object.__setattr__(self, "embedding_angles", angles)


def _check_num_qubits(d):
    if not isinstance(d, (int, np.integer)) or not 1 <= d <= MAX_QUBITS:
        raise InvalidArgumentError(f"qubit count must be in [1, {MAX_QUBITS}], got {d!r}")


def _check_qubit(qubit, d):
    if not isinstance(qubit, (int, np.integer)) or not 0 <= qubit < d:
        raise InvalidArgumentError(f"qubit index {qubit!r} out of range for {d} qubits")


# ---------------------------------------------------------------------------
# batched kernels; states have shape (B, 2**d)


def rotation_matrices(axis: str, angles) -> np.ndarray:
    """Stack of 2x2 rotation matrices, shape ``(B, 2, 2)``, one per angle."""
    t = np.asarray(angles, dtype=float).reshape(-1) / 2.0
    c, s = np.cos(t), np.sin(t)
    out = np.zeros((t.size, 2, 2), dtype=complex)
    if axis == "x":
        out[:, 0, 0] = c
        out[:, 1, 1] = c
        out[:, 0, 1] = -1j * s
        out[:, 1, 0] = -1j * s
    elif axis == "y":
        out[:, 0, 0] = c
        out[:, 1, 1] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
    elif axis == "z":
        out[:, 0, 0] = np.exp(-1j * t)
        out[:, 1, 1] = np.exp(1j * t)
    else:
        raise InvalidArgumentError(f"unknown rotation axis {axis!r}")
    return out


def _apply_1q(states, mats, qubit, d):
    b = states.shape[0]
    view = states.reshape(b, 2**qubit, 2, 2 ** (d - qubit - 1))
    if mats.ndim == 2:
        out = np.einsum("ij,bajc->baic", mats, view)
    else:
        out = np.einsum("bij,bajc->baic", mats, view)
    return out.reshape(b, 2**d)


def _apply_cnot(states, control, target, d):
    b = states.shape[0]
    out = states.reshape((b,) + (2,) * d).copy()
    idx0 = [slice(None)] * (d + 1)
    idx1 = [slice(None)] * (d + 1)
    idx0[control + 1] = idx1[control + 1] = 1
    idx0[target + 1], idx1[target + 1] = 0, 1
    idx0, idx1 = tuple(idx0), tuple(idx1)
    out[idx0], out[idx1] = out[idx1].copy(), out[idx0].copy()
    return out.reshape(b, 2**d)


def _z_signs(d):
    """``signs[q, i]`` is +1 when qubit q of basis index i is 0, else -1."""
    idx = np.arange(2**d)
    return np.stack([1 - 2 * ((idx >> (d - 1 - q)) & 1) for q in range(d)]).astype(float)


def z_signs(d: int) -> np.ndarray:
    """Public alias: ``(d, 2^d)`` eigenvalue table of the ``Z_q`` observables."""
    return _z_signs(d)


def cnot_ring_matrix(d: int) -> np.ndarray:
    """Permutation matrix of the ring CNOT(0,1) CNOT(1,2) ... CNOT(d-1,0), applied in that order."""
    states = np.eye(2**d, dtype=complex)
    if d > 1:
        for q in range(d):
            states = _apply_cnot(states, q, (q + 1) % d, d)
    # row i of ``states`` is the image of basis vector i
    return states.T.copy()


def _validate_ops(ops, d, n_cols):
    for op in ops:
        kind = op[0]
        if kind == "cnot":
            _, c, t = op
            _check_qubit(c, d)
            _check_qubit(t, d)
            if c == t:
                raise InvalidArgumentError("CNOT control and target must differ")
        elif kind in ("x", "y", "z"):
            _check_qubit(op[1], d)
            if not 0 <= op[2] < n_cols:
                raise InvalidArgumentError(f"op {op} references missing angle column")
        else:
            raise InvalidArgumentError(f"unknown op {op!r}")


def simulate(ops, d: int, angles) -> np.ndarray:
    """Run ``ops`` from ``|0...0>`` for every row of ``angles``; returns ``(B, 2**d)``."""
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    _validate_ops(ops, d, angles.shape[1])
    b = angles.shape[0]
    states = np.zeros((b, 2**d), dtype=complex)
    states[:, 0] = 1.0
    for op in ops:
        if op[0] == "cnot":
            states = _apply_cnot(states, op[1], op[2], d)
        else:
            states = _apply_1q(states, rotation_matrices(op[0], angles[:, op[2]]), op[1], d)
    return states


def expvals_z(states, d: int) -> np.ndarray:
    """Pauli-Z expectation of every qubit, shape ``(B, d)``, clamped to [-1, 1]."""
    probs = np.abs(states) ** 2
    out = probs @ _z_signs(d).T
    return np.clip(out, -1.0, 1.0)


def expval_vjp(ops, d: int, angles, cotangent) -> tuple[np.ndarray, np.ndarray]:
    """Expectations and the vector-Jacobian product with respect to ``angles``.

    Returns ``(expvals, grad)`` where ``grad[b, k]`` is the derivative of
    ``sum_q cotangent[b, q] * <Z_q>_b`` with respect to ``angles[b, k]``.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    cot = np.atleast_2d(np.asarray(cotangent, dtype=float))
    psi = simulate(ops, d, angles)
    ev = expvals_z(psi, d)
    lam = psi * (cot @ _z_signs(d))
    grad = np.zeros_like(angles)
    phi = psi
    for op in reversed(ops):
        if op[0] == "cnot":
            phi = _apply_cnot(phi, op[1], op[2], d)
            lam = _apply_cnot(lam, op[1], op[2], d)
            continue
        axis, q, col = op
        # d/dt exp(-i t P/2) = (-i/2) P exp(-i t P/2)
        dphi = _apply_1q(phi, _PAULI[axis], q, d)
        grad[:, col] += np.real(np.sum(np.conj(lam) * dphi, axis=1) * -1j)
        inv = rotation_matrices(axis, -angles[:, col])
        phi = _apply_1q(phi, inv, q, d)
        lam = _apply_1q(lam, inv, q, d)
    return ev, grad


def expval_jacobian(ops, d: int, angles) -> tuple[np.ndarray, np.ndarray]:
    """Full Jacobian ``(B, d, P)`` of the Z expectations, via one VJP per qubit."""
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    b, p = angles.shape
    tiled = np.repeat(angles, d, axis=0)
    cot = np.tile(np.eye(d), (b, 1))
    ev, grad = expval_vjp(ops, d, tiled, cot)
    return ev[::d], grad.reshape(b, d, p)


# ---------------------------------------------------------------------------
# single-state API


def init_state(d: int) -> Statevector:
    _check_num_qubits(d)
    amps = np.zeros(2**d, dtype=complex)
    amps[0] = 1.0
    return Statevector(d, amps)


def apply_rotation(state: Statevector, axis: str, qubit: int, angle: float) -> Statevector:
    d = state.num_qubits
    _check_qubit(qubit, d)
    if not np.isfinite(angle):
        raise InvalidArgumentError("rotation angle must be finite")
    axis = axis.lower()
    mats = rotation_matrices(axis, [angle])
    amps = _apply_1q(state.amplitudes[None, :], mats, qubit, d)[0]
    return Statevector(d, amps)


def apply_cnot(state: Statevector, control: int, target: int) -> Statevector:
    d = state.num_qubits
    _check_qubit(control, d)
    _check_qubit(target, d)
    if control == target:
        raise InvalidArgumentError("CNOT control and target must differ")
    return Statevector(d, _apply_cnot(state.amplitudes[None, :], control, target, d)[0])


def expval_z(state: Statevector, qubit: int) -> float:
    _check_qubit(qubit, state.num_qubits)
    return float(expvals_z(state.amplitudes[None, :], state.num_qubits)[0, qubit])


# ---------------------------------------------------------------------------
# generator circuit


def generator_ops(d: int, n_layers: int) -> list[tuple]:
    """Op list for the embed -> (rotations, CNOT ring)^L template.

    Angle columns ``0..d-1`` hold the embedding angles and column
    ``d + 3*q + c`` holds ``theta[q, c]``; the theta columns are reused by
    every layer.
    """
    ops: list[tuple] = [("y", q, q) for q in range(d)]
    ring = [("cnot", q, (q + 1) % d) for q in range(d)] if d > 1 else []
    for _ in range(n_layers):
        for q in range(d):
            base = d + 3 * q
            ops += [("x", q, base), ("y", q, base + 1), ("z", q, base + 2)]
        ops += ring
    return ops


def _generator_angles(d, embed_angles, theta):
    embed_angles = np.atleast_2d(np.asarray(embed_angles, dtype=float))
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 2:
        theta = theta[None]
    if theta.shape[1:] != (d, 3):
        raise InvalidArgumentError(f"theta must have shape ({d}, 3), got {theta.shape[1:]}")
    if embed_angles.shape[1] != d:
        raise InvalidArgumentError(f"need {d} embedding angles per sample")
    if not np.all(np.isfinite(theta)):
        raise InvalidArgumentError("theta must be finite")
    b = max(embed_angles.shape[0], theta.shape[0])
    embed_angles = np.broadcast_to(embed_angles, (b, d))
    theta = np.broadcast_to(theta, (b, d, 3)).reshape(b, 3 * d)
    return np.concatenate([embed_angles, theta], axis=1)


def generator_forward(d: int, n_layers: int, embed_angles, theta) -> np.ndarray:
    """Batched generator outputs ``(B, d)`` for embedding angles ``(B, d)`` and theta ``(B, d, 3)``."""
    angles = _generator_angles(d, embed_angles, theta)
    return expvals_z(simulate(generator_ops(d, n_layers), d, angles), d)


def generator_vjp(d: int, n_layers: int, embed_angles, theta, cotangent):
    """Outputs ``(B, d)`` and ``d(cotangent . outputs)/d theta`` of shape ``(B, d, 3)``."""
    angles = _generator_angles(d, embed_angles, theta)
    ev, grad = expval_vjp(generator_ops(d, n_layers), d, angles, cotangent)
    return ev, grad[:, d:].reshape(-1, d, 3)


def run_generator_circuit(spec: CircuitSpec, theta) -> np.ndarray:
    """Z readout of every qubit after embedding and ``spec.num_layers`` layers."""
    d = spec.num_qubits
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d, 3):
        raise InvalidArgumentError(f"theta must have shape ({d}, 3), got {theta.shape}")
    return generator_forward(d, spec.num_layers, spec.embedding_angles[None], theta)[0]


def generator_gradient(spec: CircuitSpec, theta) -> np.ndarray:
    """Jacobian ``J[q, r, c] = d<Z_q>/d theta[r, c]``, shape ``(d, d, 3)``."""
    d = spec.num_qubits
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d, 3):
        raise InvalidArgumentError(f"theta must have shape ({d}, 3), got {theta.shape}")
    angles = _generator_angles(d, spec.embedding_angles[None], theta)
    _, jac = expval_jacobian(generator_ops(d, spec.num_layers), d, angles)
    return jac[0, :, d:].reshape(d, d, 3)
