"""Dense density matrices and the linear maps acting on them.

The functions here operate on raw ``(2**n, 2**n)`` arrays and are linear, so
they also accept non-physical inputs such as Pauli operators (used to build
Pauli-transfer matrices). ``DensityMatrix`` adds the physical checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce
from itertools import product

import numpy as np

from dynatherm.circuit import PAULI_LABELS, Gate, apply_1q_left, cnot_permutation

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class DensityMatrix:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        object.__setattr__(self, "rho", rho)
        d = rho.shape[0]
        if rho.shape != (d, d) or d & (d - 1):
            raise ValueError(f"density matrix must be square with power-of-two size, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1) > 1e-10:
            raise ValueError(f"density matrix trace is {tr:.12g}, expected 1")
        lam = np.linalg.eigvalsh(rho)
        if lam.min() < -1e-9:
            raise ValueError(f"density matrix has eigenvalue {lam.min():.3e} < 0")

    @property
    def n_qubits(self) -> int:
        return self.rho.shape[0].bit_length() - 1

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def basis_state(cls, bits: int, n: int) -> "DensityMatrix":
        rho = np.zeros((1 << n, 1 << n), dtype=complex)
        rho[bits, bits] = 1
        return cls(rho)

    def probabilities(self) -> np.ndarray:
        p = np.clip(np.diagonal(self.rho).real, 0, None)
        return p / p.sum()


def apply_1q(rho: np.ndarray, g: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """G rho G^dagger for G on one qubit."""
    left = apply_1q_left(rho, g, qubit, n)
    return apply_1q_left(left.conj().T, g, qubit, n).conj().T


def apply_unitary(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    return u @ rho @ u.conj().T


def apply_cnot(rho: np.ndarray, control: int, target: int, n: int) -> np.ndarray:
    perm = cnot_permutation(n, control, target)
    return rho[perm][:, perm]


def apply_gate(rho: np.ndarray, gate: Gate, n: int, params=None) -> np.ndarray:
    if gate.kind == "CNOT":
        return apply_cnot(rho, *gate.qubits, n)
    return apply_1q(rho, gate.matrix(params), gate.qubits[0], n)


def depolarize_qubit(rho: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Replace one qubit by the maximally mixed state: I/2 (x) Tr_q rho."""
    a, b = 1 << (n - 1 - qubit), 1 << qubit
    t = rho.reshape(a, 2, b, a, 2, b)
    reduced = np.einsum("xiyziw->xyzw", t)
    out = np.einsum("xyzw,ij->xiyzjw", reduced, np.eye(2) / 2)
    return out.reshape(rho.shape)


def pauli_string(labels: str, qubits, n: int) -> np.ndarray:
    """Dense operator with Pauli ``labels[k]`` on ``qubits[k]``."""
    ops = dict(zip(qubits, labels))
    return reduce(np.kron, [PAULI[ops.get(q, "I")] for q in reversed(range(n))])


@lru_cache(maxsize=None)
def pauli_basis(n: int) -> tuple[str, ...]:
    """All n-qubit Pauli labels; character k acts on qubit k."""
    return tuple("".join(p) for p in product(PAULI_LABELS, repeat=n))


def pauli_transfer_matrix(channel, n: int) -> np.ndarray:
    """R_ij = Tr(P_i channel(P_j)) / 2**n over the ordered Pauli basis."""
    labels = pauli_basis(n)
    qubits = tuple(range(n))
    ops = [pauli_string(lab, qubits, n) for lab in labels]
    d = 1 << n
    out = np.empty((len(ops), len(ops)))
    for j, pj in enumerate(ops):
        image = channel(pj)
        for i, pi in enumerate(ops):
            out[i, j] = np.real(np.trace(pi @ image)) / d
    return out
