"""Qubit Hamiltonians for the random-coupling quench.

Conventions used throughout the package:

* Dense ``2**N x 2**N`` matrices in the computational (sigma^z) basis.
* Qubit ``j`` (0-based) is bit ``j`` of the basis-state integer, i.e. qubit 0
  is the least significant bit and the right-most Kronecker factor.
* ``sigma^+ = (sigma^x + i sigma^y) / 2 = |0><1|``.

The bare Hamiltonian ``H0 = sum_j (w_j / 2) sigma^y_j`` is diagonal in the
product basis of sigma^y eigenstates, which is built analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache, reduce

import numpy as np

from dynatherm._rng import box_muller, stream

MAX_QUBITS = 12
PAPER_FREQUENCIES = (0.28, 0.38, 0.63, 0.86)

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SPLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SMINUS = SPLUS.T.copy()

# sigma^y eigenvectors in the computational basis: index 0 = down (-1), 1 = up (+1)
Y_EIGVECS = np.array([[1, 1], [-1j, 1j]], dtype=complex) / np.sqrt(2)


@dataclass(frozen=True)
class QuenchSystem:
    """N non-degenerate qubits with frequencies in units of the coupling scale."""

    frequencies: tuple[float, ...]
    coupling_scale: float = 1.0

    def __post_init__(self):
        freqs = tuple(float(w) for w in self.frequencies)
        object.__setattr__(self, "frequencies", freqs)
        n = len(freqs)
        if n < 2:
            raise ValueError("need at least two qubits")
        if n > MAX_QUBITS:
            raise ValueError(f"N = {n} exceeds the dense-representation limit of {MAX_QUBITS} qubits")
        if any(not np.isfinite(w) or w <= 0 for w in freqs):
            raise ValueError("qubit frequencies must be finite and strictly positive")
        if len(set(freqs)) != n:
            raise ValueError("qubit frequencies must be pairwise distinct (non-degenerate qubits)")
        if not (np.isfinite(self.coupling_scale) and self.coupling_scale > 0):
            raise ValueError("coupling_scale must be positive")

    @property
    def n_qubits(self) -> int:
        return len(self.frequencies)

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    @property
    def n_pairs(self) -> int:
        n = self.n_qubits
        return n * (n - 1) // 2

    @classmethod
    def paper_instance(cls) -> "QuenchSystem":
        return cls(PAPER_FREQUENCIES, 1.0)

    def to_dict(self) -> dict:
        return {"frequencies": list(self.frequencies), "coupling_scale": self.coupling_scale}

    @classmethod
    def from_dict(cls, data: dict) -> "QuenchSystem":
        return cls(tuple(data["frequencies"]), float(data.get("coupling_scale", 1.0)))


@dataclass(frozen=True)
class CouplingSample:
    """One draw of the complex couplings J_{j1 j2}, j1 > j2.

    ``couplings`` is ordered as ``pairs`` (j1 ascending, then j2 ascending).
    """

    couplings: np.ndarray
    seed: int
    index: int = 0

    @property
    def n_qubits(self) -> int:
        # solve n(n-1)/2 = len
        return int(round((1 + np.sqrt(1 + 8 * len(self.couplings))) / 2))

    def matrix(self) -> np.ndarray:
        """Strictly lower-triangular N x N array with entry [j1, j2] = J_{j1 j2}."""
        n = self.n_qubits
        out = np.zeros((n, n), dtype=complex)
        for k, (j1, j2) in enumerate(coupling_pairs(n)):
            out[j1, j2] = self.couplings[k]
        return out


@dataclass(frozen=True)
class EnergyBasis:
    """Eigenbasis of H0: sigma^y product states sorted by energy.

    ``states[l]`` is the bit pattern of level ``l`` (bit j set = qubit j up),
    ``vectors[:, l]`` its computational-basis amplitudes.
    """

    energies: np.ndarray
    states: np.ndarray
    vectors: np.ndarray
    n_qubits: int
    _index: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def labels(self) -> list[str]:
        return [state_label(int(s), self.n_qubits) for s in self.states]

    def level_of(self, state: int | str) -> int:
        """Level index of a bit pattern or a label such as ``"dddd"``/``"↓↓↓↓"``."""
        if isinstance(state, str):
            state = parse_state_label(state, self.n_qubits)
        return self._index[int(state)]


def coupling_pairs(n: int) -> list[tuple[int, int]]:
    return [(j1, j2) for j1 in range(1, n) for j2 in range(j1)]


def state_label(bits: int, n: int) -> str:
    """Arrow label with qubit 0 first, e.g. ``↑↓↓↓`` for bits = 1."""
    return "".join("↑" if (bits >> j) & 1 else "↓" for j in range(n))


def parse_state_label(label: str, n: int) -> int:
    label = label.strip().strip("|⟩>")
    if len(label) != n:
        raise ValueError(f"state label {label!r} must have {n} characters")
    bits = 0
    for j, ch in enumerate(label):
        if ch in "↑uU1+":
            bits |= 1 << j
        elif ch not in "↓dD0-":
            raise ValueError(f"bad character {ch!r} in state label {label!r}")
    return bits


def embed(ops: dict[int, np.ndarray], n: int) -> np.ndarray:
    """Kronecker product placing ``ops[j]`` on qubit j and identity elsewhere."""
    factors = [ops.get(j, I2) for j in reversed(range(n))]
    return reduce(np.kron, factors)


def _check_dim(sys: QuenchSystem) -> None:
    if sys.n_qubits > MAX_QUBITS:
        raise ValueError(f"dimension overflow: N = {sys.n_qubits} > {MAX_QUBITS}")


def build_h0(sys: QuenchSystem) -> np.ndarray:
    """H0 = sum_j (w_j / 2) sigma^y_j as a dense matrix."""
    _check_dim(sys)
    n = sys.n_qubits
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for j, w in enumerate(sys.frequencies):
        h += 0.5 * w * sys.coupling_scale * embed({j: SY}, n)
    return h


def single_qubit_h0(frequency: float) -> np.ndarray:
    return 0.5 * frequency * SY


def sample_couplings(sys: QuenchSystem, seed: int, index: int = 0) -> CouplingSample:
    """Draw GUE couplings: Re and Im independent with variance J^2 / (2N)."""
    gen = stream(seed, index)
    z = box_muller(gen, sys.n_pairs)
    scale = sys.coupling_scale * np.sqrt(1.0 / (2 * sys.n_qubits))
    couplings = scale * (z[:, 0] + 1j * z[:, 1])
    return CouplingSample(couplings=couplings, seed=int(seed), index=int(index))


@lru_cache(maxsize=None)
def _hopping_operators(n: int) -> np.ndarray:
    """Stack of sigma^+_{j1} prod_{j2<k<j1} sigma^z_k sigma^-_{j2}, one per pair."""
    ops = []
    for j1, j2 in coupling_pairs(n):
        factors = {j1: SPLUS, j2: SMINUS}
        for k in range(j2 + 1, j1):
            factors[k] = SZ
        ops.append(embed(factors, n))
    arr = np.array(ops)
    arr.setflags(write=False)
    return arr


def build_interaction(sys: QuenchSystem, sample: CouplingSample) -> np.ndarray:
    """V = -sum_{j1>j2} J_{j1 j2} sigma^+_{j1} (Jordan-Wigner string) sigma^-_{j2} + h.c."""
    if len(sample.couplings) != sys.n_pairs:
        raise ValueError(
            f"coupling sample has {len(sample.couplings)} entries, system needs {sys.n_pairs}"
        )
    _check_dim(sys)
    ops = _hopping_operators(sys.n_qubits)
    v = -np.tensordot(sample.couplings, ops, axes=1)
    return v + v.conj().T


def build_hamiltonian(sys: QuenchSystem, sample: CouplingSample) -> np.ndarray:
    return build_h0(sys) + build_interaction(sys, sample)


def energy_basis(sys: QuenchSystem) -> EnergyBasis:
    n = sys.n_qubits
    w = np.asarray(sys.frequencies) * sys.coupling_scale
    bits = np.arange(sys.dim)
    signs = 2.0 * ((bits[:, None] >> np.arange(n)) & 1) - 1.0
    raw = signs @ (w / 2)
    # round before sorting so mathematically equal sums tie and fall back to the integer label
    order = np.lexsort((bits, np.round(raw, 12)))
    vectors = np.empty((sys.dim, sys.dim), dtype=complex)
    for col, b in enumerate(order):
        vectors[:, col] = reduce(np.kron, [Y_EIGVECS[:, (b >> j) & 1] for j in reversed(range(n))])
    index = {int(b): col for col, b in enumerate(order)}
    return EnergyBasis(energies=raw[order], states=order, vectors=vectors, n_qubits=n, _index=index)


def is_hermitian(a: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) < tol)


def level_spacings(h: np.ndarray) -> np.ndarray:
    if not is_hermitian(h, 1e-10):
        raise ValueError("level spacing requires a Hermitian matrix")
    return np.diff(np.linalg.eigvalsh(h))


def min_level_spacing(h: np.ndarray) -> float:
    """Smallest gap between adjacent sorted eigenvalues of a Hermitian matrix."""
    gaps = level_spacings(h)
    return float(max(gaps.min(), 0.0)) if len(gaps) else 0.0
